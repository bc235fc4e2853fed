//! Descent on the orthogonal group with Cayley retractions and Armijo
//! backtracking.

use nalgebra::DMatrix;

use crate::error::{MicaError, Result};
use crate::objective::CrossObjective;
use crate::ortho::{cayley_retract, cayley_skew, OrthoMatrix};

/// How the Euclidean gradient of the objective is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientMode {
    /// Closed-form gradient of the MDD sums (one `O(n log n)` pass per term).
    #[default]
    Analytic,
    /// Central finite differences over every matrix entry.
    FiniteDifference,
}

pub(crate) const TAU_INIT: f64 = 1.0;
pub(crate) const TAU_MIN: f64 = 1e-8;
const TAU_MAX: f64 = 1e4;
const ARMIJO_C1: f64 = 1e-4;

#[derive(Debug, Clone, Copy)]
pub(crate) struct DescentSettings {
    pub max_iter: usize,
    pub tol_obj: f64,
    pub gradient: GradientMode,
    pub fd_step: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Descent {
    pub q: OrthoMatrix,
    pub value: f64,
    pub trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

pub(crate) fn euclid_gradient(
    obj: &CrossObjective,
    q: &DMatrix<f64>,
    settings: &DescentSettings,
) -> Result<DMatrix<f64>> {
    match settings.gradient {
        GradientMode::Analytic => Ok(obj.value_and_grad(q)?.1),
        GradientMode::FiniteDifference => {
            let p = q.nrows();
            let h = settings.fd_step;
            let mut g = DMatrix::zeros(p, p);
            let mut probe = q.clone();
            for j in 0..p {
                for i in 0..p {
                    let orig = probe[(i, j)];
                    probe[(i, j)] = orig + h;
                    let up = obj.value(&probe)?;
                    probe[(i, j)] = orig - h;
                    let down = obj.value(&probe)?;
                    probe[(i, j)] = orig;
                    g[(i, j)] = (up - down) / (2.0 * h);
                }
            }
            Ok(g)
        }
    }
}

/// Barzilai-Borwein step-size memory for one search direction family.
#[derive(Debug, Default, Clone)]
struct StepMemory {
    prev: Option<(DMatrix<f64>, DMatrix<f64>)>,
    count: usize,
}

impl StepMemory {
    /// Initial trial step for the Armijo search: `TAU_INIT` on the first
    /// iteration, afterwards the alternating BB step.
    fn initial_tau(&mut self, q: &DMatrix<f64>, dir: &DMatrix<f64>) -> f64 {
        let tau = match &self.prev {
            None => TAU_INIT,
            Some((q_prev, dir_prev)) => {
                let s = q - q_prev;
                let yv = dir - dir_prev;
                let sy = s.dot(&yv).abs();
                let tau = if self.count % 2 == 1 {
                    s.norm_squared() / sy
                } else {
                    sy / yv.norm_squared()
                };
                if tau.is_finite() && tau > 0.0 {
                    tau.clamp(TAU_MIN, TAU_MAX)
                } else {
                    TAU_INIT
                }
            }
        };
        self.prev = Some((q.clone(), dir.clone()));
        self.count += 1;
        tau
    }
}

/// Backtracking search along the Cayley curve for skew direction `w`.
/// Returns `None` when no step above `TAU_MIN` satisfies the Armijo rule.
fn armijo(
    obj: &CrossObjective,
    q: &OrthoMatrix,
    f: f64,
    w: &DMatrix<f64>,
    tau0: f64,
) -> Result<Option<(OrthoMatrix, f64)>> {
    // d/dtau f(Y(tau)) at 0 equals -||W||^2 / 2.
    let slope = 0.5 * w.norm_squared();
    if slope == 0.0 {
        return Ok(None);
    }
    let mut tau = tau0;
    while tau >= TAU_MIN {
        match cayley_retract(q, w, tau) {
            Ok(cand) => {
                let fc = obj.value(cand.matrix())?;
                if fc <= f - ARMIJO_C1 * tau * slope {
                    return Ok(Some((cand, fc)));
                }
            }
            Err(MicaError::SingularStep) => {}
            Err(e) => return Err(e),
        }
        tau *= 0.5;
    }
    Ok(None)
}

fn relative_gain(before: f64, after: f64) -> f64 {
    (before - after) / before.abs().max(f64::MIN_POSITIVE)
}

/// Full-matrix Riemannian descent from `q0`.
pub(crate) fn cayley_descent(
    obj: &CrossObjective,
    q0: OrthoMatrix,
    f0: f64,
    settings: &DescentSettings,
) -> Result<Descent> {
    let mut q = q0;
    let mut f = f0;
    let mut trace = vec![f];
    let mut memory = StepMemory::default();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < settings.max_iter {
        iterations += 1;
        let g = euclid_gradient(obj, q.matrix(), settings)?;
        let w = cayley_skew(q.matrix(), &g);
        let dir = &w * q.matrix();
        let tau0 = memory.initial_tau(q.matrix(), &dir);
        match armijo(obj, &q, f, &w, tau0)? {
            Some((next, fnext)) => {
                let gain = relative_gain(f, fnext);
                q = next;
                f = fnext;
                trace.push(f);
                if gain < settings.tol_obj {
                    converged = true;
                    break;
                }
            }
            None => {
                converged = true;
                break;
            }
        }
    }
    Ok(Descent {
        q,
        value: f,
        trace,
        converged,
        iterations,
    })
}

/// Keep only the rotations that mix `block` with the remaining columns:
/// in the frame of `q`, entries `(a, b)` with exactly one index in `block`.
fn restrict_to_block(q: &DMatrix<f64>, w: &DMatrix<f64>, in_block: &[bool]) -> DMatrix<f64> {
    let mut omega = q.transpose() * w * q;
    let p = omega.nrows();
    for a in 0..p {
        for b in 0..p {
            if in_block[a] == in_block[b] {
                omega[(a, b)] = 0.0;
            }
        }
    }
    q * omega * q.transpose()
}

/// Block-coordinate descent: each sweep takes one Armijo step per block,
/// restricted to rotations that mix that block with the rest. Stops when a
/// whole sweep improves the objective by less than `tol_obj` (relative).
pub(crate) fn block_cayley_descent(
    obj: &CrossObjective,
    q0: OrthoMatrix,
    f0: f64,
    blocks: &[Vec<usize>],
    settings: &DescentSettings,
) -> Result<Descent> {
    let p = q0.dim();
    let masks: Vec<Vec<bool>> = blocks
        .iter()
        .map(|b| {
            let mut m = vec![false; p];
            for &k in b {
                m[k] = true;
            }
            m
        })
        .collect();
    let mut memories = vec![StepMemory::default(); blocks.len()];
    let mut q = q0;
    let mut f = f0;
    let mut trace = vec![f];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < settings.max_iter {
        iterations += 1;
        let sweep_start = f;
        let mut moved = false;
        for (mask, memory) in masks.iter().zip(memories.iter_mut()) {
            let g = euclid_gradient(obj, q.matrix(), settings)?;
            let w = restrict_to_block(q.matrix(), &cayley_skew(q.matrix(), &g), mask);
            let dir = &w * q.matrix();
            let tau0 = memory.initial_tau(q.matrix(), &dir);
            if let Some((next, fnext)) = armijo(obj, &q, f, &w, tau0)? {
                q = next;
                f = fnext;
                moved = true;
            }
        }
        trace.push(f);
        if !moved || relative_gain(sweep_start, f) < settings.tol_obj {
            converged = true;
            break;
        }
    }
    Ok(Descent {
        q,
        value: f,
        trace,
        converged,
        iterations,
    })
}

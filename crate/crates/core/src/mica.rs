//! MICA estimation: multi-start minimisation of `S_h0` over the orthogonal
//! group, and a sequential (one column at a time) variant for larger `p`.

use log::warn;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{MicaError, Result};
use crate::groups::GroupStructure;
use crate::lhs::latin_hypercube;
use crate::mdd::{abs_form_sorted, centre};
use crate::numeric::{argsort, pairwise_sum, pairwise_sum_by};
use crate::objective::{objective_s, CrossObjective};
use crate::optim::{cayley_descent, DescentSettings, TAU_INIT, TAU_MIN};
use crate::ortho::{angle_count, givens_matrix, reorthonormalize, OrthoMatrix};
use crate::series::SeriesMatrix;

pub use crate::optim::GradientMode;

/// Settings shared by the MICA and group MICA estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct MicaConfig {
    pub h0: usize,
    pub n_starts: usize,
    pub max_iter: usize,
    pub tol_obj: f64,
    pub fd_step: f64,
    pub seed: u64,
    pub gradient: GradientMode,
}

impl Default for MicaConfig {
    fn default() -> Self {
        Self {
            h0: 1,
            n_starts: 200,
            max_iter: 500,
            tol_obj: 1e-8,
            fd_step: 1e-6,
            seed: 0,
            gradient: GradientMode::Analytic,
        }
    }
}

impl MicaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h0 == 0 {
            return Err(MicaError::Config("h0 must be at least 1".into()));
        }
        if self.n_starts == 0 {
            return Err(MicaError::Config("n_starts must be at least 1".into()));
        }
        if !(self.tol_obj > 0.0 && self.fd_step > 0.0) {
            return Err(MicaError::Config("tolerances must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn descent(&self) -> DescentSettings {
        DescentSettings {
            max_iter: self.max_iter,
            tol_obj: self.tol_obj,
            gradient: self.gradient,
            fd_step: self.fd_step,
        }
    }
}

/// Output of the estimators.
#[derive(Debug, Clone)]
pub struct EstimationResult {
    /// Estimated separation matrix; components are `Y A_hat`.
    pub a_hat: OrthoMatrix,
    pub components: SeriesMatrix,
    pub objective: f64,
    /// Group structure the objective was evaluated under.
    pub groups: GroupStructure,
    /// Index of the winning multi-start point.
    pub start_index: usize,
    /// Objective after each accepted optimizer iteration, starting with the
    /// initial value.
    pub trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl EstimationResult {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn assemble(
        y: &SeriesMatrix,
        a_hat: OrthoMatrix,
        objective: f64,
        groups: GroupStructure,
        start_index: usize,
        trace: Vec<f64>,
        converged: bool,
        iterations: usize,
    ) -> Result<Self> {
        let components = y.project(a_hat.matrix())?;
        Ok(Self {
            a_hat,
            components,
            objective,
            groups,
            start_index,
            trace,
            converged,
            iterations,
        })
    }
}

fn warn_small_sample(y: &SeriesMatrix) {
    if y.nrows() < 10 * y.ncols() {
        warn!(
            "sample size n = {} is below 10p = {}; estimates may be unreliable",
            y.nrows(),
            10 * y.ncols()
        );
    }
}

/// Index of the smallest value, lowest index on ties.
fn argmin_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Joint MICA estimate: evaluate `S_h0` at Latin hypercube Givens-angle
/// starts, then descend from the best one with Cayley steps.
pub fn estimate_mica(y: &SeriesMatrix, cfg: &MicaConfig) -> Result<EstimationResult> {
    cfg.validate()?;
    let p = y.ncols();
    warn_small_sample(y);
    let obj = CrossObjective::mica(y, cfg.h0)?;
    if p == 1 {
        let a = OrthoMatrix::identity(1);
        return EstimationResult::assemble(y, a, 0.0, GroupStructure::singletons(1), 0, vec![0.0], true, 0);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let starts = latin_hypercube(cfg.n_starts, angle_count(p), 0.0, std::f64::consts::PI, &mut rng);
    let values: Vec<f64> = starts
        .par_iter()
        .map(|theta| obj.value(&givens_matrix(p, theta)))
        .collect::<Result<_>>()?;
    let best = argmin_first(&values);

    let q0 = OrthoMatrix::from_iterate(givens_matrix(p, &starts[best]));
    let run = cayley_descent(&obj, q0, values[best], &cfg.descent())?;
    EstimationResult::assemble(
        y,
        run.q,
        run.value,
        GroupStructure::singletons(p),
        best,
        run.trace,
        run.converged,
        run.iterations,
    )
}

/// Unit vector in `R^d` from `d - 1` hyperspherical angles.
fn sphere_point(angles: &[f64]) -> Vec<f64> {
    let d = angles.len() + 1;
    let mut u = vec![0.0; d];
    let mut sin_prod = 1.0;
    for (k, &a) in angles.iter().enumerate() {
        u[k] = sin_prod * a.cos();
        sin_prod *= a.sin();
    }
    u[d - 1] = sin_prod;
    u
}

/// The last `d - 1` columns of the Householder reflection sending `e_1` to
/// `±u`: an orthonormal basis of the complement of unit `u`.
fn householder_complement(u: &[f64]) -> DMatrix<f64> {
    let d = u.len();
    let sign = if u[0] >= 0.0 { 1.0 } else { -1.0 };
    let mut v = u.to_vec();
    v[0] += sign;
    let vv: f64 = v.iter().map(|x| x * x).sum();
    DMatrix::from_fn(d, d - 1, |i, j| {
        let col = j + 1;
        let delta = if i == col { 1.0 } else { 0.0 };
        delta - 2.0 * v[i] * v[col] / vv
    })
}

/// Partial objective for one sequential stage on the complement data `z`
/// (`n x d`). For the candidate component `x = z u` and remainder `R`
/// spanning the complement of `u`:
/// `sum_h [MDD^2(x_t | R_{t-h}) + sum_l MDD^2(R_{l,t} | x_{t-h})]`.
///
/// Neither term needs an explicit basis for the remainder: pairwise
/// distances satisfy `|R_s - R_t|^2 = |z_s - z_t|^2 - (x_s - x_t)^2`, and the
/// second sum equals `sum_l MDD^2(z_l | x) - MDD^2(x | x)` by rotation
/// invariance of the inner products of the centred rows.
struct StageObjective<'a> {
    z: &'a DMatrix<f64>,
    dist_sq: DMatrix<f64>,
    h0: usize,
}

impl<'a> StageObjective<'a> {
    fn new(z: &'a DMatrix<f64>, h0: usize) -> Self {
        let n = z.nrows();
        let mut dist_sq = DMatrix::zeros(n, n);
        for t in 0..n {
            for s in (t + 1)..n {
                let mut acc = 0.0;
                for k in 0..z.ncols() {
                    let diff = z[(s, k)] - z[(t, k)];
                    acc += diff * diff;
                }
                dist_sq[(s, t)] = acc;
                dist_sq[(t, s)] = acc;
            }
        }
        Self { z, dist_sq, h0 }
    }

    fn value(&self, angles: &[f64]) -> Result<f64> {
        let u = sphere_point(angles);
        let x: Vec<f64> = (self.z * nalgebra::DVector::from_column_slice(&u)).iter().copied().collect();
        let n = x.len();
        let range = x.iter().copied().fold(f64::NEG_INFINITY, f64::max) - x.iter().copied().fold(f64::INFINITY, f64::min);
        if range == 0.0 {
            return Err(MicaError::DegenerateProjection(0));
        }
        let d = self.z.ncols();
        let mut terms = Vec::with_capacity(2 * (self.h0 + 1));
        for h in 0..=self.h0 {
            let m = n - h;
            let mf = m as f64;
            // x_t against the remainder at t - h
            let mut c: Vec<f64> = x[h..].to_vec();
            centre(&mut c);
            let rows: Vec<f64> = (0..m)
                .map(|t| {
                    c[t] * pairwise_sum_by(m, |s| {
                        let dx = x[s] - x[t];
                        c[s] * (self.dist_sq[(s, t)] - dx * dx).max(0.0).sqrt()
                    })
                })
                .collect();
            terms.push(-pairwise_sum(&rows) / (mf * mf));

            // remainder coordinates at t against x_{t-h}
            let cond = &x[..m];
            let order = argsort(cond);
            let mut dbuf = vec![0.0; m];
            let mut inner = Vec::with_capacity(d + 1);
            for l in 0..d {
                let mut c: Vec<f64> = self.z.column(l).as_slice()[h..].to_vec();
                centre(&mut c);
                inner.push(abs_form_sorted(cond, &c, &order, &mut dbuf, None));
            }
            let mut cx: Vec<f64> = x[h..].to_vec();
            centre(&mut cx);
            inner.push(-abs_form_sorted(cond, &cx, &order, &mut dbuf, None));
            terms.push(-pairwise_sum(&inner) / (mf * mf));
        }
        Ok(pairwise_sum(&terms))
    }
}

struct AngleDescent {
    angles: Vec<f64>,
    trace: Vec<f64>,
    converged: bool,
    iterations: usize,
}

/// Gradient descent in angle coordinates with central finite differences
/// and Armijo backtracking.
fn angle_descent(
    stage: &StageObjective,
    start: Vec<f64>,
    f0: f64,
    cfg: &MicaConfig,
) -> Result<AngleDescent> {
    let mut theta = start;
    let mut f = f0;
    let mut trace = vec![f];
    let mut converged = false;
    let mut iterations = 0;
    let h = cfg.fd_step;
    while iterations < cfg.max_iter {
        iterations += 1;
        let mut grad = vec![0.0; theta.len()];
        let mut probe = theta.clone();
        for k in 0..theta.len() {
            probe[k] = theta[k] + h;
            let up = stage.value(&probe)?;
            probe[k] = theta[k] - h;
            let down = stage.value(&probe)?;
            probe[k] = theta[k];
            grad[k] = (up - down) / (2.0 * h);
        }
        let gg: f64 = grad.iter().map(|g| g * g).sum();
        if gg == 0.0 {
            converged = true;
            break;
        }
        let mut tau = TAU_INIT;
        let mut accepted = None;
        while tau >= TAU_MIN {
            let cand: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - tau * g).collect();
            let fc = stage.value(&cand)?;
            if fc <= f - 1e-4 * tau * gg {
                accepted = Some((cand, fc));
                break;
            }
            tau *= 0.5;
        }
        let Some((cand, fc)) = accepted else {
            converged = true;
            break;
        };
        let gain = (f - fc) / f.abs().max(f64::MIN_POSITIVE);
        theta = cand;
        f = fc;
        trace.push(f);
        if gain < cfg.tol_obj {
            converged = true;
            break;
        }
    }
    Ok(AngleDescent {
        angles: theta,
        trace,
        converged,
        iterations,
    })
}

/// Sequential MICA: columns are estimated one at a time, each as a unit
/// vector in the orthogonal complement of those already found. For `p <= 2`
/// this is the joint estimator.
///
/// The trace concatenates the per-stage partial-objective traces; the
/// reported objective is `S_h0` of the assembled matrix.
pub fn estimate_mica_sequential(y: &SeriesMatrix, cfg: &MicaConfig) -> Result<EstimationResult> {
    cfg.validate()?;
    let p = y.ncols();
    if p <= 2 {
        return estimate_mica(y, cfg);
    }
    warn_small_sample(y);
    if y.nrows() <= cfg.h0 + 2 {
        return Err(MicaError::SampleTooSmall(format!(
            "need n > h0 + 2, got n = {} and h0 = {}",
            y.nrows(),
            cfg.h0
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut basis = DMatrix::<f64>::identity(p, p);
    let mut columns: Vec<nalgebra::DVector<f64>> = Vec::with_capacity(p);
    let mut trace = Vec::new();
    let mut converged = true;
    let mut iterations = 0;
    let mut first_start = 0;

    for stage_index in 0..p - 1 {
        let d = p - stage_index;
        let z = y.matrix() * &basis;
        let stage = StageObjective::new(&z, cfg.h0);
        let starts = latin_hypercube(cfg.n_starts, d - 1, 0.0, std::f64::consts::PI, &mut rng);
        let values: Vec<f64> = starts.par_iter().map(|a| stage.value(a)).collect::<Result<_>>()?;
        let best = argmin_first(&values);
        if stage_index == 0 {
            first_start = best;
        }
        let run = angle_descent(&stage, starts[best].clone(), values[best], cfg)?;
        converged &= run.converged;
        iterations += run.iterations;
        trace.extend(run.trace);

        let u = sphere_point(&run.angles);
        columns.push(&basis * nalgebra::DVector::from_column_slice(&u));
        basis = &basis * householder_complement(&u);
    }
    columns.push(basis.column(0).into_owned());

    let a = reorthonormalize(&DMatrix::from_columns(&columns));
    let a_hat = OrthoMatrix::from_iterate(a);
    let objective = objective_s(&a_hat, y, cfg.h0)?;
    EstimationResult::assemble(
        y,
        a_hat,
        objective,
        GroupStructure::singletons(p),
        first_start,
        trace,
        converged,
        iterations,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdd::make_lagged;
    use crate::ortho::{d_distance_scaled, haar_random};
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn ar1_sources(n: usize, phis: &[f64], seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = phis.len();
        let mut x = DMatrix::zeros(n, p);
        for (k, &phi) in phis.iter().enumerate() {
            let mut prev = 0.0;
            for t in 0..(n + 200) {
                let e: f64 = StandardNormal.sample(&mut rng);
                prev = phi * prev + e;
                if t >= 200 {
                    x[(t - 200, k)] = prev;
                }
            }
        }
        x
    }

    #[test]
    fn sphere_and_householder() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in 2..6 {
            let angles: Vec<f64> = (0..d - 1).map(|_| rng.random::<f64>() * 3.0).collect();
            let u = sphere_point(&angles);
            assert!((u.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
            let h = householder_complement(&u);
            let uv = nalgebra::DVector::from_column_slice(&u);
            assert!((h.transpose() * &uv).amax() < 1e-12);
            assert!((h.transpose() * &h - DMatrix::identity(d - 1, d - 1)).amax() < 1e-12);
        }
    }

    #[test]
    fn stage_objective_matches_explicit_remainder() {
        let z = ar1_sources(60, &[0.6, -0.4, 0.2, 0.5], 9);
        let h0 = 2;
        let stage = StageObjective::new(&z, h0);
        let angles = [0.7, 2.1, 1.3];
        let u = sphere_point(&angles);
        let x = &z * nalgebra::DVector::from_column_slice(&u);
        let r = &z * householder_complement(&u);
        let mut full = DMatrix::zeros(z.nrows(), 4);
        full.set_column(0, &x);
        for l in 0..3 {
            full.set_column(l + 1, &r.column(l));
        }
        let series = SeriesMatrix::new(full).unwrap();
        let mut oracle = 0.0;
        for h in 0..=h0 {
            let pair = make_lagged(&series, 0, &[1, 2, 3], h).unwrap();
            oracle += pair.mdd_sq().unwrap();
            for l in 1..4 {
                let pair = make_lagged(&series, l, &[0], h).unwrap();
                oracle += pair.mdd_sq().unwrap();
            }
        }
        let got = stage.value(&angles).unwrap();
        assert!((got - oracle).abs() <= 1e-10 * oracle.abs().max(1e-12), "{got} vs {oracle}");
    }

    #[test]
    fn recovers_sources_and_is_deterministic() {
        let x = ar1_sources(400, &[0.8, 0.5, -0.6], 1);
        let a = haar_random(3, 2);
        let y = SeriesMatrix::new(&x * a.matrix().transpose()).unwrap();
        let cfg = MicaConfig {
            n_starts: 30,
            seed: 5,
            ..MicaConfig::default()
        };
        let r1 = estimate_mica(&y, &cfg).unwrap();
        let r2 = estimate_mica(&y, &cfg).unwrap();
        assert_eq!(r1.a_hat.matrix(), r2.a_hat.matrix());
        assert!(r1.trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(r1.objective >= -1e-12);
        assert!(d_distance_scaled(&a, &r1.a_hat).unwrap() < 0.05);
        let diff = r1.components.matrix() - y.matrix() * r1.a_hat.matrix();
        assert!(diff.amax() < 1e-12);
    }

    #[test]
    fn no_worse_than_truth_when_already_separated() {
        let x = ar1_sources(300, &[0.7, -0.5], 4);
        let y = SeriesMatrix::new(x).unwrap();
        let cfg = MicaConfig {
            n_starts: 20,
            ..MicaConfig::default()
        };
        let r = estimate_mica(&y, &cfg).unwrap();
        let at_identity = objective_s(&OrthoMatrix::identity(2), &y, 1).unwrap();
        assert!(r.objective <= at_identity + 1e-10);
    }

    #[test]
    fn finite_difference_mode_agrees() {
        let x = ar1_sources(250, &[0.8, -0.6, 0.4], 8);
        let a = haar_random(3, 6);
        let y = SeriesMatrix::new(&x * a.matrix().transpose()).unwrap();
        let base = MicaConfig {
            n_starts: 20,
            seed: 2,
            ..MicaConfig::default()
        };
        let fd = MicaConfig {
            gradient: GradientMode::FiniteDifference,
            ..base.clone()
        };
        let ra = estimate_mica(&y, &base).unwrap();
        let rf = estimate_mica(&y, &fd).unwrap();
        assert!(d_distance_scaled(&ra.a_hat, &rf.a_hat).unwrap() < 1e-3);
    }

    #[test]
    fn sequential_recovers_and_delegates() {
        let x = ar1_sources(400, &[0.8, 0.5, -0.6, 0.3], 11);
        let a = haar_random(4, 12);
        let y = SeriesMatrix::new(&x * a.matrix().transpose()).unwrap();
        let cfg = MicaConfig {
            n_starts: 20,
            seed: 3,
            ..MicaConfig::default()
        };
        let r = estimate_mica_sequential(&y, &cfg).unwrap();
        assert!(d_distance_scaled(&a, &r.a_hat).unwrap() < 0.1);

        let y2 = SeriesMatrix::new(ar1_sources(200, &[0.7, 0.4], 13)).unwrap();
        let joint = estimate_mica(&y2, &cfg).unwrap();
        let seq = estimate_mica_sequential(&y2, &cfg).unwrap();
        assert_eq!(joint.a_hat.matrix(), seq.a_hat.matrix());
    }

    #[test]
    fn single_column_and_bad_config() {
        let y = SeriesMatrix::new(DMatrix::from_fn(20, 1, |i, _| (i as f64).sin())).unwrap();
        let r = estimate_mica(&y, &MicaConfig::default()).unwrap();
        assert_eq!(r.objective, 0.0);
        let bad = MicaConfig {
            h0: 0,
            ..MicaConfig::default()
        };
        assert!(matches!(estimate_mica(&y, &bad), Err(MicaError::Config(_))));
    }
}

//! The MICA objective `S_h0` and the group objective `G_h0`, with analytic
//! gradients with respect to the separation matrix.
//!
//! Both objectives are normalised sums of cross-component terms
//! `MDD^2(x_k,t | X_{g,t-h})` where the response `x_k` lies outside the
//! conditioning group `g`. `S_h0` is the singleton-group case divided by
//! `tr(A A^T)`; `G_h0` divides by its square root.
//!
//! Scalar conditioners use the sorted prefix-sum evaluation, vector
//! conditioners the `O(n^2)` distance form. For lag `h` the conditioner
//! rows are `0..n-h` and the response rows `h..n`, so a single sort or a
//! single distance matrix per group serves every lag.

use nalgebra::DMatrix;

use crate::error::{MicaError, Result};
use crate::groups::GroupStructure;
use crate::mdd::{abs_form_sorted, centre};
use crate::numeric::{argsort, pairwise_sum};
use crate::ortho::OrthoMatrix;
use crate::series::SeriesMatrix;

/// How the objective is normalised by `tr(A A^T)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Normalisation {
    /// divide by `tr(A A^T)`
    Trace,
    /// divide by `tr(A A^T)^{1/2}`
    SqrtTrace,
}

/// Precomputed data for repeated objective evaluations on one series.
#[derive(Debug, Clone)]
pub struct CrossObjective<'a> {
    y: &'a DMatrix<f64>,
    h0: usize,
    groups: GroupStructure,
    members: Vec<Vec<usize>>,
    norm: Normalisation,
}

impl<'a> CrossObjective<'a> {
    /// The MICA objective `S_h0`.
    pub fn mica(y: &'a SeriesMatrix, h0: usize) -> Result<Self> {
        Self::build(y, h0, GroupStructure::singletons(y.ncols()), Normalisation::Trace)
    }

    /// The group objective `G_h0` for a given partition of the columns of
    /// the separation matrix.
    pub fn group(y: &'a SeriesMatrix, h0: usize, groups: &GroupStructure) -> Result<Self> {
        if groups.p() != y.ncols() {
            return Err(MicaError::InvalidGroups(format!(
                "groups cover {} components, series has {}",
                groups.p(),
                y.ncols()
            )));
        }
        Self::build(y, h0, groups.clone(), Normalisation::SqrtTrace)
    }

    fn build(y: &'a SeriesMatrix, h0: usize, groups: GroupStructure, norm: Normalisation) -> Result<Self> {
        if y.nrows() <= h0 + 2 {
            return Err(MicaError::SampleTooSmall(format!(
                "need n > h0 + 2, got n = {} and h0 = {h0}",
                y.nrows()
            )));
        }
        let members = groups.all_members();
        Ok(Self {
            y: y.matrix(),
            h0,
            groups,
            members,
            norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.y.ncols()
    }

    pub fn h0(&self) -> usize {
        self.h0
    }

    pub fn groups(&self) -> &GroupStructure {
        &self.groups
    }

    pub fn value(&self, a: &DMatrix<f64>) -> Result<f64> {
        Ok(self.evaluate(a, false)?.0)
    }

    pub fn value_and_grad(&self, a: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        let (v, g) = self.evaluate(a, true)?;
        Ok((v, g.expect("gradient requested")))
    }

    fn evaluate(&self, a: &DMatrix<f64>, want_grad: bool) -> Result<(f64, Option<DMatrix<f64>>)> {
        let p = self.dim();
        if a.nrows() != p || a.ncols() != p {
            return Err(MicaError::DimensionMismatch(format!(
                "separation matrix must be {p}x{p}, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let y = self.y;
        let n = y.nrows();
        let x = y * a;
        for k in 0..p {
            let col = x.column(k);
            if col.max() - col.min() == 0.0 {
                return Err(MicaError::DegenerateProjection(k));
            }
        }

        let mut terms: Vec<f64> = Vec::new();
        // weights[(s, k)] multiplies row s of Y in the gradient of column k.
        let mut weights = want_grad.then(|| DMatrix::<f64>::zeros(n, p));

        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut e = vec![0.0; n];

        for (g, members) in self.members.iter().enumerate() {
            let responses: Vec<usize> = (0..p).filter(|&k| self.groups.assignment()[k] != g).collect();
            if responses.is_empty() {
                continue;
            }
            if members.len() == 1 {
                let j = members[0];
                let u_full = x.column(j);
                let u_full = u_full.as_slice();
                let order_full = argsort(u_full);
                for h in 0..=self.h0 {
                    let m = n - h;
                    let order: Vec<usize> = order_full.iter().copied().filter(|&s| s < m).collect();
                    let u = &u_full[..m];
                    let scale = 1.0 / (m as f64 * m as f64);
                    for &i in &responses {
                        c[..m].copy_from_slice(&x.column(i).as_slice()[h..]);
                        centre(&mut c[..m]);
                        let s = abs_form_sorted(u, &c[..m], &order, &mut d[..m], want_grad.then_some(&mut e[..m]));
                        terms.push(-s * scale);
                        if let Some(w) = weights.as_mut() {
                            let dbar = pairwise_sum(&d[..m]) / m as f64;
                            for s in 0..m {
                                w[(s + h, i)] -= 2.0 * scale * (d[s] - dbar);
                                w[(s, j)] -= 2.0 * scale * c[s] * e[s];
                            }
                        }
                    }
                }
            } else {
                self.vector_terms(&x, members, &responses, &mut terms, weights.as_mut());
            }
        }

        let total = pairwise_sum(&terms);
        let tr = a.norm_squared();
        let (value, grad) = match self.norm {
            Normalisation::Trace => {
                let value = total / tr;
                let grad = weights.map(|w| {
                    let g = y.transpose() * w;
                    g / tr - a * (2.0 * total / (tr * tr))
                });
                (value, grad)
            }
            Normalisation::SqrtTrace => {
                let rt = tr.sqrt();
                let value = total / rt;
                let grad = weights.map(|w| {
                    let g = y.transpose() * w;
                    g / rt - a * (total / (tr * rt))
                });
                (value, grad)
            }
        };
        Ok((value, grad))
    }

    /// Terms with a vector conditioner `X_{members}`, for all lags.
    ///
    /// The lag-`h` distance matrix is the top-left `(n-h)` block of the
    /// full one, so zero-padding each lag's centred responses lets a single
    /// product with the full matrix serve every lag.
    fn vector_terms(
        &self,
        x: &DMatrix<f64>,
        members: &[usize],
        responses: &[usize],
        terms: &mut Vec<f64>,
        weights: Option<&mut DMatrix<f64>>,
    ) {
        let n = x.nrows();
        let q = members.len();
        let r = responses.len();
        let lags = self.h0 + 1;
        let u_full = DMatrix::from_fn(n, q, |s, l| x[(s, members[l])]);
        let dist = crate::mdd::distance_matrix(&u_full);

        // column h * r + k holds response k centred over rows h..n, placed in rows 0..n-h
        let mut cpad = DMatrix::zeros(n, lags * r);
        for h in 0..lags {
            let m = n - h;
            for (k, &i) in responses.iter().enumerate() {
                let mut col = cpad.column_mut(h * r + k);
                let full = x.column(i);
                let src = &full.as_slice()[h..];
                let mean = src.iter().sum::<f64>() / m as f64;
                for s in 0..m {
                    col[s] = src[s] - mean;
                }
            }
        }
        let dc = &dist * &cpad;
        for h in 0..lags {
            let m = n - h;
            let scale = 1.0 / (m as f64 * m as f64);
            for k in 0..r {
                let col = h * r + k;
                let prod: Vec<f64> = (0..m).map(|s| cpad[(s, col)] * dc[(s, col)]).collect();
                terms.push(-pairwise_sum(&prod) * scale);
            }
        }
        let Some(w) = weights else { return };

        // With K_st = (c_s . c_t) / D_st (zero on coincident points),
        // rowsum(K)_s = c_s . (D^-1 C)_s and (K U)_sl = c_s . (D^-1 (C o u_l))_s.
        let inv = dist.map(|d| if d > 0.0 { 1.0 / d } else { 0.0 });
        let width = lags * r;
        let mut stacked = DMatrix::zeros(n, width * (q + 1));
        stacked.columns_mut(0, width).copy_from(&cpad);
        for l in 0..q {
            for col in 0..width {
                for s in 0..n {
                    stacked[(s, width * (l + 1) + col)] = cpad[(s, col)] * u_full[(s, l)];
                }
            }
        }
        let prod = &inv * &stacked;
        for h in 0..lags {
            let m = n - h;
            let scale = 2.0 / (m as f64 * m as f64);
            for (k, &i) in responses.iter().enumerate() {
                let col = h * r + k;
                let dbar = dc.column(col).rows(0, m).sum() / m as f64;
                for s in 0..m {
                    w[(s + h, i)] -= scale * (dc[(s, col)] - dbar);
                }
            }
            for s in 0..m {
                let dot = |block: usize| -> f64 {
                    (0..r).map(|k| cpad[(s, h * r + k)] * prod[(s, width * block + h * r + k)]).sum()
                };
                let rowsum = dot(0);
                for (l, &j) in members.iter().enumerate() {
                    w[(s, j)] -= scale * (rowsum * u_full[(s, l)] - dot(l + 1));
                }
            }
        }
    }
}

/// Sample MICA objective `S_h0(A)`, normalised by `tr(A A^T)`.
pub fn objective_s(a: &OrthoMatrix, y: &SeriesMatrix, h0: usize) -> Result<f64> {
    CrossObjective::mica(y, h0)?.value(a.matrix())
}

/// Sample group objective `G_h0(A)`, normalised by `tr(A A^T)^{1/2}`.
pub fn objective_g(a: &OrthoMatrix, groups: &GroupStructure, y: &SeriesMatrix, h0: usize) -> Result<f64> {
    CrossObjective::group(y, h0, groups)?.value(a.matrix())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdd::{make_lagged, SampleMat};
    use crate::ortho::haar_random;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_series(n: usize, p: usize, seed: u64) -> SeriesMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Mildly dependent data so the objective is not near zero.
        let mut m = DMatrix::zeros(n, p);
        for k in 0..p {
            let mut prev = 0.0;
            for t in 0..n {
                let e: f64 = rng.random::<f64>() - 0.5;
                prev = 0.6 * prev + e + 0.3 * e * e;
                m[(t, k)] = prev;
            }
        }
        let mix = haar_random(p, seed + 1);
        SeriesMatrix::new(m * mix.matrix().transpose()).unwrap()
    }

    /// Brute force: builds every lagged pair with make_lagged and evaluates
    /// the MDD double sum directly.
    fn oracle(a: &DMatrix<f64>, y: &SeriesMatrix, h0: usize, groups: &GroupStructure, sqrt_norm: bool) -> f64 {
        let x = SeriesMatrix::new(y.matrix() * a).unwrap();
        let mut total = 0.0;
        for h in 0..=h0 {
            for g in 0..groups.group_count() {
                let cond = groups.members(g);
                for k in 0..groups.p() {
                    if groups.assignment()[k] == g {
                        continue;
                    }
                    let pair = make_lagged(&x, k, &cond, h).unwrap();
                    let v = pair.response.values();
                    let u: &SampleMat = &pair.conditioner;
                    let n = v.len();
                    let vbar = v.iter().sum::<f64>() / n as f64;
                    let mut acc = 0.0;
                    for s in 0..n {
                        for t in 0..n {
                            let dist = (u.matrix().row(s) - u.matrix().row(t)).norm();
                            acc += (v[s] - vbar) * (v[t] - vbar) * dist;
                        }
                    }
                    total += -acc / (n * n) as f64;
                }
            }
        }
        let tr = a.norm_squared();
        if sqrt_norm {
            total / tr.sqrt()
        } else {
            total / tr
        }
    }

    #[test]
    fn single_component_is_zero() {
        let y = random_series(40, 1, 3);
        assert_eq!(objective_s(&OrthoMatrix::identity(1), &y, 2).unwrap(), 0.0);
        let groups = GroupStructure::contiguous(&[3]).unwrap();
        let y3 = random_series(40, 3, 4);
        assert_eq!(objective_g(&haar_random(3, 1), &groups, &y3, 1).unwrap(), 0.0);
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..6 {
            let p = 2 + trial % 3;
            let n = 30 + 10 * trial;
            let h0 = trial % 3;
            let y = random_series(n, p, 50 + trial as u64);
            let a = haar_random(p, rng.random());
            let got = objective_s(&a, &y, h0).unwrap();
            let want = oracle(a.matrix(), &y, h0, &GroupStructure::singletons(p), false);
            assert!((got - want).abs() <= 1e-10 * want.abs(), "S: {got} vs {want}");
        }
        let y = random_series(60, 4, 77);
        let a = haar_random(4, 5);
        for sizes in [vec![2, 2], vec![3, 1], vec![2, 1, 1], vec![1, 1, 1, 1]] {
            let groups = GroupStructure::contiguous(&sizes).unwrap();
            let got = objective_g(&a, &groups, &y, 2).unwrap();
            let want = oracle(a.matrix(), &y, 2, &groups, true);
            assert!((got - want).abs() <= 1e-10 * want.abs(), "G{sizes:?}: {got} vs {want}");
        }
    }

    #[test]
    fn singleton_groups_relate_to_mica_objective() {
        let y = random_series(80, 4, 21);
        let a = haar_random(4, 2);
        let s = objective_s(&a, &y, 1).unwrap();
        let g = objective_g(&a, &GroupStructure::singletons(4), &y, 1).unwrap();
        let p = 4.0f64;
        assert!((g - s * p / p.sqrt()).abs() <= 1e-12 * g.abs());
    }

    fn fd_gradient(obj: &CrossObjective, a: &DMatrix<f64>, step: f64) -> DMatrix<f64> {
        let p = a.nrows();
        DMatrix::from_fn(p, p, |i, j| {
            let mut plus = a.clone();
            plus[(i, j)] += step;
            let mut minus = a.clone();
            minus[(i, j)] -= step;
            (obj.value(&plus).unwrap() - obj.value(&minus).unwrap()) / (2.0 * step)
        })
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let y = random_series(120, 4, 31);
        let a = haar_random(4, 8).into_inner();
        let obj = CrossObjective::mica(&y, 2).unwrap();
        let (_, g) = obj.value_and_grad(&a).unwrap();
        let fd = fd_gradient(&obj, &a, 1e-6);
        assert!((&g - &fd).abs().max() <= 1e-6 * g.abs().max(), "{g} vs {fd}");

        let groups = GroupStructure::contiguous(&[2, 1, 1]).unwrap();
        let obj = CrossObjective::group(&y, 2, &groups).unwrap();
        let (_, g) = obj.value_and_grad(&a).unwrap();
        let fd = fd_gradient(&obj, &a, 1e-6);
        assert!((&g - &fd).abs().max() <= 1e-6 * g.abs().max(), "{g} vs {fd}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let y = random_series(5, 2, 1);
        assert!(matches!(objective_s(&OrthoMatrix::identity(2), &y, 3), Err(MicaError::SampleTooSmall(_))));
        let y = random_series(30, 3, 1);
        assert!(objective_s(&OrthoMatrix::identity(2), &y, 1).is_err());
        let constant = SeriesMatrix::new(DMatrix::from_fn(20, 2, |t, k| if k == 0 { 1.0 } else { t as f64 })).unwrap();
        assert!(matches!(
            objective_s(&OrthoMatrix::identity(2), &constant, 1),
            Err(MicaError::DegenerateProjection(0))
        ));
    }
}

//! Sample martingale difference divergence (MDD), martingale difference
//! correlation (MDC) and distance variance.
//!
//! All statistics are V-statistics: the double sums include the diagonal and
//! are normalised by `n^2`. For a scalar conditioner the MDD is evaluated in
//! `O(n log n)` by sorting the conditioner and accumulating prefix sums of the
//! centred response; vector conditioners fall back to the `O(n^2)` definition.

use nalgebra::DMatrix;

use crate::error::{MicaError, Result};
use crate::numeric::{all_finite, argsort, mean, pairwise_sum, pairwise_sum_by};
use crate::series::SeriesMatrix;

/// Default floor below which an MDC denominator factor counts as degenerate.
pub const EPS_DEN: f64 = 1e-12;

/// A scalar sample `V_1..V_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleVec(Vec<f64>);

impl SampleVec {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(MicaError::SampleTooSmall(format!(
                "need at least 2 observations, got {}",
                values.len()
            )));
        }
        if !all_finite(&values) {
            return Err(MicaError::NonFinite("sample vector"));
        }
        Ok(Self(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// A vector sample `U_1..U_n`, each `U_i` in `R^q`, stored as an `n x q` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMat(DMatrix<f64>);

impl SampleMat {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() < 2 {
            return Err(MicaError::SampleTooSmall(format!(
                "need at least 2 observations, got {}",
                values.nrows()
            )));
        }
        if values.ncols() == 0 {
            return Err(MicaError::DimensionMismatch("conditioner has no columns".into()));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(MicaError::NonFinite("sample matrix"));
        }
        Ok(Self(values))
    }

    pub fn from_column(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(DMatrix::from_vec(n, 1, values))
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// The single column when `q == 1`.
    pub fn as_scalar(&self) -> Option<&[f64]> {
        (self.0.ncols() == 1).then(|| self.0.as_slice())
    }
}

/// Response and conditioner aligned at lag `h`: the response at time `t`
/// is paired with the conditioner at time `t - h`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaggedPair {
    pub response: SampleVec,
    pub conditioner: SampleMat,
    pub lag: usize,
}

fn check_rows(v: usize, u: usize) -> Result<()> {
    if v != u {
        return Err(MicaError::DimensionMismatch(format!(
            "response has {v} rows, conditioner has {u}"
        )));
    }
    Ok(())
}

/// Centre `values` in place and return the removed mean.
pub(crate) fn centre(values: &mut [f64]) -> f64 {
    let m = mean(values);
    for v in values.iter_mut() {
        *v -= m;
    }
    m
}

/// Evaluates `sum_{s,t} c_s c_t |u_s - u_t|` given the ascending order of `u`.
///
/// Optionally fills `d[s] = sum_t c_t |u_s - u_t|` and
/// `e[s] = sum_t c_t sign(u_s - u_t)` (both indexed like `u`), which are the
/// building blocks of the gradient. `c` should sum to (numerically) zero.
pub(crate) fn abs_form_sorted(
    u: &[f64],
    c: &[f64],
    order: &[usize],
    d: &mut [f64],
    e: Option<&mut [f64]>,
) -> f64 {
    let m = order.len();
    debug_assert_eq!(d.len(), u.len());
    // Shift u to reduce cancellation in the u * C terms.
    let shift = if m > 0 { u[order[m / 2]] } else { 0.0 };

    let mut c_tot = 0.0;
    let mut cu_tot = 0.0;
    for &s in order {
        c_tot += c[s];
        cu_tot += c[s] * (u[s] - shift);
    }

    let mut e = e;
    let mut c_lt = 0.0;
    let mut cu_lt = 0.0;
    let mut k = 0;
    while k < m {
        // Run of tied conditioner values [k, r).
        let val = u[order[k]] - shift;
        let mut r = k;
        let mut run_c = 0.0;
        let mut run_cu = 0.0;
        while r < m && u[order[r]] - shift == val {
            run_c += c[order[r]];
            run_cu += c[order[r]] * val;
            r += 1;
        }
        let c_le = c_lt + run_c;
        let cu_le = cu_lt + run_cu;
        let ds = val * c_lt - cu_lt + (cu_tot - cu_le) - val * (c_tot - c_le);
        let es = c_lt - (c_tot - c_le);
        for &s in &order[k..r] {
            d[s] = ds;
            if let Some(e) = e.as_deref_mut() {
                e[s] = es;
            }
        }
        c_lt = c_le;
        cu_lt = cu_le;
        k = r;
    }
    pairwise_sum_by(m, |k| c[order[k]] * d[order[k]])
}

/// MDD^2 for a scalar conditioner using the sorted prefix-sum evaluation.
pub(crate) fn mdd_sq_scalar_unchecked(v: &[f64], u: &[f64]) -> f64 {
    let n = v.len();
    let mut c = v.to_vec();
    centre(&mut c);
    let order = argsort(u);
    let mut d = vec![0.0; n];
    let s = abs_form_sorted(u, &c, &order, &mut d, None);
    -s / (n as f64 * n as f64)
}

/// Pairwise Euclidean distances between rows of `u`.
pub(crate) fn distance_matrix(u: &DMatrix<f64>) -> DMatrix<f64> {
    let n = u.nrows();
    let q = u.ncols();
    let mut d = DMatrix::zeros(n, n);
    for t in 0..n {
        for s in (t + 1)..n {
            let mut acc = 0.0;
            for k in 0..q {
                let diff = u[(s, k)] - u[(t, k)];
                acc += diff * diff;
            }
            let dist = acc.sqrt();
            d[(s, t)] = dist;
            d[(t, s)] = dist;
        }
    }
    d
}

/// `-(1/n^2) c^T D c` for a centred response and a distance matrix.
pub(crate) fn mdd_sq_from_distances(c: &[f64], dist: &DMatrix<f64>) -> f64 {
    let n = c.len();
    let row_terms: Vec<f64> = (0..n)
        .map(|t| {
            let col = dist.column(t);
            c[t] * pairwise_sum_by(n, |s| col[s] * c[s])
        })
        .collect();
    -pairwise_sum(&row_terms) / (n as f64 * n as f64)
}

/// Sample MDD^2(V | U) = -(1/n^2) sum_{i,j} (V_i - V̄)(V_j - V̄) ||U_i - U_j||.
pub fn mdd_sq(v: &SampleVec, u: &SampleMat) -> Result<f64> {
    check_rows(v.len(), u.nrows())?;
    if let Some(col) = u.as_scalar() {
        return Ok(mdd_sq_scalar_unchecked(v.values(), col));
    }
    let mut c = v.values().to_vec();
    centre(&mut c);
    Ok(mdd_sq_from_distances(&c, &distance_matrix(u.matrix())))
}

/// MDD^2 of a vector response: the sum of the coordinate-wise MDD^2 values.
pub fn mdd_sq_multi(v: &SampleMat, u: &SampleMat) -> Result<f64> {
    check_rows(v.nrows(), u.nrows())?;
    let n = v.nrows();
    if let Some(col) = u.as_scalar() {
        let order = argsort(col);
        let mut d = vec![0.0; n];
        let terms: Vec<f64> = (0..v.ncols())
            .map(|k| {
                let mut c: Vec<f64> = v.matrix().column(k).iter().copied().collect();
                centre(&mut c);
                abs_form_sorted(col, &c, &order, &mut d, None)
            })
            .collect();
        return Ok(-pairwise_sum(&terms) / (n as f64 * n as f64));
    }
    let dist = distance_matrix(u.matrix());
    let terms: Vec<f64> = (0..v.ncols())
        .map(|k| {
            let mut c: Vec<f64> = v.matrix().column(k).iter().copied().collect();
            centre(&mut c);
            mdd_sq_from_distances(&c, &dist)
        })
        .collect();
    Ok(pairwise_sum(&terms))
}

/// Distance variance of a scalar sample in `O(n log n)`.
///
/// Uses `dvar = (1/n^2) sum a_st^2 - (2/n) sum_s abar_s^2 + abar^2` with
/// `a_st = |u_s - u_t|`; the row means come from a sorted prefix pass and the
/// squared-distance sum has the closed form `2n sum u^2 - 2 (sum u)^2`.
pub(crate) fn dvar_scalar_unchecked(u: &[f64]) -> f64 {
    let n = u.len();
    let nf = n as f64;
    let mut w = u.to_vec();
    centre(&mut w);
    let order = argsort(&w);
    // Row sums of |w_s - w_t| via the same kernel with unit weights.
    let ones = vec![1.0; n];
    let mut row = vec![0.0; n];
    abs_form_sorted(&w, &ones, &order, &mut row, None);
    let sum_sq = pairwise_sum_by(n, |s| w[s] * w[s]);
    // sum over s,t of (w_s - w_t)^2 with sum w = 0.
    let s1 = 2.0 * nf * sum_sq / (nf * nf);
    let s3 = pairwise_sum_by(n, |s| (row[s] / nf).powi(2)) / nf;
    let abar = pairwise_sum(&row) / (nf * nf);
    (s1 - 2.0 * s3 + abar * abar).max(0.0)
}

/// Distance variance `(1/n^2) sum B_ij^2` with `B` the double-centred
/// distance matrix of the rows of `u`.
pub fn dvar(u: &SampleMat) -> Result<f64> {
    if let Some(col) = u.as_scalar() {
        return Ok(dvar_scalar_unchecked(col));
    }
    let dist = distance_matrix(u.matrix());
    Ok(double_centred_square_mean(&dist))
}

fn double_centred_square_mean(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let nf = n as f64;
    let row_means: Vec<f64> = (0..n)
        .map(|i| pairwise_sum_by(n, |j| a[(i, j)]) / nf)
        .collect();
    let grand = pairwise_sum(&row_means) / nf;
    let rows: Vec<f64> = (0..n)
        .map(|i| {
            pairwise_sum_by(n, |j| {
                let b = a[(i, j)] - row_means[i] - row_means[j] + grand;
                b * b
            })
        })
        .collect();
    (pairwise_sum(&rows) / (nf * nf)).max(0.0)
}

/// `tr(var(V)^2)` with the biased (`1/n`) covariance, i.e. the squared
/// Frobenius norm of the sample covariance. For scalar `V` this is the
/// squared biased variance.
pub fn tr_var_sq(v: &SampleMat) -> f64 {
    let n = v.nrows() as f64;
    let q = v.ncols();
    let centred: Vec<Vec<f64>> = (0..q)
        .map(|k| {
            let mut c: Vec<f64> = v.matrix().column(k).iter().copied().collect();
            centre(&mut c);
            c
        })
        .collect();
    let mut acc = Vec::with_capacity(q * q);
    for a in 0..q {
        for b in 0..q {
            let cov = pairwise_sum_by(centred[a].len(), |s| centred[a][s] * centred[b][s]) / n;
            acc.push(cov * cov);
        }
    }
    pairwise_sum(&acc)
}

/// Scalar convenience wrapper for [`tr_var_sq`].
pub fn tr_var_sq_scalar(v: &SampleVec) -> f64 {
    let mut c = v.values().to_vec();
    centre(&mut c);
    let var = pairwise_sum_by(c.len(), |s| c[s] * c[s]) / c.len() as f64;
    var * var
}

/// Sample MDC^2(V | U) = MDD^2 / (tr(var(V)^2)^{1/2} dvar(U)^{1/2}).
///
/// The raw ratio is returned; no clamping to `[0, 1]`.
pub fn mdc_sq(v: &SampleVec, u: &SampleMat) -> Result<f64> {
    mdc_sq_with_floor(v, u, EPS_DEN)
}

pub fn mdc_sq_with_floor(v: &SampleVec, u: &SampleMat, eps_den: f64) -> Result<f64> {
    check_rows(v.len(), u.nrows())?;
    let resp = tr_var_sq_scalar(v).sqrt();
    if resp <= eps_den {
        return Err(MicaError::DegenerateDenominator {
            which: "response",
            value: resp,
            floor: eps_den,
        });
    }
    let cond = dvar(u)?.sqrt();
    if cond <= eps_den {
        return Err(MicaError::DegenerateDenominator {
            which: "conditioner",
            value: cond,
            floor: eps_den,
        });
    }
    Ok(mdd_sq(v, u)? / (resp * cond))
}

/// Scalar MDC^2 with precomputed denominator factors.
pub(crate) fn mdc_sq_scalar_parts(v: &[f64], u: &[f64], resp: f64, cond: f64, eps_den: f64) -> Result<f64> {
    if resp <= eps_den {
        return Err(MicaError::DegenerateDenominator {
            which: "response",
            value: resp,
            floor: eps_den,
        });
    }
    if cond <= eps_den {
        return Err(MicaError::DegenerateDenominator {
            which: "conditioner",
            value: cond,
            floor: eps_den,
        });
    }
    Ok(mdd_sq_scalar_unchecked(v, u) / (resp * cond))
}

/// Align `response_col` at time `t` with `conditioner_cols` at time `t - h`.
pub fn make_lagged(
    x: &SeriesMatrix,
    response_col: usize,
    conditioner_cols: &[usize],
    h: usize,
) -> Result<LaggedPair> {
    let n = x.nrows();
    let p = x.ncols();
    if conditioner_cols.is_empty() {
        return Err(MicaError::DimensionMismatch("empty conditioner set".into()));
    }
    if response_col >= p || conditioner_cols.iter().any(|&j| j >= p) {
        return Err(MicaError::DimensionMismatch(format!(
            "column index out of range for {p} columns"
        )));
    }
    if h + 2 > n {
        return Err(MicaError::SampleTooSmall(format!(
            "lag {h} leaves fewer than 2 rows of {n}"
        )));
    }
    let m = n - h;
    let response = SampleVec::new(x.column(response_col)[h..].to_vec())?;
    let cond = DMatrix::from_fn(m, conditioner_cols.len(), |s, k| {
        x.matrix()[(s, conditioner_cols[k])]
    });
    Ok(LaggedPair {
        response,
        conditioner: SampleMat::new(cond)?,
        lag: h,
    })
}

impl LaggedPair {
    pub fn mdd_sq(&self) -> Result<f64> {
        mdd_sq(&self.response, &self.conditioner)
    }

    pub fn mdc_sq(&self) -> Result<f64> {
        mdc_sq(&self.response, &self.conditioner)
    }

    pub fn len(&self) -> usize {
        self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.response.is_empty()
    }
}

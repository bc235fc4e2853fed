//! Orthogonal matrices: Givens parameterisation, Haar sampling, the Cayley
//! retraction, and signed-permutation-invariant distances.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::assignment::max_weight_assignment;
use crate::error::{MicaError, Result};

/// Accepted deviation `max |Q^T Q - I|` for an orthogonal matrix.
pub const ORTHO_TOL: f64 = 1e-8;
/// Deviations up to this are repaired by re-orthonormalisation on construction.
pub const ORTHO_REPAIR_TOL: f64 = 1e-6;
/// Drift threshold that triggers re-orthonormalisation during optimisation.
pub const DRIFT_TOL: f64 = 1e-10;

/// `max |B^T B - I|` over all entries.
pub fn orthonormality_error(b: &DMatrix<f64>) -> f64 {
    let g = b.transpose() * b;
    let mut worst: f64 = 0.0;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

/// Orthonormalise the columns of `m` by QR, keeping each column's direction
/// (the diagonal of `R` is made non-negative).
pub fn reorthonormalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let qr = m.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for k in 0..q.ncols().min(r.nrows()) {
        if r[(k, k)] < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    q
}

/// A `p x p` orthogonal matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthoMatrix(DMatrix<f64>);

impl OrthoMatrix {
    /// Validates orthogonality; small drift (up to [`ORTHO_REPAIR_TOL`]) is
    /// repaired by QR, larger deviations are rejected.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(MicaError::DimensionMismatch(format!(
                "orthogonal matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if !m.iter().all(|v| v.is_finite()) {
            return Err(MicaError::NonFinite("orthogonal matrix"));
        }
        let err = orthonormality_error(&m);
        if err <= ORTHO_TOL {
            Ok(Self(m))
        } else if err <= ORTHO_REPAIR_TOL {
            Ok(Self(reorthonormalize(&m)))
        } else {
            Err(MicaError::NotOrthogonal(err))
        }
    }

    /// Wraps a matrix assumed orthogonal, repairing drift beyond [`DRIFT_TOL`].
    pub(crate) fn from_iterate(m: DMatrix<f64>) -> Self {
        if orthonormality_error(&m) > DRIFT_TOL {
            Self(reorthonormalize(&m))
        } else {
            Self(m)
        }
    }

    pub fn identity(p: usize) -> Self {
        Self(DMatrix::identity(p, p))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Columns reordered so that new column `k` is old column `order[k]`.
    pub fn permute_columns(&self, order: &[usize]) -> Self {
        let p = self.dim();
        Self(DMatrix::from_fn(p, p, |i, k| self.0[(i, order[k])]))
    }

    /// Apply an alignment to this matrix: column `i` of the result is
    /// `signs[i] * self[:, permutation[i]]`.
    pub fn aligned(&self, alignment: &Alignment) -> Self {
        let p = self.dim();
        Self(DMatrix::from_fn(p, p, |r, i| {
            alignment.signs[i] * self.0[(r, alignment.permutation[i])]
        }))
    }

    /// Contiguous column blocks with the given sizes.
    pub fn blocks(&self, sizes: &[usize]) -> Result<Vec<SemiOrthoBlock>> {
        if sizes.iter().sum::<usize>() != self.dim() || sizes.contains(&0) {
            return Err(MicaError::InvalidGroups(format!(
                "sizes {sizes:?} do not partition {} columns",
                self.dim()
            )));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for (g, &s) in sizes.iter().enumerate() {
            out.push(SemiOrthoBlock {
                entries: self.0.columns(start, s).into_owned(),
                group_index: g,
            });
            start += s;
        }
        Ok(out)
    }
}

/// A `p x p_i` block with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SemiOrthoBlock {
    pub entries: DMatrix<f64>,
    pub group_index: usize,
}

impl SemiOrthoBlock {
    pub fn new(entries: DMatrix<f64>, group_index: usize) -> Result<Self> {
        let err = orthonormality_error(&entries);
        if err > ORTHO_TOL {
            return Err(MicaError::NotOrthogonal(err));
        }
        Ok(Self {
            entries,
            group_index,
        })
    }

    pub fn width(&self) -> usize {
        self.entries.ncols()
    }
}

/// Givens angles `theta_ij`, `i < j`, in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleVector(Vec<f64>);

impl AngleVector {
    pub fn new(angles: Vec<f64>) -> Result<Self> {
        if !angles.iter().all(|a| a.is_finite()) {
            return Err(MicaError::NonFinite("angle vector"));
        }
        Ok(Self(angles))
    }

    pub fn zeros(p: usize) -> Self {
        Self(vec![0.0; angle_count(p)])
    }

    pub fn angles(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn angle_count(p: usize) -> usize {
    p * p.saturating_sub(1) / 2
}

/// A signed column permutation: column `i` of the reference is matched to
/// column `permutation[i]` of the other matrix, multiplied by `signs[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub permutation: Vec<usize>,
    pub signs: Vec<f64>,
    /// `sum_i |b_i^T c_{pi(i)}|` at the optimum.
    pub score: f64,
}

/// Block matching: reference block `i` is matched to block `group_permutation[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockAlignment {
    pub group_permutation: Vec<usize>,
}

/// `prod_{i<j} Gamma_ij(theta_ij)` multiplied left to right in lexicographic
/// order, where `Gamma_ij` has `cos` on `(i,i)`, `(j,j)`, `sin` on `(i,j)` and
/// `-sin` on `(j,i)`.
pub fn givens_compose(p: usize, theta: &AngleVector) -> Result<OrthoMatrix> {
    if theta.len() != angle_count(p) {
        return Err(MicaError::DimensionMismatch(format!(
            "expected {} angles for p = {p}, got {}",
            angle_count(p),
            theta.len()
        )));
    }
    Ok(OrthoMatrix(givens_matrix(p, theta.angles())))
}

pub(crate) fn givens_matrix(p: usize, angles: &[f64]) -> DMatrix<f64> {
    let mut q = DMatrix::identity(p, p);
    let mut k = 0;
    for i in 0..p {
        for j in (i + 1)..p {
            let (s, c) = angles[k].sin_cos();
            k += 1;
            // Right-multiplication touches columns i and j only.
            for r in 0..p {
                let qi = q[(r, i)];
                let qj = q[(r, j)];
                q[(r, i)] = c * qi - s * qj;
                q[(r, j)] = s * qi + c * qj;
            }
        }
    }
    q
}

/// Haar-distributed orthogonal matrix: QR of a standard Gaussian matrix with
/// column `k` of `Q` multiplied by `sign(R_kk)`.
pub fn haar_random(p: usize, seed: u64) -> OrthoMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    haar_random_with(p, &mut rng)
}

pub(crate) fn haar_random_with<R: rand::Rng + ?Sized>(p: usize, rng: &mut R) -> OrthoMatrix {
    let g = DMatrix::from_fn(p, p, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for k in 0..p {
        if r[(k, k)] < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    OrthoMatrix::from_iterate(q)
}

/// Skew matrix `W = G Q^T - Q G^T` for the Cayley retraction.
pub fn cayley_skew(q: &DMatrix<f64>, euclid_grad: &DMatrix<f64>) -> DMatrix<f64> {
    euclid_grad * q.transpose() - q * euclid_grad.transpose()
}

/// `(I + tau/2 W)^{-1} (I - tau/2 W) Q` for a skew `W`.
pub fn cayley_retract(q: &OrthoMatrix, w: &DMatrix<f64>, tau: f64) -> Result<OrthoMatrix> {
    let p = q.dim();
    let half = 0.5 * tau;
    let lhs = DMatrix::identity(p, p) + w * half;
    let rhs = q.matrix() - (w * half) * q.matrix();
    let next = lhs.lu().solve(&rhs).ok_or(MicaError::SingularStep)?;
    if !next.iter().all(|v| v.is_finite()) {
        return Err(MicaError::SingularStep);
    }
    Ok(OrthoMatrix::from_iterate(next))
}

/// One Cayley step along the negative Riemannian gradient.
pub fn cayley_step(q: &OrthoMatrix, euclid_grad: &DMatrix<f64>, tau: f64) -> Result<OrthoMatrix> {
    if !(tau > 0.0) {
        return Err(MicaError::Config(format!("step size must be positive, got {tau}")));
    }
    if euclid_grad.shape() != q.matrix().shape() {
        return Err(MicaError::DimensionMismatch("gradient shape".into()));
    }
    cayley_retract(q, &cayley_skew(q.matrix(), euclid_grad), tau)
}

/// Optimal signed column matching of `c` to `b`, maximising
/// `sum_i |b_i^T c_{pi(i)}|` by the Hungarian method.
pub fn align_columns(b: &OrthoMatrix, c: &OrthoMatrix) -> Result<Alignment> {
    if b.dim() != c.dim() {
        return Err(MicaError::DimensionMismatch(format!(
            "cannot align {}x{} with {}x{}",
            b.dim(),
            b.dim(),
            c.dim(),
            c.dim()
        )));
    }
    let inner = b.matrix().transpose() * c.matrix();
    let p = b.dim();
    let score: Vec<Vec<f64>> = (0..p)
        .map(|i| (0..p).map(|j| inner[(i, j)].abs()).collect())
        .collect();
    let permutation = max_weight_assignment(&score);
    let signs: Vec<f64> = permutation
        .iter()
        .enumerate()
        .map(|(i, &j)| if inner[(i, j)] < 0.0 { -1.0 } else { 1.0 })
        .collect();
    let total = permutation.iter().enumerate().map(|(i, &j)| score[i][j]).sum();
    Ok(Alignment {
        permutation,
        signs,
        score: total,
    })
}

/// Scaled D^2 distance `1 - (1/p) sum_i |b_i^T c_i|` after optimal alignment.
pub fn d_distance_scaled(b: &OrthoMatrix, c: &OrthoMatrix) -> Result<f64> {
    let al = align_columns(b, c)?;
    Ok((1.0 - al.score / b.dim() as f64).clamp(0.0, 1.0))
}

fn projector_overlap(b: &DMatrix<f64>, c: &DMatrix<f64>) -> f64 {
    // tr(B B^T C C^T) = ||B^T C||_F^2
    (b.transpose() * c).norm_squared()
}

/// Match blocks of equal width to maximise `tr(B_i B_i^T C_j C_j^T)`.
pub fn align_blocks(b_blocks: &[SemiOrthoBlock], c_blocks: &[SemiOrthoBlock]) -> Result<BlockAlignment> {
    if b_blocks.len() != c_blocks.len() {
        return Err(MicaError::InvalidGroups(format!(
            "{} blocks vs {} blocks",
            b_blocks.len(),
            c_blocks.len()
        )));
    }
    let mut bs: Vec<usize> = b_blocks.iter().map(SemiOrthoBlock::width).collect();
    let mut cs: Vec<usize> = c_blocks.iter().map(SemiOrthoBlock::width).collect();
    if b_blocks.iter().chain(c_blocks).any(|b| b.entries.nrows() != b_blocks[0].entries.nrows()) {
        return Err(MicaError::DimensionMismatch("blocks have different row counts".into()));
    }
    bs.sort_unstable();
    cs.sort_unstable();
    if bs != cs {
        return Err(MicaError::InvalidGroups(format!(
            "group size multisets differ: {bs:?} vs {cs:?}"
        )));
    }
    let m = b_blocks.len();
    let mut group_permutation = vec![usize::MAX; m];
    let mut widths = bs.clone();
    widths.dedup();
    for w in widths {
        let bi: Vec<usize> = (0..m).filter(|&i| b_blocks[i].width() == w).collect();
        let ci: Vec<usize> = (0..m).filter(|&j| c_blocks[j].width() == w).collect();
        let score: Vec<Vec<f64>> = bi
            .iter()
            .map(|&i| {
                ci.iter()
                    .map(|&j| projector_overlap(&b_blocks[i].entries, &c_blocks[j].entries))
                    .collect()
            })
            .collect();
        let assign = max_weight_assignment(&score);
        for (a, &i) in bi.iter().enumerate() {
            group_permutation[i] = ci[assign[a]];
        }
    }
    Ok(BlockAlignment { group_permutation })
}

/// Scaled block distance `max_i (1 - tr(B_i B_i^T C_i C_i^T) / p_i)` after
/// matching blocks of equal width.
pub fn dtilde_distance_scaled(b_blocks: &[SemiOrthoBlock], c_blocks: &[SemiOrthoBlock]) -> Result<f64> {
    let al = align_blocks(b_blocks, c_blocks)?;
    let mut worst: f64 = 0.0;
    for (i, &j) in al.group_permutation.iter().enumerate() {
        let w = b_blocks[i].width() as f64;
        let d = 1.0 - projector_overlap(&b_blocks[i].entries, &c_blocks[j].entries) / w;
        worst = worst.max(d);
    }
    Ok(worst.clamp(0.0, 1.0))
}

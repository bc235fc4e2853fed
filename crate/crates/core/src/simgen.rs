//! Simulation designs: independent AR(1) and all-pass sources for MICA,
//! lag-copy groups of ARMA and all-pass series for group MICA, Haar mixing,
//! and whitening with the matching adjustment of the true separation matrix.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{MicaError, Result};
use crate::groups::GroupStructure;
use crate::ortho::{haar_random_with, reorthonormalize, OrthoMatrix};
use crate::series::SeriesMatrix;

pub const DEFAULT_BURN_IN: usize = 500;
const MIN_EIGEN: f64 = 1e-10;

/// Innovation distribution, always with mean zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnovationDist {
    Normal,
    /// Student t with 3 degrees of freedom.
    #[serde(rename = "t")]
    StudentT3,
    /// Exp(1) shifted by -1.
    #[serde(rename = "exp")]
    Exponential,
}

impl InnovationDist {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Normal => StandardNormal.sample(rng),
            Self::StudentT3 => StudentT::new(3.0).expect("valid df").sample(rng),
            Self::Exponential => {
                let e: f64 = Exp1.sample(rng);
                e - 1.0
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Normal => "normal",
            Self::StudentT3 => "t",
            Self::Exponential => "exp",
        }
    }
}

impl fmt::Display for InnovationDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InnovationDist {
    type Err = MicaError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Self::Normal),
            "t" => Ok(Self::StudentT3),
            "exp" => Ok(Self::Exponential),
            _ => Err(MicaError::Config(format!("unknown distribution '{s}' (normal, t, exp)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Design {
    MicaEx1,
    MicaEx2,
    GmicaEx1,
    GmicaEx2,
}

impl Design {
    pub fn name(&self) -> &'static str {
        match self {
            Self::MicaEx1 => "mica-ex1",
            Self::MicaEx2 => "mica-ex2",
            Self::GmicaEx1 => "gmica-ex1",
            Self::GmicaEx2 => "gmica-ex2",
        }
    }

    pub fn is_group(&self) -> bool {
        matches!(self, Self::GmicaEx1 | Self::GmicaEx2)
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Design {
    type Err = MicaError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mica-ex1" => Ok(Self::MicaEx1),
            "mica-ex2" => Ok(Self::MicaEx2),
            "gmica-ex1" => Ok(Self::GmicaEx1),
            "gmica-ex2" => Ok(Self::GmicaEx2),
            _ => Err(MicaError::Config(format!(
                "unknown design '{s}' (mica-ex1, mica-ex2, gmica-ex1, gmica-ex2)"
            ))),
        }
    }
}

/// One draw of a simulation design.
#[derive(Debug, Clone, PartialEq)]
pub struct DgpSpec {
    pub design: Design,
    pub p: usize,
    pub n: usize,
    pub dist: InnovationDist,
    pub seed: u64,
    pub burn_in: usize,
    /// Replaces the random AR coefficients of the MICA designs (testing hook).
    pub fixed_phi: Option<Vec<f64>>,
}

impl DgpSpec {
    pub fn new(design: Design, p: usize, n: usize, dist: InnovationDist, seed: u64) -> Self {
        Self {
            design,
            p,
            n,
            dist,
            seed,
            burn_in: DEFAULT_BURN_IN,
            fixed_phi: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(MicaError::Config(format!("n must be at least 2, got {}", self.n)));
        }
        if self.p == 0 {
            return Err(MicaError::Config("p must be positive".into()));
        }
        if self.design.is_group() && !self.p.is_multiple_of(6) {
            return Err(MicaError::Config(format!(
                "group designs need p divisible by 6, got {}",
                self.p
            )));
        }
        if self.design == Design::MicaEx2 && self.dist == InnovationDist::Normal {
            return Err(MicaError::Config(
                "mica-ex2 with normal innovations gives serially independent sources".into(),
            ));
        }
        if let Some(phi) = &self.fixed_phi {
            if phi.len() != self.p {
                return Err(MicaError::Config(format!(
                    "fixed_phi has {} entries, expected {}",
                    phi.len(),
                    self.p
                )));
            }
            if self.design == Design::MicaEx2 && phi.contains(&0.0) {
                return Err(MicaError::Config("all-pass coefficients must be nonzero".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedData {
    /// Observed series `Y = X A^T` (rows are time points), not whitened.
    pub y: SeriesMatrix,
    pub a_true: OrthoMatrix,
    pub x_true: SeriesMatrix,
    pub groups_true: GroupStructure,
    /// Separation matrix in the whitened coordinates, see [`adjusted_truth`].
    pub b_true: OrthoMatrix,
}

/// Dispatch on the design.
pub fn generate(spec: &DgpSpec) -> Result<GeneratedData> {
    match spec.design {
        Design::MicaEx1 => gen_mica_ex1(spec),
        Design::MicaEx2 => gen_mica_ex2(spec),
        Design::GmicaEx1 | Design::GmicaEx2 => gen_gmica(spec),
    }
}

/// `x_t = phi x_{t-1} + e_t` after `burn_in` discarded steps.
fn ar1<R: Rng + ?Sized>(phi: f64, n: usize, burn_in: usize, dist: InnovationDist, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut x = 0.0;
    for t in 0..burn_in + n {
        x = phi * x + dist.sample(rng);
        if t >= burn_in {
            out.push(x);
        }
    }
    out
}

/// All-pass ARMA(1,1): `x_t = phi x_{t-1} - e_{t-1} / phi + e_t`.
fn all_pass<R: Rng + ?Sized>(phi: f64, n: usize, burn_in: usize, dist: InnovationDist, rng: &mut R) -> Vec<f64> {
    arma(&[phi], &[-1.0 / phi], n, burn_in, dist, rng)
}

/// `x_t = sum_k ar[k] x_{t-1-k} + e_t + sum_k ma[k] e_{t-1-k}`, started at
/// zero and run for `burn_in` steps before recording.
fn arma<R: Rng + ?Sized>(
    ar: &[f64],
    ma: &[f64],
    n: usize,
    burn_in: usize,
    dist: InnovationDist,
    rng: &mut R,
) -> Vec<f64> {
    let total = burn_in + n;
    let mut x = vec![0.0; total];
    let mut e = vec![0.0; total];
    for t in 0..total {
        e[t] = dist.sample(rng);
        let mut v = e[t];
        for (k, &a) in ar.iter().enumerate() {
            if t > k {
                v += a * x[t - 1 - k];
            }
        }
        for (k, &b) in ma.iter().enumerate() {
            if t > k {
                v += b * e[t - 1 - k];
            }
        }
        x[t] = v;
    }
    x.split_off(burn_in)
}

/// Centre and scale to unit sample variance (divisor `n`).
fn standardize(values: &mut [f64]) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    for v in values.iter_mut() {
        *v = (*v - mean) / sd;
    }
}

fn mica_design(spec: &DgpSpec, all_pass_sources: bool) -> Result<GeneratedData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let p = spec.p;
    let a = haar_random_with(p, &mut rng);
    let phis: Vec<f64> = (0..p).map(|_| rng.random_range(0.5..0.9)).collect();
    let phis = spec.fixed_phi.clone().unwrap_or(phis);
    let mut x = DMatrix::zeros(spec.n, p);
    for (k, &phi) in phis.iter().enumerate() {
        let mut col = if all_pass_sources {
            all_pass(phi, spec.n, spec.burn_in, spec.dist, &mut rng)
        } else {
            ar1(phi, spec.n, spec.burn_in, spec.dist, &mut rng)
        };
        standardize(&mut col);
        x.set_column(k, &nalgebra::DVector::from_vec(col));
    }
    finish(x, a, GroupStructure::singletons(p))
}

/// Independent AR(1) sources with `phi_i ~ U(0.5, 0.9)`.
pub fn gen_mica_ex1(spec: &DgpSpec) -> Result<GeneratedData> {
    if spec.design != Design::MicaEx1 {
        return Err(MicaError::Config(format!("expected mica-ex1, got {}", spec.design)));
    }
    mica_design(spec, false)
}

/// Independent all-pass ARMA(1,1) sources with `phi_i ~ U(0.5, 0.9)`.
pub fn gen_mica_ex2(spec: &DgpSpec) -> Result<GeneratedData> {
    if spec.design != Design::MicaEx2 {
        return Err(MicaError::Config(format!("expected mica-ex2, got {}", spec.design)));
    }
    mica_design(spec, true)
}

/// Group sizes `(p/2, p/3, p/6)` of the group designs.
pub fn gmica_sizes(p: usize) -> [usize; 3] {
    [p / 2, p / 3, p / 6]
}

/// Three independent base series; group `g` holds forward shifts
/// `z^(g)_{t}, z^(g)_{t+1}, ...` of its base series.
pub fn gen_gmica(spec: &DgpSpec) -> Result<GeneratedData> {
    if !spec.design.is_group() {
        return Err(MicaError::Config(format!("expected a group design, got {}", spec.design)));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let p = spec.p;
    let a = haar_random_with(p, &mut rng);
    let sizes = gmica_sizes(p);
    let mut x = DMatrix::zeros(spec.n, p);
    let mut col = 0;
    for (g, &size) in sizes.iter().enumerate() {
        let len = spec.n + size - 1;
        let z = match (spec.design, g) {
            (Design::GmicaEx1, 0) => arma(&[0.5, 0.3], &[-0.9, 0.3, 1.2, 1.3], len, spec.burn_in, spec.dist, &mut rng),
            (Design::GmicaEx1, 1) => arma(&[0.8, -0.5], &[1.0, 0.8, 1.8], len, spec.burn_in, spec.dist, &mut rng),
            (Design::GmicaEx1, _) => arma(&[-0.7, -0.5], &[-1.0, -0.8], len, spec.burn_in, spec.dist, &mut rng),
            (_, g) => {
                let phi = [0.9, 0.5, 0.1][g];
                all_pass(phi, len, spec.burn_in, spec.dist, &mut rng)
            }
        };
        for shift in 0..size {
            for t in 0..spec.n {
                x[(t, col)] = z[t + shift];
            }
            col += 1;
        }
    }
    finish(x, a, GroupStructure::contiguous(&sizes)?)
}

fn finish(x: DMatrix<f64>, a: OrthoMatrix, groups: GroupStructure) -> Result<GeneratedData> {
    let y = SeriesMatrix::new(&x * a.matrix().transpose())?;
    let x_true = SeriesMatrix::new(x)?;
    let (_, transform) = whiten(&y)?;
    let b_true = adjusted_truth(&a, &x_true, &groups, &transform)?;
    Ok(GeneratedData {
        y,
        a_true: a,
        x_true,
        groups_true: groups,
        b_true,
    })
}

/// Sample covariance with divisor `n` of the centred columns.
fn covariance(y: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = y.nrows() as f64;
    let mut centred = y.clone();
    for mut col in centred.column_iter_mut() {
        let m = col.sum() / n;
        col.add_scalar_mut(-m);
    }
    let cov = centred.transpose() * &centred / n;
    (centred, cov)
}

/// Symmetric matrix power `S^e` by eigendecomposition; `S` must be positive
/// definite.
fn sym_power(s: &DMatrix<f64>, e: f64) -> Result<DMatrix<f64>> {
    let sym = (s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.min();
    if !(min > MIN_EIGEN) {
        return Err(MicaError::RankDeficient(min));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.powf(e)));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Centre the columns and apply the symmetric inverse square root of the
/// sample covariance. Returns the whitened series and the transform `T`, so
/// that whitened rows are `T (y_t - ybar)`.
pub fn whiten(y: &SeriesMatrix) -> Result<(SeriesMatrix, DMatrix<f64>)> {
    let (centred, cov) = covariance(y.matrix());
    let t = sym_power(&cov, -0.5)?;
    // rows transform as T y_t, i.e. the matrix as Y T^T = Y T
    let w = centred * &t;
    Ok((SeriesMatrix::new(w)?, t))
}

/// The true separation matrix expressed in whitened coordinates:
/// `B = T A S^{1/2}` with `S` the sample covariance of the sources with
/// cross-group blocks zeroed, orthonormalised by QR.
pub fn adjusted_truth(
    a_true: &OrthoMatrix,
    x_true: &SeriesMatrix,
    groups: &GroupStructure,
    transform: &DMatrix<f64>,
) -> Result<OrthoMatrix> {
    let p = a_true.dim();
    if x_true.ncols() != p || groups.p() != p || transform.nrows() != p || transform.ncols() != p {
        return Err(MicaError::DimensionMismatch("adjusted_truth inputs disagree on p".into()));
    }
    let (_, mut cov) = covariance(x_true.matrix());
    let assign = groups.assignment();
    for i in 0..p {
        for j in 0..p {
            if assign[i] != assign[j] {
                cov[(i, j)] = 0.0;
            }
        }
    }
    let root = sym_power(&cov, 0.5)?;
    let b = transform * a_true.matrix() * root;
    OrthoMatrix::new(reorthonormalize(&b))
}

/// Write a matrix as CSV with a header row and 17 significant digits.
pub fn write_matrix_csv<W: Write>(out: &mut W, header: &[String], m: &DMatrix<f64>) -> io::Result<()> {
    writeln!(out, "{}", header.join(","))?;
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:.16e}", m[(i, j)])).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

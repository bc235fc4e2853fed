//! Observed multivariate series: rows are time points, columns are coordinates.

use nalgebra::DMatrix;

use crate::error::{MicaError, Result};

/// An `n x p` matrix of finite observations with rows indexed by time.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesMatrix(DMatrix<f64>);

impl SeriesMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() < 2 {
            return Err(MicaError::SampleTooSmall(format!(
                "series needs at least 2 rows, got {}",
                values.nrows()
            )));
        }
        if values.ncols() == 0 {
            return Err(MicaError::DimensionMismatch("series has no columns".into()));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(MicaError::NonFinite("series"));
        }
        Ok(Self(values))
    }

    /// Build from row-major data, one inner vector per time point.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(MicaError::DimensionMismatch("ragged rows".into()));
        }
        Self::new(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
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

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn column(&self, j: usize) -> &[f64] {
        let n = self.0.nrows();
        &self.0.as_slice()[j * n..(j + 1) * n]
    }

    /// Row-wise projection `x_t = Q^T y_t`, i.e. the matrix product `Y Q`.
    pub fn project(&self, q: &DMatrix<f64>) -> Result<SeriesMatrix> {
        if q.nrows() != self.ncols() {
            return Err(MicaError::DimensionMismatch(format!(
                "projection has {} rows, series has {} columns",
                q.nrows(),
                self.ncols()
            )));
        }
        Ok(SeriesMatrix(&self.0 * q))
    }
}

impl AsRef<DMatrix<f64>> for SeriesMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

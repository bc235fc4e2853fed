//! Mean independent component analysis (MICA) and group MICA for
//! multivariate time series.
//!
//! The separation matrix is estimated by minimising sums of sample
//! martingale difference divergences between projected components (and their
//! lags) over the orthogonal group.

pub mod assignment;
pub mod error;
pub mod experiment;
pub mod gmica;
pub mod groups;
pub mod lhs;
pub mod mdd;
pub mod mica;
pub mod numeric;
pub mod objective;
mod optim;
pub mod ortho;
pub mod series;
pub mod simgen;

pub use error::{MicaError, Result};
pub use series::SeriesMatrix;

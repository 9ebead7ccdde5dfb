//! Multivariate L-moments built from monotone transport maps.
//!
//! The crate covers the polynomial bases, the empirical Rosenblatt
//! estimators, a semi-discrete optimal transport solver, transport-based
//! estimators and a set of analytic reference models.

pub mod error;
pub mod estimators;
pub mod mc;
pub mod models;
pub mod polybasis;
pub mod quadrature;
pub mod rosenblatt;
pub mod sample;
pub mod transport;

pub use error::{Error, Result};
pub use mc::SourceKind;
pub use polybasis::MultiIndex;
pub use sample::SampleMatrix;

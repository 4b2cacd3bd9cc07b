//! Spectral-stability laboratory for a single-layer, single-head attention
//! classifier.
//!
//! The crate bundles everything needed to watch the trace-normalized singular
//! value spectrum of the query/key/value projections settle during training:
//!
//! * [`linalg`] – dense row-major matrices and a one-sided Jacobi SVD.
//! * [`spectral`] – singular distributions, SD variation, norm bundles.
//! * [`model`] – the attention classifier with analytic gradients.
//! * [`optim`] – GD, AdamW and Muon with decoupled weight decay, plus schedules.
//! * [`telemetry`] – per-step metrics, threshold prediction, phase detection.
//! * [`verification`] – seeded numerical certification of the supporting
//!   inequalities.
//! * [`io`] – snapshot/trace/config/manifest formats, SVG reports, the CLI.

pub mod error;
pub mod io;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod rng;
pub mod spectral;
pub mod telemetry;
pub mod train;
pub mod verification;

pub use error::{Error, Result};
pub use linalg::DenseMatrix;

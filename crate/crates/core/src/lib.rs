//! Gradient-free training of linearized graph convolutional networks.
//!
//! Graph filters (SGC, SSGC, DGC) turn a graph and its node features into a
//! propagated feature matrix; a closed-form kernel ridge solve then fits the
//! node classifier with no gradient descent. A logistic-regression baseline
//! trained by gradient descent and a set of diagnostics for the shrinking
//! scale of deep filters are included for comparison.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix it to `f64`, which is what the CLI and file formats use.

pub mod data;
pub mod dense;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod filters;
pub mod graph;
pub mod kernel;
pub mod linalg;
pub mod logreg;
pub mod scalar;

pub use error::{Error, ErrorKind, Result};
pub use filters::{FilterConfig, FilterKind, DEFAULT_TAU, DEFAULT_TERMINAL_TIME};
pub use graph::{Connectivity, NormKind};
pub use scalar::Scalar;

pub type Matrix = dense::Dense<f64>;
pub type Graph = graph::Graph<f64>;
pub type NormalizedAdjacency = graph::NormalizedAdjacency<f64>;
pub type FilterMatrix = filters::FilterMatrix<f64>;
pub type KernelModel = kernel::KernelModel<f64>;
pub type LogRegModel = logreg::LogRegModel<f64>;

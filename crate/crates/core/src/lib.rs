//! Softmax and its polynomial and soft-margin alternatives.
//!
//! The crate is organized bottom-up:
//!
//! - [`taylor_poly`]: truncated Taylor series of `exp`, positivity and overflow guards.
//! - [`activations`]: probability maps (softmax, Taylor softmax, SM-softmax, SM-Taylor softmax).
//! - [`losses`]: cross-entropy for every variant with analytic logit gradients.
//! - [`gradcheck`]: central-difference oracle for losses and whole networks.
//! - [`nn`]: a small dense/conv network with SGD, used to compare the heads.
//! - [`data`]: MNIST IDX reader/writer, stratified subsets, Gaussian blobs.
//! - [`experiment`]: training runs, margin and order sweeps, and their output files.
//!
//! ```
//! use taylor_softmax::activations::{taylor_softmax, LogitVector};
//! use taylor_softmax::taylor_poly::TaylorOrder;
//!
//! let z = LogitVector::new(vec![1.0, -1.0]).unwrap();
//! let p = taylor_softmax(&z, TaylorOrder::new(2).unwrap());
//! assert!((p[0] - 2.5 / 3.0).abs() < 1e-15);
//! ```

pub mod activations;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod losses;
pub mod nn;
pub mod taylor_poly;

pub use activations::{LogitVector, Margin, ProbabilityVector, VariantConfig, VariantKind};
pub use error::{Error, Result};
pub use losses::{LossGrad, TargetVector};
pub use taylor_poly::TaylorOrder;

/// Library version recorded in experiment outputs.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

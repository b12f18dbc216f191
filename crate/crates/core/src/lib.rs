//! Score-conditioned latent editing of procedurally rendered faces.

// `!(a < b)` is used on purpose so NaN falls on the rejecting side.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![cfg_attr(test, allow(clippy::needless_range_loop))]

pub mod attribute;
pub(crate) mod binfmt;
pub mod bundle;
pub mod error;
pub mod flow;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod predictor;
pub mod rng;
pub mod spectrum;
pub mod world;

pub use attribute::AttributeKind;
pub use bundle::ModelBundle;
pub use error::{Error, Result};

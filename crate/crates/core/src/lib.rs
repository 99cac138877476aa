//! Physics-informed network toolkit: second-order spatial jets on a batched
//! parameter tape, residual specifications, neural tangent kernel diagnostics
//! and first- and second-order optimizers.

pub mod error;
pub mod jets;
pub mod kernel;
pub mod linalg;
pub mod net;
pub mod optim;
pub mod pde;
pub mod rng;

pub use error::{Error, Result};

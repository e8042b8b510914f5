#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod cyclegan;
pub mod distill;
pub mod error;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod phantom;
pub mod probes;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::LabRng;

//! Minimal reverse-mode automatic differentiation over dense `f64` arrays.

mod gradcheck;
mod graph;
mod kernels;
mod layout;
mod params;
mod value;

pub use gradcheck::{finite_diff_check, finite_diff_check_tensors, op_probe};
pub use graph::{selu, sigmoid, BnUpdate, Gradients, Graph, OpKind, Unary, Var, BN_EPS, BN_MOMENTUM, SELU_ALPHA, SELU_LAMBDA};
pub use kernels::ConvGeometry;
pub use layout::{permute_index, PatchLayout};
pub use params::{Adam, AdamConfig, Param, ParamId, ParamStore};
pub use value::Tensor;

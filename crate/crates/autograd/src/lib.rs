//! Reverse-mode automatic differentiation for the small dense networks used
//! by the extraction pipeline: elementwise maps, matrix products, grouped
//! convolutions, fused GRUs and user-supplied custom operations.

pub use num_traits;

pub mod conv;
pub mod gru;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use conv::ConvGeom;
pub use optim::{clip_global_norm, global_norm, Adam};
pub use params::{BoundParams, ParamId, ParamStore};
pub use scalar::{gemm, lit, Scalar, Trans};
pub use tape::{softmax, CustomOp, Gradients, Tape, Var};
pub use tensor::Tensor;

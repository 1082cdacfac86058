//! Dense tensors, the differentiable operations the observer needs, a
//! reverse-mode tape, and numerical verification helpers.

pub mod conv;
mod dense;
pub mod gradcheck;
pub mod params;
mod scalar;
pub mod spectral;
pub mod tape;

pub use conv::{conv2d, conv_transpose2d, ConvGeom};
pub use dense::Tensor;
pub use gradcheck::{finite_diff_check, GradCheckOptions, GradCheckReport};
pub use params::{Binding, Init, ParamId, ParamStore, Parameter};
pub use scalar::{gemm, DType, Mat, Scalar};
pub use spectral::{spectral_norm, OperatorGeometry, SpectralEstimate};
pub use tape::{Gradients, Tape, Var};

//! Coded distributed 2D convolution.
//!
//! A convolutional layer is split along the output width into `k` equal
//! pieces, the overlapping input partitions are expanded into `n` coded
//! partitions with a real Vandermonde `(n, k)`-MDS code, and any `k` worker
//! results decode back into the exact layer output. The split `k` is chosen by
//! minimising a shift-exponential latency model; a Monte Carlo simulator
//! evaluates the strategies under straggling and failures.
//!
//! Tensor, convolution and codec code is generic over the [`Scalar`] type;
//! the aliases below fix the common precisions.

pub mod coded;
pub mod conv;
pub mod error;
pub mod latency;
mod linalg;
pub mod lt;
pub mod mds;
pub mod optimizer;
pub mod scalar;
pub mod simulator;
pub mod splitter;
pub mod tensor;

pub use coded::{coded_forward, CodedLayer};
pub use conv::{conv2d, output_dims, ConvSpec, LayerGeometry};
pub use error::{Error, Result};
pub use latency::{PhaseProfile, ShiftExp, WorkloadSizes};
pub use mds::GenerationMatrix;
pub use optimizer::SystemParams;
pub use scalar::Scalar;
pub use splitter::{plan_balanced, plan_split, PieceRange, SplitPlan};
pub use tensor::Tensor4;

/// Payload-precision tensor (the wire and container format carry `f32`).
pub type Tensor = Tensor4<f32>;
/// Double-precision tensor.
pub type Tensor64 = Tensor4<f64>;
/// Payload-precision convolution layer.
pub type Conv = ConvSpec<f32>;
/// Double-precision convolution layer.
pub type Conv64 = ConvSpec<f64>;

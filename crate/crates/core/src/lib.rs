//! Partition-based normalization engine.
//!
//! Every normalizer handled here — batch, ghost-batch, group, and
//! batch-group — is expressed as a [`StatPartition`]: an assignment of
//! each cell of a 4-axis tensor to exactly one statistics group. Forward
//! and backward passes, moving-moment tracking, the example-weighted
//! inference blend, weight decay on the affine parameters, and the
//! output-range bounds all operate on that single abstraction.
//!
//! All math is generic over the scalar type via [`Scalar`]; the type
//! aliases exported at the crate root pin `f64`, which is the only
//! precision the shipped tooling uses (the gradient checks require it).

pub mod bounds;
pub mod error;
pub mod layers;
pub mod moments;
pub mod partition;
pub mod regularize;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use bounds::{layer_bound, output_bound, tightness_value, RangeTracker, TightnessProbe};
pub use layers::{backward, finite_diff_check, forward_infer, forward_train};
pub use moments::{blend, compute_moments};
pub use partition::{partition_of, reduces_to, Mode, NormKind, NormScheme, StatPartition};
pub use regularize::{decay_step, decay_weights, GammaTarget, WeightDecayConfig};

/// 4-axis tensor in the default (and only shipped) precision.
pub type Tensor4 = tensor::Tensor4<f64>;
/// Per-group mean/variance statistics in the default precision.
pub type Moments = moments::Moments<f64>;
/// Exponential moving raw moments in the default precision.
pub type MovingMoments = moments::MovingMoments<f64>;
/// Per-channel scale/shift parameters in the default precision.
pub type NormParams = layers::NormParams<f64>;
/// Saved forward state in the default precision.
pub type ForwardCache = layers::ForwardCache<f64>;
/// Gradients of one normalization layer in the default precision.
pub type GradientBundle = layers::GradientBundle<f64>;

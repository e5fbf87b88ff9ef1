//! Layer primitives with hand-derived backward passes.
//!
//! Every layer works on NHWC [`Tensor4`](crate::Tensor4) values and is
//! generic over [`Scalar`](crate::Scalar) so the same code runs in `f32` for
//! training and in `f64` for finite-difference checks.

mod activation;
mod batchnorm;
mod conv;
mod deconv;
mod init;
mod pool;

pub use activation::{relu, relu_backward, sigmoid, sigmoid_backward};
pub use batchnorm::{BatchNorm, BnCache, BnGrads, BnMode, BN_EPSILON, BN_MOMENTUM};
pub use conv::{Conv2d, ConvGrads, Padding};
pub use deconv::{ConvTranspose2x2, DeconvGrads};
pub use init::{he_normal, init_params};
pub use pool::{maxpool2_backward, maxpool2_forward, PoolIndexMap};

//! Suction grasp region prediction from RGB, RGB-D and RGB-Points input.
//!
//! The crate is `no_std` with `alloc`. It holds the numerical pieces of the
//! pipeline: a dense NHWC tensor with hand-derived layer passes, the U-net
//! assembled from them, pinhole back-projection and input assembly, label
//! handling and augmentation, the weighted cross-entropy training loop,
//! probability-map post-processing, precision metrics and a ray-cast
//! synthetic bin scene generator. File formats and the command line live in
//! the `suction` companion crate.
#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_op_in_unsafe_fn)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

mod error;
mod grid;
mod linalg;
mod math;
mod scalar;
mod tensor;

pub mod dataset;
pub mod evaluation;
pub mod geometry;
pub mod nn;
pub mod postprocess;
pub mod synth;
pub mod training;
pub mod unet;

pub use error::{Error, Result};
pub use grid::Grid;
pub use scalar::Scalar;
pub use tensor::{Dims, Tensor4};
pub use unet::{InputMode, UNet};

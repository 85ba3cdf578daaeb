//! Mergeable Count Sketch with a differential-privacy accountant, and a
//! deterministic simulator of sketch-compressed distributed SGD and
//! federated averaging.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common choice.
//!
//! - [`hashing`]: seeded multiply-add-shift index and sign hashes.
//! - [`sketch`]: the counter table, its queries, merge and scale.
//! - [`wire`]: the `DSK1` binary format.
//! - [`privacy`]: the per-round `eps` accountant and the validation step.
//! - [`learn`]: convex models and the two training protocols.
//! - [`data`]: synthetic partitions, CSV I/O and gradient histograms.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod hashing;
pub mod learn;
pub mod metrics;
pub mod privacy;
pub mod rng;
pub mod scalar;
pub mod sketch;
pub mod wire;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use sketch::{CountSketch, DenseVector, SketchDims};

pub type CountSketch64 = CountSketch<f64>;
pub type CountSketch32 = CountSketch<f32>;
pub type DenseVector64 = DenseVector<f64>;
pub type DenseVector32 = DenseVector<f32>;
pub type GradientStats64 = privacy::GradientStats<f64>;
pub type PrivacyReport64 = privacy::PrivacyReport<f64>;
pub type Dataset64 = data::Dataset<f64>;
pub type Partition64 = data::Partition<f64>;
pub type TrainConfig64 = learn::TrainConfig<f64>;
pub type LossSpec64 = learn::LossSpec<f64>;

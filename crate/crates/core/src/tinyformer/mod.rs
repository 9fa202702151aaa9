//! A tiny Transformer encoder classifier over raw packet bytes.
//!
//! The numeric core is generic over [`Real`] so that the same code runs in
//! `f32` for training and inference and in `f64` for gradient checks.

mod adam;
mod archive;
mod config;
pub mod gradcheck;
mod loss;
mod model;
pub mod ops;
pub mod pe;
mod train;
mod weights;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive};
use thiserror::Error;

pub use adam::{Adam, AdamConfig};
pub use archive::{
    load_weights, read_weights, save_weights, write_weights, ARCHIVE_MAGIC, ARCHIVE_VERSION,
};
pub use config::{ModelConfig, NormStyle, PeFamily, PeKind, RopeDenominator};
pub use loss::{edl_loss, edl_loss_grad, edl_weight, EdlConfig};
pub use model::{backward, forward, predict, BlockTrace, ForwardTrace, Mode};
pub use train::{train, EpochStats, TrainConfig, TrainOutput};
pub use weights::{Affine, BlockWeights, LayerNorm, ModelWeights, ParamGroup, TensorView};

/// Trainable parameters of the reference configuration, PE excluded.
pub const REFERENCE_PARAM_COUNT: usize = 5_086;

/// Floating-point scalar the model is generic over.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` constant into `T`.
#[inline]
pub fn cst<T: Real>(v: f64) -> T {
    T::from_f64(v).expect("representable constant")
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite activation in {0}")]
    NonFiniteActivation(String),
    #[error("label/length mismatch: {0}")]
    LabelMismatch(String),
    #[error("unsupported archive version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("archive checksum mismatch")]
    ChecksumMismatch,
    #[error("training set is empty")]
    EmptyDataset,
    #[error("malformed archive: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

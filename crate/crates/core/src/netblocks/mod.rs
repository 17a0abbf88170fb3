//! Inverted-residual teacher/student networks.
//!
//! A [`ModelSpec`] describes a network as an ordered list of blocks numbered
//! as in the reference MobileNetV2 layout (0 = stem, 1..=17 = inverted
//! residuals, 18 = final 1×1 ConvBNReLU, 19 = classifier). Students are
//! derived by dropping inverted residuals from the end; see
//! [`derive_student`].

pub mod checkpoint;
pub mod model;
pub mod spec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, model_fingerprint, save_checkpoint,
};
pub use model::{Model, ModelGrad};
pub use spec::{
    build_teacher_spec, compression_factor, derive_student, BlockKind, BlockSpec, CompressionPlan,
    ModelSpec, PlanEntry, StageSetting, WidthConfig,
};

use crate::error::Result;
use crate::tensor::Real;

pub fn build_teacher<T: Real>(
    num_classes: usize,
    family: &WidthConfig,
    seed: u64,
) -> Result<Model<T>> {
    let spec = build_teacher_spec(num_classes, family)?;
    Model::new(spec, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn build_student<T: Real>(
    teacher: &ModelSpec,
    n_blocks_removed: usize,
    seed: u64,
) -> Result<Model<T>> {
    Model::new(
        derive_student(teacher, n_blocks_removed)?,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
}

//! Restoration networks, self-supervised training pairs, training and
//! whole-volume restoration.
//!
//! Lateral (XY) slices are degraded with a 2D kernel h̃ and subsampled
//! along their columns to synthesize inputs; at inference, XZ slices are
//! transposed so the axial direction runs along columns as well.

pub mod model;
pub mod pairs;
pub mod restore;
pub mod train;

pub use model::{build_model, ModelKind};
pub use pairs::{
    allowed_symmetries, augment, make_training_pairs, PairConfig, PairSet, PatchPair, PsfStrategy,
    StrategyMode, Symmetry,
};
pub use restore::{predict_images, restore_volume, ModelMeta, RestoreOptions, TrainedModel};
pub use train::{evaluate, split_by_slice, train, LossHistory};

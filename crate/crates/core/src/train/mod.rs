//! Patch extraction, the Adam optimizer and the training loop.

pub mod adam;
pub mod patches;
pub mod trainer;

pub use adam::{
    adam_step, adam_update, decode_optimizer, encode_optimizer, load_optimizer, save_optimizer, AdamConfig,
    AdamState, OptimizerCheckpoint,
};
pub use patches::{
    degraded_input, extract_patches, image_pairs, prepare_archive, tile_count, tile_origins, write_archive,
    ArchiveWriter, Pair, PatchArchive, PatchConfig, PatchSet, PatchSource,
};
pub use trainer::{checkpoint_paths, mse_loss, EpochSampler, LossHistory, StepReport, TrainConfig, Trainer};

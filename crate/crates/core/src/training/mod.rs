//! Losses, the Adam optimizer and the two-stage training loop.

mod adam;
mod config;
mod losses;
mod pipeline;
mod run_dir;
mod trainer;

pub use adam::{Adam, BETA1, BETA2, EPSILON};
pub use config::TrainConfig;
pub use losses::{
    recon_loss_full, recon_loss_full_value, recon_loss_masked, recon_loss_masked_value, total_loss, total_loss_value,
};
pub use pipeline::{run_pipeline, RunArtifacts};
pub use run_dir::{read_losses_csv, write_losses_csv, EffectiveConfig, RunFiles};
pub use trainer::{train_stage1, train_stage1_with, train_stage2, EpochLoss, Stage1Output, Stage2Output};

#[cfg(test)]
mod tests;

//! Loss terms, the Adam optimizer, the training loop and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod loss;
pub mod trainer;

pub use adam::{Adam, AdamConfig, StepOutcome};
pub use checkpoint::{canonical_json, config_diff, Checkpoint};
pub use loss::{batch_loss, compute_losses, loss_on_tape, LossBreakdown, LossVars, LossWeights};
pub use trainer::{evaluate_loss, gather, split_frames, EpochStats, MetricsLog, Trainer};

//! L_simple training: AdamW, EMA shadow weights, checkpoints and the loss log.

mod checkpoint;
mod config;
mod gradcheck;
mod loss;
mod optim;
mod run;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::TrainConfig;
pub use gradcheck::loss_gradcheck;
pub use loss::{loss_simple, loss_simple_with, LossOutput, Sample};
pub use optim::{adamw_step, clip_grad_norm, EmaState, OptimState};
pub use run::{
    epoch_order, loss_spikes, samples_from_dataset, steps_per_epoch, train_loop, TrainRun,
    CHECKPOINT_FILE, HALT_FILE, LOG_FILE,
};

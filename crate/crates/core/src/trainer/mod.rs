//! Optimisation: Adam, minibatch mixing, classifier epochs with early
//! stopping, adversarial training and checkpoint persistence.

mod batching;
mod checkpoint;
mod epoch;
mod gan;
mod optim;

pub use batching::{batch_split, mix_minibatch, plan_epoch, MixedBatch};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, write_atomic, ModelCheckpoint, RawCheckpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use epoch::{
    accuracy_from_probs, early_stop_loop, evaluate_accuracy, train_epoch, validation_loss, EarlyStopOutcome,
    EpochLog, EpochMetrics, EpochSetup, HeadMode, Source, StopRule, ValidSet,
};
pub use gan::{train_gan, GanConfig, GanReport};
pub use optim::{adam_step, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

//! Loss, schedule, optimizer, training loop and evaluation.

mod config;
mod data;
mod eval;
mod fit;
mod loss;
mod optim;
mod run;

pub use config::{parse_size, TrainConfig};
pub use data::{dataset_shape, ground_truth, load_samples, TrainingSample};
pub use eval::{evaluate, evaluate_predictions, predict, Averages, DimensionMetrics, EvalReport};
pub use fit::{batch_gradient, dataset_loss, init_seed, loss_spec, train, EpochLog, TrainOutcome};
pub use loss::{multi_rater_loss, LossSpec, RaterTargets};
pub use optim::{lr_schedule, Adam};
pub use run::{
    load_splits, manifest_path, run_training, split_for_training, LoadedSplits, Splits, TrainRun, TRAIN_FRACTION,
};

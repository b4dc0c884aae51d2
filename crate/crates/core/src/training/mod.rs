//! Classifier pretraining, shuffle synthesis and the alternating
//! critic / generator / classifier loop.

mod config;
mod datasets;
mod optim;
mod shuffle;
pub(crate) mod trainer;

pub use config::{
    parse_config, validate_config, ClassifierMode, DataConfig, OptimizerConfig, RunConfig, ScheduleConfig, ShuffleMode,
};
pub use datasets::load_datasets;
pub use optim::{Adam, AdamHyper};
pub use shuffle::{sample_shuffle, shuffle_bundle, synthesize_shuffled, ShuffleSpec};
pub use trainer::{
    classifier_accuracy, fit_classifiers, train, PretrainReport, TrainOutcome, Trainer, CHECKPOINT_DIR, LOSS_LOG,
};

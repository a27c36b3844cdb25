//! Optimization, the training loop, and the experiment protocol.

mod adam;
mod dataset;
mod experiment;
mod sweep;
mod trainer;

pub use adam::{adam_step, AdamState};
pub use dataset::FramedData;
pub use experiment::{partition, run_experiment, ExperimentConfig, ExperimentResult, ModelRun, Partition};
pub use sweep::{modality_set_label, parse_modality_set, run_sweep, run_sweep_with, SweepAxis, SweepRow, SweepTable};
pub use trainer::{
    batch_gradient, epoch_log_csv, evaluate, train, write_epoch_log, write_epoch_timing, EarlyStopping, EpochRecord,
    Evaluation, TrainConfig, TrainOutcome,
};

//! Experiment configuration, the training cycle, persistence and plot data.

pub mod config;
pub mod persist;
pub mod plot;
pub mod problem;
pub mod train;

pub use config::{
    Benchmark, ConnectConfig, ExperimentConfig, MazeConfig, NetworkConfig, Seeds, StoppingConfig,
    TrainerKind,
};
pub use persist::{MetricsFile, WeightsFile};
pub use plot::{emit_plot_data, PlotSeries};
pub use problem::{Evaluation, Instance, Problem, Sample, SetMetrics};
pub use train::{
    evaluate_record, evaluate_weights, init_weights, run_experiment, train_cycle, Experiment,
    ExperimentResult, MetricsRecord, StopReason, TrainerState, CONFIG_FILE, METRICS_FILE,
    WEIGHTS_FILE,
};

//! Experiment orchestration: synthetic data, the end-to-end pipeline with
//! its baselines, parameter sweeps, and result tables.

pub mod cache;
pub mod config;
pub mod pipeline;
pub mod results;
pub mod sweep;
pub mod synth;

pub use cache::StageCache;
pub use config::{
    BaselineToggles, ClusterfitConfig, DataSource, ExperimentConfig, FileData, FileTarget,
    PretrainConfig, ProbeSettings, RelabelStrategy,
};
pub use pipeline::{clusterfit_run, clusterfit_run_cached, restrict_top_m, PipelineData};
pub use results::{ResultRow, ResultsTable, CSV_HEADER};
pub use sweep::{parse_seeds, sweep, sweep_cached, SweepAxis};
pub use synth::{nearest_center_accuracy, synth_generate, SynthData, SynthSpec};

//! Seeded experiment runs: the round loop, baseline policies, metrics,
//! checkpoints, policy comparison and plotting.

mod compare;
mod config;
mod experiment;
mod metrics;
mod plot;
mod world;

pub use compare::{
    compare_policies, round_curve, summarize, sweep, ComparisonReport, CurvePoint, PolicyRow, RunInput, RunSummary,
    SweepEntry, SweepReport,
};
pub use config::{ExperimentConfig, LowConfidence, PolicyKind};
pub use experiment::{
    resume_experiment, run_experiment, Checkpoint, Runner, CHECKPOINT_FILE, CONFIG_FILE, METRICS_CSV, METRICS_JSON,
};
pub use metrics::{CsvSink, Format, MetricsLog, MetricsRow, COLUMNS};
pub use plot::{render_svg, smooth};
pub use world::{RoundRecord, TaskData, World};

//! Experiment orchestration: configs, pipelines, metrics and reports.

pub mod config;
pub mod metrics;
pub mod report;
pub mod runner;

pub use config::{parse_config, ExperimentConfig, ExperimentKind};
pub use metrics::{read_metrics, MetricRow, MetricsWriter, METRICS_HEADER};
pub use report::{figure_data, timing_report, FigureKind, TimingReport, TimingRow};
pub use runner::{run, Runner};

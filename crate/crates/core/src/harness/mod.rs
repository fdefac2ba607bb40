//! Metrics, comparison reports, synthetic generators and the end-to-end
//! pipeline.

pub mod config;
pub mod metrics;
pub mod pipeline;
pub mod simulate;

pub use config::PipelineConfig;
pub use metrics::{compute_metrics, ForecastSeries, MetricsReport};
pub use pipeline::{run_pipeline, ComparisonReport};

//! Experiment plans and the metrics they report.

pub mod manifest;
pub mod metrics;
pub mod plans;
pub mod scripted;
pub mod trainer;

pub use manifest::RunManifest;
pub use metrics::MetricsRecord;

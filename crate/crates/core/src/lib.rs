//! proxeval: a toolkit for evaluating ambient sensors as proximity-detection
//! and anti-relay mechanisms for contactless transactions.
//!
//! The pipeline: simulate (or ingest) three-device transaction recordings,
//! preprocess trace pairs onto a common 10 ms grid, score them with MAE and
//! Pearson correlation, sweep 100 acceptance thresholds, and extract
//! equal-error rates for the proximity-only and relay-inclusive evaluations.

pub mod eval;
pub mod harness;
pub mod preprocess;
pub mod report;
pub mod similarity;
pub mod store;
pub mod synth;
pub mod trace;

pub use trace::{DeviceRole, Sample, SampleValue, SensorKind, SensorTrace, TransactionId, TransactionTriple};

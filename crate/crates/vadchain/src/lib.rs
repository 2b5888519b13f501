//! Runtime for the chained video anomaly pipeline: configuration, model
//! backends with caching and retries, dataset loading, the detection,
//! localization and description stages, evaluation, sweeps and plots.
//!
//! The scoring math, prompt templates and metrics live in `vadchain-core`.

pub mod backend;
pub mod cache;
pub mod cli;
pub mod client;
pub mod config;
pub mod datasets;
pub mod evaluate;
pub mod media;
pub mod pipeline;
pub mod plot;
pub mod sweep;

pub use vadchain_core as core;

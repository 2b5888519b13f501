//! Pure core of the chained video anomaly analysis engine.
//!
//! Everything here is allocation-only (`alloc`) and free of IO: score-series
//! numerics, frame sampling, prompt rendering, model-reply parsers and the
//! evaluation metrics. The `vadchain` crate layers backends, caching, file
//! formats and the CLI on top.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod geometry;
pub mod metrics;
pub mod parse;
pub mod prompt;
pub mod sampling;
pub mod score;

pub use geometry::BoundingBox;
pub use prompt::{MediaRef, Message, PromptBundle, PromptKind, Role, TagList, Templates};
pub use score::{
    GateDecision, MarginMode, ScoreSeries, SeriesError, SmoothingConfig, SuspicionWindow,
};

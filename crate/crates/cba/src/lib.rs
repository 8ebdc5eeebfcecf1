//! Context-balanced biasing adapter on a synthetic long-tailed recognition
//! task: corpus generation, a frozen toy backbone, the trainable
//! cross-attention adapter, class-balanced and guidance objectives,
//! two-stage training and shot-bucketed evaluation. Everything is
//! deterministic given the configured seeds.

pub mod checkpoint;
pub mod config;
pub mod context;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod objectives;
pub mod params;
pub mod trainer;

pub use error::{Error, Result};

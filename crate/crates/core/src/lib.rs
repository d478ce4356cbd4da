//! Multimodal hateful-meme classification with cross-modal gated fusion,
//! projector banks and two staged reasoning pipelines.

pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod label;
pub mod meme;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod projector;
pub mod taxonomy;
pub mod tensor;
pub mod variants;

pub use error::{Error, Result};

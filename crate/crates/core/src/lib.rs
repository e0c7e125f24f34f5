//! Multimodal neural machine translation with a doubly-attentive conditional
//! GRU decoder, gated image context and visually grounded word embeddings.

pub mod config;
pub mod embeddings;
pub mod error;
pub mod features;
pub mod metrics;
pub mod model;
pub mod corpus;
pub mod pipeline;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};

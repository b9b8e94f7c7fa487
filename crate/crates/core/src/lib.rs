//! Contrastive self-supervised representation learning for tabular journal-entry
//! data, with frozen-encoder transfer to anomaly detection, audit sampling and
//! latent export.

pub mod anomaly;
pub mod augment;
pub mod config;
pub mod contrastive;
pub mod error;
pub mod export;
pub mod nn;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod sampling;
pub mod schema;
pub mod synthetic;

pub use error::{LensError, Result};

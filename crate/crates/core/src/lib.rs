//! Time-dependent latent-factor structural equation modelling for
//! two-indicator intensive longitudinal panels (heart rate and stress level
//! measured on a shared grid of time points).

pub mod data;
pub mod error;
pub mod estimation;
pub mod fit;
pub mod imputation;
pub mod ingest;
mod linalg;
pub mod model;
pub mod moments;
pub mod pipeline;
pub mod pooling;
pub mod simulation;

pub use error::{Error, Result};

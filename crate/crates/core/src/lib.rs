//! Core library for neonatal cortical-surface phenotype regression:
//! icosphere resampling of per-vertex features, a compact MLP trained by
//! hand-derived backpropagation, evaluation protocols, and SHAP-style
//! feature attribution.

pub mod attribution;
pub mod autonet;
pub mod dataio;
pub mod error;
pub mod evalkit;
pub mod mesh;
pub mod optim;

pub use error::{Error, Result};

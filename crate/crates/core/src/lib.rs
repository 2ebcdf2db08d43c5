//! Koopman mode decomposition of multichannel sensor records.

pub mod error;
pub mod gradient;
mod linalg;
pub mod phaseavg;
pub mod pipeline;
pub mod spectral;
pub mod synth;
pub mod timeseries;

pub use error::{Error, Result};

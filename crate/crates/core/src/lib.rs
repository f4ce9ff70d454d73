//! Wireless video semantic transmission with decoupled diffusion multi-frame
//! compensation.
//!
//! A GoP is sent as one semantic I frame plus motion-compensated residuals for
//! the P frames, all over a shared Rayleigh fading realization with MMSE
//! equalization. The receiver regenerates each P frame with a short diffusion
//! chain that reuses the reference frame's noise estimates.

pub mod channel;
pub mod data;
pub mod ddmfc;
pub mod diffusion;
pub mod error;
pub mod frame;
pub mod metrics;
pub mod models;
pub mod nnkit;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
pub use frame::SemanticFrame;

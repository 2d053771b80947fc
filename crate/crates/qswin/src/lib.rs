//! Siamese quadratic Swin transformer for image regression at desk scale:
//! a tape-based autodiff substrate, quadratic-neuron token projections
//! inside shifted-window attention, siamese pair training, reptile
//! meta-optimization, and a multi-scale patch pipeline with a synthetic
//! browning-image benchmark.

pub mod checks;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod quadratic;
pub mod reptile;
pub mod siamese;
pub mod tensor;

pub use error::{Error, Result};

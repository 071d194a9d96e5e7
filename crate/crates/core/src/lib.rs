//! Image-class translation distances: train unpaired class-translation
//! networks, measure how far each image moves when translated into every
//! class, and classify from those distances.

pub mod baseline;
pub mod checkpoint;
pub mod classify;
pub mod config;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gan;
pub mod imageio;
pub mod recipes;
pub mod seed;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod translate;

pub use error::{Error, Result};

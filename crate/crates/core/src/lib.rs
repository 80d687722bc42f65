pub mod augment;
pub mod config;
pub mod data;
pub mod dsp;
pub mod error;
pub mod experiment;
pub mod guidance;
pub mod manifest;
pub mod metrics;
pub mod nets;
pub mod pipeline;
pub mod train;
pub mod wav;

pub use error::{Result, TseError};

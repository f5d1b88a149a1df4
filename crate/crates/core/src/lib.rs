pub mod audio;
pub mod cli;
pub mod config;
pub mod container;
pub mod data;
pub mod dsp;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod heatmap;
pub mod model;
pub mod nn;
pub mod params;
pub mod tensor;
pub mod text;
pub mod train;

pub use error::{Error, Result};

pub mod config;
pub mod encoders;
pub mod error;
pub mod experiment;
pub mod fusion;
pub mod io;
pub mod nn;
pub mod pipeline;
pub mod survival;
pub mod synth;

pub use error::{Error, Result};

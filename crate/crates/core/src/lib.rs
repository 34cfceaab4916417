pub mod config;
pub mod error;
pub mod fit;
pub mod gauge;
pub mod model;
pub mod samples;
pub mod run;
pub mod scatter;
pub mod snapshot;
pub mod spectral;
pub mod stepper;
pub mod waveop;

pub use error::{Error, Result};

//! Narrow-band multichannel speech separation.

pub mod audio;
pub mod autodiff;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod model;
pub mod objective;
pub mod roomsim;
pub mod stft;
pub mod trainer;

pub use audio::WaveBuffer;
pub use error::{Error, Result};

pub mod acoustics;
pub mod baselines;
pub mod coding;
pub mod doanet;
pub mod dsp;
pub mod error;
pub mod exec;
pub mod masknet;
pub mod numerics;
pub mod pipeline;
pub mod rng;
pub mod speakers;
pub mod training;

pub use error::{Error, Result};

//! Scene simulation: image-source room impulse responses, two-microphone
//! rendering, geometric ground-truth DoA and SNR-controlled mixing.

mod mix;
mod rir;
mod scene;

pub use mix::{convolve_truncated, mix_at_snr, render, snr_of, Mixture, SignalEnergy, Stereo, PEAK_LEVEL};
pub use rir::{image_count, image_sources, simulate_rir, ImageSource, SINC_HALF_WIDTH};
pub use scene::{doa_from_geometry, sample_scene, Scene, SceneConfig, DOA_RANGE_DEG};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub type Position = [f64; 3];

pub const SPEED_OF_SOUND: f64 = 343.0;

/// Shoebox room with one reflection coefficient for all six walls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub dims: [f64; 3],
    pub beta: f64,
    pub max_order: u32,
    pub speed_of_sound: f64,
}

impl Room {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|d| !(*d > 0.0)) {
            invalid!("room dimensions must be positive: {:?}", self.dims);
        }
        if !(0.0..1.0).contains(&self.beta) {
            invalid!("reflection coefficient {} outside [0, 1)", self.beta);
        }
        if !(self.speed_of_sound > 0.0) {
            invalid!("speed of sound must be positive");
        }
        Ok(())
    }

    pub fn contains(&self, p: &Position) -> bool {
        p.iter().zip(&self.dims).all(|(x, l)| *x > 0.0 && x < l)
    }

    /// Distance from `p` to the nearest wall (negative when outside).
    pub fn wall_clearance(&self, p: &Position) -> f64 {
        p.iter()
            .zip(&self.dims)
            .map(|(x, l)| x.min(l - x))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Two-microphone array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub mics: [Position; 2],
}

impl ArrayGeometry {
    pub fn spacing(&self) -> f64 {
        distance(&self.mics[0], &self.mics[1])
    }

    pub fn center(&self) -> Position {
        let [a, b] = &self.mics;
        [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0, (a[2] + b[2]) / 2.0]
    }

    pub fn validate(&self, room: &Room) -> Result<()> {
        if !(self.spacing() > 0.0) {
            invalid!("microphones coincide");
        }
        if !self.mics.iter().all(|m| room.contains(m)) {
            invalid!("microphone outside the room");
        }
        Ok(())
    }
}

pub fn distance(a: &Position, b: &Position) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

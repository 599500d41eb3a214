use std::f64::consts::PI;

use super::{distance, Position, Room};
use crate::error::{invalid, Result};

/// Half-width of the fractional-delay filter (81 taps in total).
pub const SINC_HALF_WIDTH: i64 = 40;
const MAX_ORDER: u32 = 6;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageSource {
    pub position: Position,
    pub reflections: u32,
}

/// Images along one axis: `(1 − 2q)·x + 2nL` with `|n − q| + |n|`
/// reflections, for `q ∈ {0, 1}`.
fn axis_images(x: f64, len: f64, max_order: u32) -> Vec<(f64, u32)> {
    let n_max = i64::from(max_order);
    let mut out = Vec::new();
    for q in 0..=1i64 {
        for n in -n_max..=n_max {
            let refl = ((n - q).abs() + n.abs()) as u32;
            if refl <= max_order {
                out.push(((1 - 2 * q) as f64 * x + 2.0 * n as f64 * len, refl));
            }
        }
    }
    out
}

/// All image sources with at most `room.max_order` wall reflections.
pub fn image_sources(room: &Room, src: &Position) -> Vec<ImageSource> {
    let n = room.max_order;
    let axes: Vec<_> = (0..3).map(|a| axis_images(src[a], room.dims[a], n)).collect();
    let mut out = Vec::new();
    for &(x, rx) in &axes[0] {
        for &(y, ry) in &axes[1] {
            for &(z, rz) in &axes[2] {
                if rx + ry + rz <= n {
                    out.push(ImageSource {
                        position: [x, y, z],
                        reflections: rx + ry + rz,
                    });
                }
            }
        }
    }
    out
}

/// Number of images of order `<= n`: lattice points with L1 norm `<= n`,
/// `(2n + 1)(2n² + 2n + 3) / 3`.
pub fn image_count(n: u32) -> usize {
    let n = n as usize;
    (2 * n + 1) * (2 * n * n + 2 * n + 3) / 3
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Image-source impulse response from `src` to `mic`.
///
/// Every image adds `β^reflections / (4πr)` at delay `r/c·fs` through an
/// 81-tap Hann-windowed sinc; taps that would fall before t = 0 are dropped.
pub fn simulate_rir(room: &Room, src: &Position, mic: &Position, sample_rate: u32) -> Result<Vec<f64>> {
    room.validate()?;
    if room.max_order > MAX_ORDER {
        invalid!("max_order {} exceeds {MAX_ORDER}", room.max_order);
    }
    if !room.contains(src) || !room.contains(mic) {
        invalid!("source {src:?} or microphone {mic:?} outside room {:?}", room.dims);
    }
    if distance(src, mic) < 1e-9 {
        invalid!("source and microphone coincide");
    }
    let fs = f64::from(sample_rate);
    let taps: Vec<(f64, f64)> = image_sources(room, src)
        .into_iter()
        .filter_map(|img| {
            let gain = room.beta.powi(img.reflections as i32);
            if gain == 0.0 {
                return None;
            }
            let r = distance(&img.position, mic);
            Some((r / room.speed_of_sound * fs, gain / (4.0 * PI * r)))
        })
        .collect();
    let max_delay = taps.iter().map(|t| t.0).fold(0.0, f64::max);
    let len = max_delay.ceil() as usize + SINC_HALF_WIDTH as usize + 2;
    let mut h = vec![0.0; len];
    let width = (SINC_HALF_WIDTH + 1) as f64;
    for (delay, amp) in taps {
        let center = delay.floor() as i64;
        for n in center - SINC_HALF_WIDTH..=center + SINC_HALF_WIDTH {
            if n < 0 {
                continue;
            }
            let x = n as f64 - delay;
            let w = 0.5 * (1.0 + (PI * x / width).cos());
            h[n as usize] += amp * w * sinc(x);
        }
    }
    Ok(h)
}

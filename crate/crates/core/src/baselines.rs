//! GCC-PHAT time-delay estimation and the far-field TDOA → DoA mapping.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{invalid, Result};

/// Modulus floor in the PHAT weighting.
pub const PHAT_FLOOR: f64 = 1e-12;

/// Whitened cross-correlation at integer lags `-max_lag..=max_lag`.
///
/// `values[max_lag + lag]` is `Σ_n x1[n]·x2[n + lag]` after PHAT weighting,
/// so a positive peak lag means `x2` lags `x1`.
#[derive(Clone, Debug, PartialEq)]
pub struct GccResult {
    pub max_lag: usize,
    pub values: Vec<f64>,
    pub peak_lag: i64,
    pub peak_value: f64,
}

impl GccResult {
    pub fn at(&self, lag: i64) -> f64 {
        self.values[(lag + self.max_lag as i64) as usize]
    }
}

/// Smallest lag search range that covers every physical delay.
pub fn max_lag_for(spacing: f64, speed_of_sound: f64, sample_rate: u32) -> usize {
    (spacing * f64::from(sample_rate) / speed_of_sound).ceil() as usize
}

pub fn gcc_phat(x1: &[f64], x2: &[f64], max_lag: usize) -> Result<GccResult> {
    if x1.len() != x2.len() {
        invalid!("channel lengths differ ({} vs {})", x1.len(), x2.len());
    }
    if x1.len() < 2 * max_lag || x1.is_empty() {
        invalid!("signal length {} shorter than 2·max_lag = {}", x1.len(), 2 * max_lag);
    }
    if x1.iter().all(|v| *v == 0.0) || x2.iter().all(|v| *v == 0.0) {
        invalid!("all-zero input");
    }
    let n = (2 * x1.len()).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let lift = |x: &[f64]| {
        let mut b: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        b.resize(n, Complex64::new(0.0, 0.0));
        b
    };
    let (mut a, mut b) = (lift(x1), lift(x2));
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        let cross = *p * q.conj();
        *p = cross / cross.norm().max(PHAT_FLOOR);
    }
    inv.process(&mut a);
    // a[k] = Σ x1[m + k]·x2[m], so lag `l` reads index -l mod n.
    let values: Vec<f64> = (-(max_lag as i64)..=max_lag as i64)
        .map(|lag| a[(n as i64 - lag).rem_euclid(n as i64) as usize].re / n as f64)
        .collect();
    let (idx, peak_value) = values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
    if !peak_value.is_finite() {
        invalid!("non-finite correlation");
    }
    Ok(GccResult {
        max_lag,
        peak_lag: idx as i64 - max_lag as i64,
        peak_value,
        values,
    })
}

/// `θ = arccos(c·τ/d)` in degrees. Overshoots of at most one sample period
/// are clamped with a warning.
pub fn tdoa_to_doa(tau: f64, spacing: f64, speed_of_sound: f64, sample_rate: u32) -> Result<f64> {
    if !(spacing > 0.0) || !(speed_of_sound > 0.0) || !tau.is_finite() {
        invalid!("bad TDOA inputs (tau {tau}, d {spacing}, c {speed_of_sound})");
    }
    let limit = spacing / speed_of_sound;
    if tau.abs() > limit {
        if tau.abs() - limit > 1.0 / f64::from(sample_rate) + 1e-15 {
            invalid!("|tau| = {} s exceeds d/c = {limit} s by more than one sample", tau.abs());
        }
        log::warn!("clamping tau {tau} to ±{limit}");
    }
    Ok((speed_of_sound * tau / spacing).clamp(-1.0, 1.0).acos().to_degrees())
}

/// Converts a GCC peak lag to TDOA `arrival(mic1) − arrival(mic2)`.
pub fn lag_to_tdoa(lag: i64, sample_rate: u32) -> f64 {
    -(lag as f64) / f64::from(sample_rate)
}

/// Worst-case angle error from a one-sample TDOA error at true angle
/// `theta_deg`, for an integer-lag estimator.
pub fn lag_quantization_bound(theta_deg: f64, spacing: f64, speed_of_sound: f64, sample_rate: u32) -> f64 {
    let tau = spacing * theta_deg.to_radians().cos() / speed_of_sound;
    let step = 1.0 / f64::from(sample_rate);
    [tau - step, tau + step]
        .iter()
        .map(|t| {
            let th = (speed_of_sound * t / spacing).clamp(-1.0, 1.0).acos().to_degrees();
            (th - theta_deg).abs()
        })
        .fold(0.0, f64::max)
}

/// GCC-PHAT DoA estimate for one stereo clip.
pub fn gcc_phat_doa(x1: &[f64], x2: &[f64], spacing: f64, speed_of_sound: f64, sample_rate: u32) -> Result<f64> {
    let l = max_lag_for(spacing, speed_of_sound, sample_rate);
    let r = gcc_phat(x1, x2, l)?;
    tdoa_to_doa(lag_to_tdoa(r.peak_lag, sample_rate), spacing, speed_of_sound, sample_rate)
}

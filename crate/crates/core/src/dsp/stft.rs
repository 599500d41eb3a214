use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use super::Waveform;
use crate::error::{invalid, Error, Result};
use crate::numerics::Tensor;

/// Symmetric Hann window `w[k] = 0.5 (1 − cos(2πk/(n−1)))`.
pub fn hann_window(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        invalid!("Hann window needs n >= 2, got {n}");
    }
    let m = (n - 1) as f64;
    Ok((0..n).map(|k| 0.5 * (1.0 - (2.0 * PI * k as f64 / m).cos())).collect())
}

/// Complex one-sided STFT, `F = win/2 + 1` bins by `T` frames.
///
/// Frame `t` covers samples `[t·hop, t·hop + win)`; there is no padding, so
/// `T = ⌊(len − win)/hop⌋ + 1`. Storage is frame-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    n_freq: usize,
    n_frames: usize,
    pub win: usize,
    pub hop: usize,
    data: Vec<Complex64>,
}

impl Spectrogram {
    pub fn n_freq(&self) -> usize {
        self.n_freq
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn get(&self, f: usize, t: usize) -> Complex64 {
        self.data[t * self.n_freq + f]
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.n_freq..(t + 1) * self.n_freq]
    }

    pub fn magnitude(&self) -> TfGrid {
        self.map(|c| c.norm())
    }

    pub fn phase(&self) -> TfGrid {
        self.map(wrapped_arg)
    }

    fn map(&self, f: impl Fn(Complex64) -> f64) -> TfGrid {
        TfGrid {
            n_freq: self.n_freq,
            n_frames: self.n_frames,
            data: self.data.iter().map(|&c| f(c)).collect(),
        }
    }
}

/// Phase in (−π, π]; `atan2` returns −π for a negative real axis with a
/// negative-zero imaginary part, which is folded to +π.
fn wrapped_arg(c: Complex64) -> f64 {
    let a = c.arg();
    if a <= -PI {
        a + 2.0 * PI
    } else {
        a
    }
}

/// Real-valued time-frequency grid, indexed `(f, t)`, stored frame-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TfGrid {
    n_freq: usize,
    n_frames: usize,
    data: Vec<f64>,
}

impl TfGrid {
    pub fn new(n_freq: usize, n_frames: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_freq * n_frames {
            return Err(Error::shape("TfGrid", &[n_freq, n_frames], &[data.len()]));
        }
        Ok(Self { n_freq, n_frames, data })
    }

    pub fn filled(n_freq: usize, n_frames: usize, v: f64) -> Self {
        Self {
            n_freq,
            n_frames,
            data: vec![v; n_freq * n_frames],
        }
    }

    /// From a `[T × F]` tensor.
    pub fn from_frames(t: &Tensor) -> Self {
        Self {
            n_freq: t.cols(),
            n_frames: t.rows(),
            data: t.data().to_vec(),
        }
    }

    pub fn n_freq(&self) -> usize {
        self.n_freq
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn dims(&self) -> [usize; 2] {
        [self.n_freq, self.n_frames]
    }

    pub fn get(&self, f: usize, t: usize) -> f64 {
        self.data[t * self.n_freq + f]
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.n_freq..(t + 1) * self.n_freq]
    }

    /// Frame-major values, i.e. `data[t * F + f]`.
    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `[T × F]` tensor view (copy) for the networks.
    pub fn to_frames_tensor(&self) -> Tensor {
        Tensor::matrix(self.n_frames, self.n_freq, self.data.clone()).expect("consistent dims")
    }

    pub fn zip_map(&self, other: &TfGrid, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<TfGrid> {
        if self.dims() != other.dims() {
            return Err(Error::shape(op, &self.dims(), &other.dims()));
        }
        Ok(TfGrid {
            n_freq: self.n_freq,
            n_frames: self.n_frames,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> TfGrid {
        TfGrid {
            n_freq: self.n_freq,
            n_frames: self.n_frames,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }
}

pub fn frame_count(len: usize, win: usize, hop: usize) -> usize {
    if len < win {
        0
    } else {
        (len - win) / hop + 1
    }
}

pub fn stft(x: &Waveform, win: usize, hop: usize) -> Result<Spectrogram> {
    if hop == 0 {
        invalid!("hop must be positive");
    }
    if x.len() < win {
        invalid!("signal of {} samples is shorter than one {win}-sample window", x.len());
    }
    let window = hann_window(win)?;
    let n_freq = win / 2 + 1;
    let n_frames = frame_count(x.len(), win, hop);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(win);
    let mut buf = vec![Complex64::new(0.0, 0.0); win];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut data = Vec::with_capacity(n_freq * n_frames);
    for t in 0..n_frames {
        let start = t * hop;
        for (k, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(x.samples[start + k] * window[k], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        data.extend_from_slice(&buf[..n_freq]);
    }
    Ok(Spectrogram {
        n_freq,
        n_frames,
        win,
        hop,
        data,
    })
}

pub fn magnitude(spec: &Spectrogram) -> TfGrid {
    spec.magnitude()
}

pub fn phase(spec: &Spectrogram) -> TfGrid {
    spec.phase()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wave(samples: Vec<f64>) -> Waveform {
        Waveform::new(samples, 16_000)
    }

    #[test]
    fn hann_examples() {
        let w = hann_window(400).unwrap();
        assert_eq!(w[0], 0.0);
        let w401 = hann_window(401).unwrap();
        assert!((w401[200] - 1.0).abs() < 1e-15);
        assert!(hann_window(1).is_err());
    }

    #[test]
    fn hann_sum_matches_direct_summation() {
        // Σ 0.5(1 − cos(2πk/399)) over k = 0..399: the cosine sum over a
        // full period of 399 steps plus the duplicated endpoint is 1.
        let direct: f64 = (0..400)
            .map(|k| 0.5 - 0.5 * (2.0 * PI * k as f64 / 399.0).cos())
            .sum();
        let s: f64 = hann_window(400).unwrap().iter().sum();
        assert!((s - 199.5).abs() < 1e-9, "{s}");
        assert!((s - direct).abs() < 1e-12);
    }

    #[test]
    fn frame_arithmetic() {
        let s = stft(&wave(vec![0.0; 16_000]), 400, 160).unwrap();
        assert_eq!((s.n_freq(), s.n_frames()), (201, 98));
        assert!(stft(&wave(vec![0.0; 399]), 400, 160).is_err());
    }

    #[test]
    fn constant_signal_lands_in_dc() {
        let s = stft(&wave(vec![1.0; 4000]), 400, 160).unwrap();
        let m = s.magnitude();
        for t in 0..m.n_frames() {
            let dc = m.get(0, t);
            for f in 2..m.n_freq() {
                assert!(20.0 * (m.get(f, t) / dc).log10() < -60.0);
            }
        }
    }

    #[test]
    fn complex_views() {
        let c = Complex64::new(3.0, 4.0);
        assert_eq!(c.norm(), 5.0);
        assert_eq!(wrapped_arg(Complex64::new(2.0, 0.0)), 0.0);
        assert_eq!(wrapped_arg(Complex64::new(-1.0, -0.0)), PI);
    }
}

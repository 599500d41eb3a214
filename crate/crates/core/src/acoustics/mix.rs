use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dsp::Waveform;
use crate::error::{invalid, Result};

pub const PEAK_LEVEL: f64 = 0.9;

/// Two-channel signal; channel 0 is microphone 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Stereo {
    pub channels: [Vec<f64>; 2],
    pub sample_rate: u32,
}

impl Stereo {
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels[0].is_empty()
    }

    pub fn channel(&self, i: usize) -> Waveform {
        Waveform::new(self.channels[i].clone(), self.sample_rate)
    }

    pub fn scaled(&self, k: f64) -> Stereo {
        Stereo {
            channels: [
                self.channels[0].iter().map(|v| v * k).collect(),
                self.channels[1].iter().map(|v| v * k).collect(),
            ],
            sample_rate: self.sample_rate,
        }
    }

    pub fn padded(&self, len: usize) -> Stereo {
        let mut s = self.clone();
        for c in &mut s.channels {
            c.resize(len, 0.0);
        }
        s
    }

    pub fn peak(&self) -> f64 {
        self.channels
            .iter()
            .flatten()
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }
}

/// Total energy, summed over channels.
pub trait SignalEnergy {
    fn energy(&self) -> f64;
}

impl SignalEnergy for [f64] {
    fn energy(&self) -> f64 {
        self.iter().map(|v| v * v).sum()
    }
}

impl SignalEnergy for Vec<f64> {
    fn energy(&self) -> f64 {
        self.as_slice().energy()
    }
}

impl SignalEnergy for Waveform {
    fn energy(&self) -> f64 {
        self.samples.energy()
    }
}

impl SignalEnergy for Stereo {
    fn energy(&self) -> f64 {
        self.channels[0].energy() + self.channels[1].energy()
    }
}

/// `10·log10(Σ s² / Σ n²)`.
pub fn snr_of<S: SignalEnergy + ?Sized, N: SignalEnergy + ?Sized>(s: &S, n: &N) -> Result<f64> {
    let (ps, pn) = (s.energy(), n.energy());
    if !(ps > 0.0) || !(pn > 0.0) {
        invalid!("SNR needs non-zero energies (signal {ps}, noise {pn})");
    }
    Ok(10.0 * (ps / pn).log10())
}

/// Linear convolution of `x` with `h`, truncated to `x.len()` samples.
pub fn convolve_truncated(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return vec![0.0; x.len()];
    }
    if h.len() <= 32 {
        let mut y = vec![0.0; x.len()];
        for (k, hk) in h.iter().enumerate().filter(|(_, v)| **v != 0.0) {
            for n in k..x.len() {
                y[n] += hk * x[n - k];
            }
        }
        return y;
    }
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let lift = |v: &[f64]| {
        let mut b: Vec<Complex64> = v.iter().map(|&s| Complex64::new(s, 0.0)).collect();
        b.resize(n, Complex64::new(0.0, 0.0));
        b
    };
    let mut xa = lift(x);
    let mut ha = lift(h);
    fwd.process(&mut xa);
    fwd.process(&mut ha);
    for (a, b) in xa.iter_mut().zip(&ha) {
        *a *= b;
    }
    inv.process(&mut xa);
    let scale = 1.0 / n as f64;
    xa[..x.len()].iter().map(|c| c.re * scale).collect()
}

/// Renders a dry source through a pair of impulse responses.
pub fn render(src: &Waveform, rir_pair: &[Vec<f64>; 2]) -> Result<Stereo> {
    if src.is_empty() {
        invalid!("cannot render an empty signal");
    }
    Ok(Stereo {
        channels: [
            convolve_truncated(&src.samples, &rir_pair[0]),
            convolve_truncated(&src.samples, &rir_pair[1]),
        ],
        sample_rate: src.sample_rate,
    })
}

/// Output of [`mix_at_snr`].
#[derive(Clone, Debug)]
pub struct Mixture {
    /// `gain · (target + alpha · interferer)`, peak `0.9`.
    pub mixture: Stereo,
    /// Interferer scale setting the requested SNR (0 without interferer).
    pub alpha: f64,
    /// Peak-normalization gain applied after mixing.
    pub gain: f64,
}

impl Mixture {
    /// Target component as it appears in the mixture.
    pub fn target_component(&self, target: &Stereo) -> Stereo {
        target.padded(self.mixture.len()).scaled(self.gain)
    }

    /// Interferer component as it appears in the mixture.
    pub fn interferer_component(&self, interferer: &Stereo) -> Stereo {
        interferer.padded(self.mixture.len()).scaled(self.gain * self.alpha)
    }
}

/// Mixes at the requested SNR (channel-summed energies), then normalizes the
/// peak to 0.9. With no interferer the normalized target is returned.
pub fn mix_at_snr(target: &Stereo, interferer: Option<&Stereo>, snr_db: f64) -> Result<Mixture> {
    let ps = target.energy();
    if !(ps > 0.0) {
        invalid!("target signal is silent");
    }
    let (mixed, alpha) = match interferer {
        None => (target.clone(), 0.0),
        Some(i) => {
            let pn = i.energy();
            if !(pn > 0.0) {
                invalid!("interferer signal is silent");
            }
            let len = target.len().max(i.len());
            let (t, i) = (target.padded(len), i.padded(len));
            let alpha = (ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
            let mut m = t;
            for (mc, ic) in m.channels.iter_mut().zip(&i.channels) {
                for (a, b) in mc.iter_mut().zip(ic) {
                    *a += alpha * b;
                }
            }
            (m, alpha)
        }
    };
    let peak = mixed.peak();
    if !(peak > 0.0) {
        invalid!("mixture is silent");
    }
    let gain = PEAK_LEVEL / peak;
    Ok(Mixture {
        mixture: mixed.scaled(gain),
        alpha,
        gain,
    })
}

//! Parametric synthetic speakers: impulse-train source with a random-walk
//! f0, two one-pole spectral-tilt filters and three formant resonators,
//! gated into voiced segments and pauses.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;
use crate::error::{invalid, Error, Result};
use crate::rng::{derive_indexed, rng_for};

pub const F0_LIMITS: (f64, f64) = (80.0, 400.0);
pub const MIN_DURATION_S: f64 = 0.5;
const F0_STEP_S: f64 = 0.01;
const RAMP_S: f64 = 0.02;
const TARGET_RMS: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerModel {
    pub speaker_id: u32,
    /// `[low, high]` f0 bounds in Hz.
    pub f0_range: [f64; 2],
    /// Strictly increasing formant centres in Hz.
    pub formants: [f64; 3],
    pub bandwidths: [f64; 3],
    /// Source slope between 500 Hz and 4 kHz, dB per octave (negative).
    pub tilt_db_per_octave: f64,
    pub seed: u64,
}

impl SpeakerModel {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.f0_range;
        if !(F0_LIMITS.0 <= lo && lo < hi && hi <= F0_LIMITS.1) {
            invalid!("speaker {}: f0 range {lo}..{hi} outside [80, 400] Hz", self.speaker_id);
        }
        let f = self.formants;
        if !(0.0 < f[0] && f[0] < f[1] && f[1] < f[2]) {
            invalid!("speaker {}: formants must be strictly increasing", self.speaker_id);
        }
        if self.bandwidths.iter().any(|b| !(*b > 0.0)) {
            invalid!("speaker {}: bandwidths must be positive", self.speaker_id);
        }
        if !(-12.0..0.0).contains(&self.tilt_db_per_octave) {
            invalid!("speaker {}: tilt must lie in [-12, 0) dB/octave", self.speaker_id);
        }
        Ok(())
    }
}

/// Two-pole resonator `y = A·x + B·y[-1] + C·y[-2]` with unit DC gain.
struct Resonator {
    a: f64,
    b: f64,
    c: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bw: f64, fs: f64) -> Self {
        let c = -(-2.0 * PI * bw / fs).exp();
        let b = 2.0 * (-PI * bw / fs).exp() * (2.0 * PI * freq / fs).cos();
        Self {
            a: 1.0 - b - c,
            b,
            c,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn tick(&mut self, x: f64) -> f64 {
        let y = self.a * x + self.b * self.y1 + self.c * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn one_pole_db(a: f64, f: f64, fs: f64) -> f64 {
    let w = 2.0 * PI * f / fs;
    let den = (1.0 - 2.0 * a * w.cos() + a * a).sqrt();
    20.0 * ((1.0 - a) / den).log10()
}

/// Pole of each of two identical one-pole low-passes whose cascade falls by
/// `tilt` dB/octave on average between 500 Hz and 4 kHz.
fn tilt_pole(tilt: f64, fs: f64) -> f64 {
    let slope = |a: f64| 2.0 * (one_pole_db(a, 4000.0, fs) - one_pole_db(a, 500.0, fs)) / 3.0;
    let (mut lo, mut hi) = (0.0, 0.9999);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if slope(mid) > tilt {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Voiced/pause envelope with raised-cosine ramps; always contains voicing.
fn segment_envelope(rng: &mut impl Rng, n: usize, fs: f64) -> Vec<f64> {
    let mut env = vec![0.0; n];
    let ramp = (RAMP_S * fs) as usize;
    let mut pos = (rng.random::<f64>() * 0.15 * fs) as usize;
    while pos < n {
        let voiced = ((0.3 + 0.6 * rng.random::<f64>()) * fs) as usize;
        let end = (pos + voiced).min(n);
        for (k, e) in env[pos..end].iter_mut().enumerate() {
            let edge = k.min(end - pos - 1 - k);
            *e = if edge < ramp {
                0.5 * (1.0 - (PI * edge as f64 / ramp as f64).cos())
            } else {
                1.0
            };
        }
        pos = end + ((0.1 + 0.25 * rng.random::<f64>()) * fs) as usize;
    }
    env
}

/// Renders one utterance; deterministic per `(model, utterance_seed)`.
/// Output RMS is normalized to 0.1.
pub fn synth_utterance(model: &SpeakerModel, duration_s: f64, utterance_seed: u64, sample_rate: u32) -> Result<Waveform> {
    model.validate()?;
    if !(duration_s >= MIN_DURATION_S) {
        invalid!("utterance duration {duration_s} s below {MIN_DURATION_S} s");
    }
    let fs = f64::from(sample_rate);
    let n = (duration_s * fs).round() as usize;
    let mut rng = rng_for(utterance_seed ^ model.seed, "utterance");
    let [lo, hi] = model.f0_range;
    let log_span = (hi / lo).ln();
    let step = (F0_STEP_S * fs) as usize;

    let mut u = rng.random::<f64>();
    let mut phase = rng.random::<f64>();
    let mut source = vec![0.0; n];
    for (i, s) in source.iter_mut().enumerate() {
        if i % step == 0 {
            u += 0.06 * (rng.random::<f64>() - 0.5);
            u = if u < 0.0 { -u } else if u > 1.0 { 2.0 - u } else { u };
        }
        let f0 = lo * (u * log_span).exp();
        phase += f0 / fs;
        if phase >= 1.0 {
            phase -= 1.0;
            *s = 1.0;
        }
        *s += 0.02 * (rng.random::<f64>() - 0.5);
    }

    let env = segment_envelope(&mut rng, n, fs);
    let a = tilt_pole(model.tilt_db_per_octave, fs);
    let (mut t1, mut t2) = (0.0, 0.0);
    let mut res: Vec<Resonator> = model
        .formants
        .iter()
        .zip(&model.bandwidths)
        .map(|(&f, &b)| Resonator::new(f, b, fs))
        .collect();
    let mut out: Vec<f64> = source
        .iter()
        .zip(&env)
        .map(|(&x, &e)| {
            t1 = (1.0 - a) * x + a * t1;
            t2 = (1.0 - a) * t1 + a * t2;
            // Resonators in parallel keep every formant visible despite the tilt.
            let y: f64 = res.iter_mut().map(|r| r.tick(t2)).sum();
            y * e
        })
        .collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if !(rms > 0.0) {
        return Err(Error::Infeasible("silent utterance".into()));
    }
    out.iter_mut().for_each(|v| *v *= TARGET_RMS / rms);
    Ok(Waveform::new(out, sample_rate))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub n_speakers: usize,
    pub clips_per_speaker: usize,
    /// Utterances per speaker reserved for the test split.
    pub test_clips_per_speaker: usize,
    pub clip_duration_s: f64,
    pub f1_range: [f64; 2],
    pub f2_range: [f64; 2],
    pub f3_range: [f64; 2],
    pub min_f1_gap_hz: f64,
    pub f0_center_range: [f64; 2],
    pub tilt_range: [f64; 2],
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_speakers: 40,
            clips_per_speaker: 12,
            test_clips_per_speaker: 4,
            clip_duration_s: 3.0,
            f1_range: [300.0, 900.0],
            f2_range: [1000.0, 2300.0],
            f3_range: [2400.0, 3400.0],
            min_f1_gap_hz: 5.0,
            f0_center_range: [95.0, 290.0],
            tilt_range: [-10.0, -5.0],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker_id: u32,
    pub utterance_id: String,
    pub seed: u64,
    pub duration_s: f64,
    pub split: Split,
}

impl Utterance {
    /// WAV location relative to the dataset root.
    pub fn wav_path(&self) -> String {
        format!("utterances/{}.wav", self.utterance_id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub speakers: Vec<SpeakerModel>,
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn speaker(&self, id: u32) -> Option<&SpeakerModel> {
        self.speakers.iter().find(|s| s.speaker_id == id)
    }

    pub fn utterances_of(&self, speaker: u32, split: Split) -> impl Iterator<Item = &Utterance> {
        self.utterances
            .iter()
            .filter(move |u| u.speaker_id == speaker && u.split == split)
    }

    pub fn synth(&self, utt: &Utterance, sample_rate: u32) -> Result<Waveform> {
        let model = self
            .speaker(utt.speaker_id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown speaker {}", utt.speaker_id)))?;
        synth_utterance(model, utt.duration_s, utt.seed, sample_rate)
    }
}

fn uniform(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    r[0] + (r[1] - r[0]) * rng.random::<f64>()
}

/// Samples speakers and assigns utterances to disjoint train/test splits.
///
/// First formants are stratified over `f1_range` (one stratum per speaker,
/// shuffled) and jittered inside their stratum, which guarantees the minimum
/// pairwise gap whenever the strata are wide enough.
pub fn build_corpus(cfg: &CorpusConfig, seed: u64) -> Result<Corpus> {
    if cfg.n_speakers < 2 {
        invalid!("corpus needs at least 2 speakers");
    }
    if cfg.test_clips_per_speaker < 2 || cfg.clips_per_speaker < cfg.test_clips_per_speaker + 2 {
        invalid!("each split needs at least 2 utterances per speaker (target + distinct reference)");
    }
    let width = (cfg.f1_range[1] - cfg.f1_range[0]) / cfg.n_speakers as f64;
    if width < cfg.min_f1_gap_hz {
        return Err(Error::Infeasible(format!(
            "{} speakers cannot keep {} Hz F1 gaps inside {:?}",
            cfg.n_speakers, cfg.min_f1_gap_hz, cfg.f1_range
        )));
    }
    let mut rng = rng_for(seed, "corpus");
    let mut strata: Vec<usize> = (0..cfg.n_speakers).collect();
    strata.shuffle(&mut rng);
    let jitter = (width - cfg.min_f1_gap_hz) / 2.0;

    let mut speakers = Vec::with_capacity(cfg.n_speakers);
    for (id, &k) in strata.iter().enumerate() {
        let f1 = cfg.f1_range[0] + (k as f64 + 0.5) * width + jitter * (2.0 * rng.random::<f64>() - 1.0);
        let f0 = uniform(&mut rng, cfg.f0_center_range);
        let model = SpeakerModel {
            speaker_id: id as u32,
            f0_range: [(f0 * 0.85).max(F0_LIMITS.0), (f0 * 1.15).min(F0_LIMITS.1)],
            formants: [f1, uniform(&mut rng, cfg.f2_range), uniform(&mut rng, cfg.f3_range)],
            bandwidths: [
                60.0 + 30.0 * rng.random::<f64>(),
                80.0 + 40.0 * rng.random::<f64>(),
                100.0 + 50.0 * rng.random::<f64>(),
            ],
            tilt_db_per_octave: uniform(&mut rng, cfg.tilt_range),
            seed: derive_indexed(seed, "speaker", id as u64),
        };
        model.validate()?;
        speakers.push(model);
    }

    let mut utterances = Vec::with_capacity(cfg.n_speakers * cfg.clips_per_speaker);
    let mut seen = BTreeSet::new();
    for s in &speakers {
        for j in 0..cfg.clips_per_speaker {
            let idx = (s.speaker_id as usize * cfg.clips_per_speaker + j) as u64;
            let useed = derive_indexed(seed, "utterance", idx);
            if !seen.insert(useed) {
                return Err(Error::Infeasible("utterance seed collision".into()));
            }
            utterances.push(Utterance {
                speaker_id: s.speaker_id,
                utterance_id: format!("spk{:03}_utt{:03}", s.speaker_id, j),
                seed: useed,
                duration_s: cfg.clip_duration_s,
                split: if j < cfg.clips_per_speaker - cfg.test_clips_per_speaker {
                    Split::Train
                } else {
                    Split::Test
                },
            });
        }
    }
    Ok(Corpus { speakers, utterances })
}

/// Picks a reference utterance of `target`'s speaker from the same split,
/// never `target` itself.
pub fn pick_reference<'a>(corpus: &'a Corpus, target: &Utterance, rng: &mut impl Rng) -> Result<&'a Utterance> {
    let pool: Vec<&Utterance> = corpus
        .utterances_of(target.speaker_id, target.split)
        .filter(|u| u.utterance_id != target.utterance_id)
        .collect();
    if pool.is_empty() {
        return Err(Error::Infeasible(format!("no reference for {}", target.utterance_id)));
    }
    Ok(pool[rng.random_range(0..pool.len())])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tilt_pole_hits_requested_slope() {
        for tilt in [-10.0, -7.5, -5.0] {
            let a = tilt_pole(tilt, 16_000.0);
            let s = 2.0 * (one_pole_db(a, 4000.0, 16_000.0) - one_pole_db(a, 500.0, 16_000.0)) / 3.0;
            assert!((s - tilt).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_short_durations_and_bad_models() {
        let cfg = CorpusConfig::default();
        let c = build_corpus(&cfg, 1).unwrap();
        assert!(synth_utterance(&c.speakers[0], 0.4, 1, 16_000).is_err());
        let mut m = c.speakers[0].clone();
        m.formants = [900.0, 800.0, 2500.0];
        assert!(synth_utterance(&m, 1.0, 1, 16_000).is_err());
    }

    #[test]
    fn infeasible_gap_is_reported() {
        let cfg = CorpusConfig {
            min_f1_gap_hz: 50.0,
            ..CorpusConfig::default()
        };
        assert!(matches!(build_corpus(&cfg, 0), Err(Error::Infeasible(_))));
    }
}

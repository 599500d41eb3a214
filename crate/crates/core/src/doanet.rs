//! DoA network: frame features → FC+ReLU+BN → FC+ReLU+BN → BiGRU →
//! FC+ReLU → FC+Sigmoid over 360 classes, plus feature assembly and the
//! end-to-end inference path.

use serde::{Deserialize, Serialize};

use crate::acoustics::Stereo;
use crate::coding::{decode_doa, encode_posterior, encode_row, DoaClass, DoaTrace, PosteriorSequence, N_CLASSES};
use crate::dsp::{magnitude, phase, stft, TfGrid, Waveform};
use crate::error::{invalid, Error, Result};
use crate::masknet::{self, compress};
use crate::numerics::layers::{batchnorm_forward, bigru_forward, dense, init_batchnorm, init_dense, init_gru, GruVars};
use crate::numerics::{Graph, Mode, ParamStore, Tensor, Var};
use crate::rng::rng_for;

pub const STFT_WIN: usize = 400;
pub const STFT_HOP: usize = 160;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseMode {
    /// `cos(φ1 − φ2)`, `sin(φ1 − φ2)` per bin.
    IpdCosSin,
    /// Raw `φ1`, `φ2` per bin.
    LiteralPhase,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoaNetConfig {
    pub n_freq: usize,
    pub fc1: usize,
    pub fc2: usize,
    /// Per direction; the post-GRU layer is `2H → 2H`.
    pub gru_hidden: usize,
    pub phase_mode: PhaseMode,
}

impl Default for DoaNetConfig {
    fn default() -> Self {
        Self {
            n_freq: 201,
            fc1: 512,
            fc2: 256,
            gru_hidden: 128,
            phase_mode: PhaseMode::IpdCosSin,
        }
    }
}

impl DoaNetConfig {
    pub fn input_dim(&self) -> usize {
        3 * self.n_freq
    }

    pub fn validate(&self) -> Result<()> {
        if [self.n_freq, self.fc1, self.fc2, self.gru_hidden].contains(&0) {
            return Err(Error::Config("DoA net widths must be >= 1".into()));
        }
        Ok(())
    }
}

pub fn init_doanet(cfg: &DoaNetConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut store = ParamStore::new(seed);
    let mut rng = rng_for(seed, "doanet-init");
    let h2 = 2 * cfg.gru_hidden;
    init_dense(&mut store, &mut rng, "fc1", cfg.input_dim(), cfg.fc1);
    init_batchnorm(&mut store, "bn1", cfg.fc1);
    init_dense(&mut store, &mut rng, "fc2", cfg.fc1, cfg.fc2);
    init_batchnorm(&mut store, "bn2", cfg.fc2);
    init_gru(&mut store, &mut rng, "gru_f", cfg.fc2, cfg.gru_hidden);
    init_gru(&mut store, &mut rng, "gru_b", cfg.fc2, cfg.gru_hidden);
    init_dense(&mut store, &mut rng, "fc3", h2, h2);
    init_dense(&mut store, &mut rng, "out", h2, N_CLASSES);
    Ok(store)
}

/// `[T × 3F]` per-frame features with the magnitude block first.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameFeatures {
    pub values: Tensor,
    pub n_freq: usize,
    pub mode: PhaseMode,
}

impl FrameFeatures {
    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    /// Network input: the magnitude block compressed with `ln(1 + x)`.
    pub fn network_input(&self) -> Tensor {
        let mut t = self.values.clone();
        for r in 0..t.rows() {
            t.row_mut(r)[..self.n_freq].iter_mut().for_each(|v| *v = compress(*v));
        }
        t
    }
}

pub fn assemble_features(xm: &TfGrid, phase1: &TfGrid, phase2: &TfGrid, mode: PhaseMode) -> Result<FrameFeatures> {
    if xm.dims() != phase1.dims() || xm.dims() != phase2.dims() {
        return Err(Error::shape("assemble_features", &xm.dims(), &phase2.dims()));
    }
    let (f, t) = (xm.n_freq(), xm.n_frames());
    let mut data = Vec::with_capacity(3 * f * t);
    for k in 0..t {
        data.extend_from_slice(xm.frame(k));
        let (p1, p2) = (phase1.frame(k), phase2.frame(k));
        match mode {
            PhaseMode::IpdCosSin => {
                data.extend(p1.iter().zip(p2).map(|(a, b)| (a - b).cos()));
                data.extend(p1.iter().zip(p2).map(|(a, b)| (a - b).sin()));
            }
            PhaseMode::LiteralPhase => {
                data.extend_from_slice(p1);
                data.extend_from_slice(p2);
            }
        }
    }
    Ok(FrameFeatures {
        values: Tensor::matrix(t, 3 * f, data)?,
        n_freq: f,
        mode,
    })
}

/// Logits `[B·T × 360]` for prepared inputs `[B·T × D]`.
pub fn logits_graph(g: &mut Graph, store: &mut ParamStore, x: Var, batch: usize, steps: usize, mode: Mode) -> Result<Var> {
    let d = store
        .value("fc1.w")
        .ok_or_else(|| Error::Checkpoint("DoA net parameters missing fc1.w".into()))?
        .rows();
    if g.value(x).cols() != d {
        return Err(Error::shape("doanet input", g.value(x).shape(), &[batch * steps, d]));
    }
    let h = dense(g, store, "fc1", x)?;
    let h = g.relu(h);
    let h = batchnorm_forward(g, store, "bn1", h, mode)?;
    let h = dense(g, store, "fc2", h)?;
    let h = g.relu(h);
    let h = batchnorm_forward(g, store, "bn2", h, mode)?;
    let fwd = GruVars::bind(g, store, "gru_f")?;
    let bwd = GruVars::bind(g, store, "gru_b")?;
    let h = bigru_forward(g, &fwd, &bwd, h, batch, steps)?;
    let h = dense(g, store, "fc3", h)?;
    let h = g.relu(h);
    dense(g, store, "out", h)
}

/// Pre-Sigmoid outputs and posteriors of one clip.
#[derive(Clone, Debug)]
pub struct DoaOutput {
    pub logits: Tensor,
    pub posterior: PosteriorSequence,
}

pub fn doanet_forward(features: &FrameFeatures, store: &mut ParamStore, mode: Mode) -> Result<DoaOutput> {
    let steps = features.frames();
    if steps == 0 {
        invalid!("no frames");
    }
    let mut g = Graph::new();
    let x = g.input(features.network_input());
    let logits = logits_graph(&mut g, store, x, 1, steps, mode)?;
    let post = g.sigmoid(logits);
    Ok(DoaOutput {
        logits: g.value(logits).clone(),
        posterior: PosteriorSequence::from_tensor(g.value(post).clone())?,
    })
}

/// One training clip: prepared input `[T × D]` and its label. The coded
/// target `[T × 360]` is rebuilt per batch rather than stored.
#[derive(Clone, Debug)]
pub struct DoaExample {
    pub input: Tensor,
    pub doa: DoaClass,
    pub sigma: f64,
}

impl DoaExample {
    pub fn new(features: &FrameFeatures, doa: DoaClass, sigma: f64) -> Result<Self> {
        // fail early on a bad width
        encode_row(doa, sigma)?;
        Ok(Self {
            input: features.network_input(),
            doa,
            sigma,
        })
    }

    pub fn target(&self) -> Result<Tensor> {
        Ok(encode_posterior(self.doa, self.sigma, self.input.rows())?.into_tensor())
    }
}

fn stack<'a>(parts: impl Iterator<Item = &'a Tensor>) -> Result<(Tensor, usize)> {
    let mut data = Vec::new();
    let (mut rows, mut cols, mut steps) = (0, None, None);
    for p in parts {
        if *cols.get_or_insert(p.cols()) != p.cols() || *steps.get_or_insert(p.rows()) != p.rows() {
            return Err(Error::shape("batch stack", p.shape(), &[steps.unwrap_or(0), cols.unwrap_or(0)]));
        }
        rows += p.rows();
        data.extend_from_slice(p.data());
    }
    let steps = steps.ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    Ok((Tensor::matrix(rows, cols.unwrap_or(0), data)?, steps))
}

/// Posterior loss summed over frames and classes, averaged over the batch.
pub fn batch_loss(g: &mut Graph, store: &mut ParamStore, batch: &[&DoaExample], mode: Mode) -> Result<Var> {
    let (x, steps) = stack(batch.iter().map(|e| &e.input))?;
    let targets = batch.iter().map(|e| e.target()).collect::<Result<Vec<_>>>()?;
    let (y, _) = stack(targets.iter())?;
    let x = g.input(x);
    let logits = logits_graph(g, store, x, batch.len(), steps, mode)?;
    let post = g.sigmoid(logits);
    let sse = g.sum_squared_error(post, &y)?;
    Ok(g.scale(sse, 1.0 / batch.len() as f64))
}

/// Frame trace from a prepared example in eval mode.
pub fn predict_trace(store: &mut ParamStore, ex: &DoaExample) -> Result<DoaTrace> {
    let mut g = Graph::new();
    let x = g.input(ex.input.clone());
    let logits = logits_graph(&mut g, store, x, 1, ex.input.rows(), Mode::Eval)?;
    let post = g.sigmoid(logits);
    Ok(decode_doa(&PosteriorSequence::from_tensor(g.value(post).clone())?))
}

/// Magnitude and phase grids of both channels.
#[derive(Clone, Debug)]
pub struct StereoSpectra {
    pub mag: [TfGrid; 2],
    pub phase: [TfGrid; 2],
}

pub fn stereo_spectra(x: &Stereo) -> Result<StereoSpectra> {
    let s1 = stft(&x.channel(0), STFT_WIN, STFT_HOP)?;
    let s2 = stft(&x.channel(1), STFT_WIN, STFT_HOP)?;
    Ok(StereoSpectra {
        mag: [magnitude(&s1), magnitude(&s2)],
        phase: [phase(&s1), phase(&s2)],
    })
}

pub fn mono_magnitude(x: &Waveform) -> Result<TfGrid> {
    Ok(magnitude(&stft(x, STFT_WIN, STFT_HOP)?))
}

/// Mask for channel 1, or `None` for the identity-mask ablation.
pub fn channel1_mask(spec: &StereoSpectra, reference: &Waveform, mask_params: Option<&ParamStore>) -> Result<Option<TfGrid>> {
    let Some(mp) = mask_params else {
        return Ok(None);
    };
    let e = masknet::embed_reference(mp, &mono_magnitude(reference)?)?;
    masknet::predict_mask(mp, &spec.mag[0], &e).map(Some)
}

pub fn clip_features(spec: &StereoSpectra, mask: Option<&TfGrid>, mode: PhaseMode) -> Result<FrameFeatures> {
    let xm = match mask {
        Some(m) => masknet::apply_mask(&spec.mag[0], m)?,
        None => spec.mag[0].clone(),
    };
    assemble_features(&xm, &spec.phase[0], &spec.phase[1], mode)
}

#[derive(Clone, Debug)]
pub struct Inference {
    pub output: DoaOutput,
    pub trace: DoaTrace,
    pub clip_doa: DoaClass,
}

/// STFT → (mask) → features → network → per-frame and clip-level decode.
pub fn infer(
    mixture: &Stereo,
    reference: &Waveform,
    mask_params: Option<&ParamStore>,
    doa_params: &mut ParamStore,
    mode: PhaseMode,
) -> Result<Inference> {
    let spec = stereo_spectra(mixture)?;
    let mask = channel1_mask(&spec, reference, mask_params)?;
    let features = clip_features(&spec, mask.as_ref(), mode)?;
    let output = doanet_forward(&features, doa_params, Mode::Eval)?;
    let trace = decode_doa(&output.posterior);
    let clip_doa = crate::coding::argmax_class(&output.posterior.time_average());
    Ok(Inference { output, trace, clip_doa })
}

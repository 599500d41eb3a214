//! Speaker-conditioned mask network.
//!
//! Reference encoder: per frame `F → enc (ReLU) → E`, mean over frames,
//! unit-normalized. Predictor: per frame `concat(X_i, e) → fc (ReLU) →
//! BiGRU → F (Sigmoid)`. Magnitudes enter both paths as `ln(1 + |X|)`.
//!
//! Batched tensors are clip-major: row `b·T + t` is frame `t` of clip `b`.

use serde::{Deserialize, Serialize};

use crate::dsp::TfGrid;
use crate::error::{invalid, Error, Result};
use crate::numerics::layers::{self, bigru_forward, dense, init_dense, init_gru, GruVars};
use crate::numerics::{Graph, ParamStore, Tensor, Var};
use crate::rng::rng_for;

pub const IRM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskNetConfig {
    pub n_freq: usize,
    pub enc_hidden: usize,
    pub embed_dim: usize,
    pub fc: usize,
    pub gru_hidden: usize,
}

impl Default for MaskNetConfig {
    fn default() -> Self {
        Self {
            n_freq: 201,
            enc_hidden: 128,
            embed_dim: 64,
            fc: 256,
            gru_hidden: 128,
        }
    }
}

impl MaskNetConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.n_freq, self.enc_hidden, self.embed_dim, self.fc, self.gru_hidden].contains(&0) {
            return Err(Error::Config("mask net widths must be >= 1".into()));
        }
        Ok(())
    }
}

/// Input compression shared by both networks.
pub fn compress(x: f64) -> f64 {
    x.ln_1p()
}

pub fn compress_grid(g: &TfGrid) -> Tensor {
    g.map(compress).to_frames_tensor()
}

pub fn init_masknet(cfg: &MaskNetConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut store = ParamStore::new(seed);
    let mut rng = rng_for(seed, "masknet-init");
    init_dense(&mut store, &mut rng, "enc1", cfg.n_freq, cfg.enc_hidden);
    init_dense(&mut store, &mut rng, "enc2", cfg.enc_hidden, cfg.embed_dim);
    init_dense(&mut store, &mut rng, "fc", cfg.n_freq + cfg.embed_dim, cfg.fc);
    init_gru(&mut store, &mut rng, "gru_f", cfg.fc, cfg.gru_hidden);
    init_gru(&mut store, &mut rng, "gru_b", cfg.fc, cfg.gru_hidden);
    init_dense(&mut store, &mut rng, "out", 2 * cfg.gru_hidden, cfg.n_freq);
    Ok(store)
}

/// Unit-norm speaker embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerEmbedding(pub Vec<f64>);

impl SpeakerEmbedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn cosine(&self, other: &SpeakerEmbedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

fn embed_dim(store: &ParamStore) -> Result<usize> {
    store
        .value("enc2.b")
        .map(|t| t.len())
        .ok_or_else(|| Error::Checkpoint("mask net parameters missing enc2.b".into()))
}

/// Embeddings `[B × E]` from compressed references `[B·T_r × F]`.
pub fn embed_graph(g: &mut Graph, store: &ParamStore, refs: Var, batch: usize) -> Result<Var> {
    let rows = g.value(refs).rows();
    if batch == 0 || rows == 0 || rows % batch != 0 {
        invalid!("reference batch of {rows} rows cannot split into {batch} clips");
    }
    let h = dense(g, store, "enc1", refs)?;
    let h = g.relu(h);
    let e = dense(g, store, "enc2", h)?;
    let pooled = g.segment_mean(e, rows / batch)?;
    g.normalize_rows(pooled)
}

/// Mask `[B·T × F]` from compressed mixtures `[B·T × F]` and embeddings `[B × E]`.
pub fn mask_graph(g: &mut Graph, store: &ParamStore, mix: Var, emb: Var, batch: usize, steps: usize) -> Result<Var> {
    if g.value(mix).rows() != batch * steps {
        return Err(Error::shape("mask input", g.value(mix).shape(), &[batch * steps]));
    }
    let e = g.repeat_rows(emb, steps)?;
    let x = g.concat_cols(&[mix, e])?;
    let h = dense(g, store, "fc", x)?;
    let h = g.relu(h);
    let fwd = GruVars::bind(g, store, "gru_f")?;
    let bwd = GruVars::bind(g, store, "gru_b")?;
    let h = bigru_forward(g, &fwd, &bwd, h, batch, steps)?;
    let o = dense(g, store, "out", h)?;
    Ok(g.sigmoid(o))
}

/// Whole network on a batch of equally sized clips.
pub fn masknet_graph(
    g: &mut Graph,
    store: &ParamStore,
    mix: &Tensor,
    refs: &Tensor,
    batch: usize,
) -> Result<Var> {
    if batch == 0 || mix.rows() % batch != 0 {
        invalid!("mixture batch of {} rows cannot split into {batch} clips", mix.rows());
    }
    let r = g.input(refs.clone());
    let emb = embed_graph(g, store, r, batch)?;
    let m = g.input(mix.clone());
    mask_graph(g, store, m, emb, batch, mix.rows() / batch)
}

pub fn embed_reference(store: &ParamStore, x_r: &TfGrid) -> Result<SpeakerEmbedding> {
    if x_r.n_frames() == 0 {
        invalid!("empty reference");
    }
    let mut g = Graph::new();
    let r = g.input(compress_grid(x_r));
    let e = embed_graph(&mut g, store, r, 1)?;
    Ok(SpeakerEmbedding(g.value(e).data().to_vec()))
}

pub fn predict_mask(store: &ParamStore, x_i: &TfGrid, e: &SpeakerEmbedding) -> Result<TfGrid> {
    let want = embed_dim(store)?;
    if e.dim() != want {
        return Err(Error::shape("predict_mask embedding", &[e.dim()], &[want]));
    }
    if x_i.n_frames() == 0 {
        invalid!("empty mixture");
    }
    let mut g = Graph::new();
    let emb = g.input(Tensor::matrix(1, e.dim(), e.0.clone())?);
    let m = g.input(compress_grid(x_i));
    let mask = mask_graph(&mut g, store, m, emb, 1, x_i.n_frames())?;
    Ok(TfGrid::from_frames(g.value(mask)))
}

/// `X_m = X_i ⊙ mask`.
pub fn apply_mask(x_i: &TfGrid, mask: &TfGrid) -> Result<TfGrid> {
    x_i.zip_map(mask, "apply_mask", |x, m| x * m)
}

/// `S / (S + I + 1e-8)`.
pub fn irm_target(s_mag: &TfGrid, i_mag: &TfGrid) -> Result<TfGrid> {
    s_mag.zip_map(i_mag, "irm_target", |s, i| s / (s + i + IRM_EPS))
}

/// One training clip: compressed mixture and reference, IRM target (all `[T × F]`).
#[derive(Clone, Debug)]
pub struct MaskExample {
    pub mix: Tensor,
    pub reference: Tensor,
    pub irm: Tensor,
}

impl MaskExample {
    pub fn new(mix_mag: &TfGrid, ref_mag: &TfGrid, irm: TfGrid) -> Result<Self> {
        if mix_mag.dims() != irm.dims() {
            return Err(Error::shape("mask example", &mix_mag.dims(), &irm.dims()));
        }
        if ref_mag.n_freq() != mix_mag.n_freq() {
            return Err(Error::shape("mask reference", &ref_mag.dims(), &mix_mag.dims()));
        }
        Ok(Self {
            mix: compress_grid(mix_mag),
            reference: compress_grid(ref_mag),
            irm: irm.to_frames_tensor(),
        })
    }
}

fn stack(parts: &[&Tensor]) -> Result<Tensor> {
    let cols = parts[0].cols();
    let mut data = Vec::with_capacity(parts.iter().map(|t| t.len()).sum());
    for p in parts {
        if p.cols() != cols || p.rows() != parts[0].rows() {
            return Err(Error::shape("batch stack", p.shape(), parts[0].shape()));
        }
        data.extend_from_slice(p.data());
    }
    Tensor::matrix(data.len() / cols, cols, data)
}

/// Summed squared error of a batch and the number of bins it covers.
pub fn batch_loss(g: &mut Graph, store: &ParamStore, batch: &[&MaskExample]) -> Result<(Var, usize)> {
    if batch.is_empty() {
        invalid!("empty batch");
    }
    let mix = stack(&batch.iter().map(|e| &e.mix).collect::<Vec<_>>())?;
    let refs = stack(&batch.iter().map(|e| &e.reference).collect::<Vec<_>>())?;
    let irm = stack(&batch.iter().map(|e| &e.irm).collect::<Vec<_>>())?;
    let mask = masknet_graph(g, store, &mix, &refs, batch.len())?;
    let loss = layers::mse_loss(g, mask, &irm)?;
    Ok((loss, irm.len()))
}

/// Mean per-bin squared error over a set of clips.
pub fn per_bin_mse(store: &ParamStore, examples: &[MaskExample]) -> Result<f64> {
    if examples.is_empty() {
        invalid!("empty dataset");
    }
    let (mut sse, mut n) = (0.0, 0);
    for ex in examples {
        let mut g = Graph::new();
        let (l, bins) = batch_loss(&mut g, store, &[ex])?;
        sse += g.value(l).data()[0];
        n += bins;
    }
    Ok(sse / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(v: &[f64], f: usize) -> TfGrid {
        TfGrid::new(f, v.len() / f, v.to_vec()).unwrap()
    }

    #[test]
    fn apply_mask_examples() {
        let x = grid(&[1.0, 2.0, 3.0, 4.0], 2);
        assert_eq!(apply_mask(&x, &TfGrid::filled(2, 2, 1.0)).unwrap(), x);
        assert!(apply_mask(&x, &TfGrid::filled(2, 2, 0.0)).unwrap().values().iter().all(|v| *v == 0.0));
        assert_eq!(apply_mask(&x, &TfGrid::filled(2, 2, 0.5)).unwrap().values(), &[0.5, 1.0, 1.5, 2.0]);
        assert!(apply_mask(&x, &TfGrid::filled(2, 1, 0.5)).is_err());
    }

    #[test]
    fn irm_examples() {
        let s = grid(&[1.0, 2.0, 0.5, 0.0], 2);
        let ones = irm_target(&s, &TfGrid::filled(2, 2, 0.0)).unwrap();
        assert!(ones.values()[..3].iter().all(|v| (v - 1.0).abs() < 1e-7));
        let half = irm_target(&s, &s).unwrap();
        assert!(half.values()[..3].iter().all(|v| (v - 0.5).abs() < 1e-8));
        let zero = irm_target(&TfGrid::filled(2, 2, 0.0), &s).unwrap();
        assert!(zero.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_params_give_half_mask() {
        let cfg = MaskNetConfig {
            n_freq: 5,
            enc_hidden: 4,
            embed_dim: 3,
            fc: 4,
            gru_hidden: 2,
        };
        let mut store = init_masknet(&cfg, 1).unwrap();
        store.fill(0.0);
        let x = TfGrid::filled(5, 4, 0.7);
        let e = embed_reference(&store, &x).unwrap();
        assert!(e.0.iter().all(|v| v.is_finite()));
        let m = predict_mask(&store, &x, &e).unwrap();
        assert!(m.values().iter().all(|v| *v == 0.5));
        assert!(predict_mask(&store, &x, &SpeakerEmbedding(vec![0.0; 4])).is_err());
    }
}

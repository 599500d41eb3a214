//! Layer set: dense, activations, batch norm, GRU and bidirectional GRU.
//!
//! GRU convention (PyTorch-style, reset applied to the recurrent term):
//!
//! ```text
//! r  = σ(W_r x + U_r h + b_r)
//! z  = σ(W_z x + U_z h + b_z)
//! n  = tanh(W_n x + r ⊙ (U_n h + b_un) + b_wn)
//! h' = (1 − z) ⊙ n + z ⊙ h
//! ```
//!
//! Weights are stored stacked by gate order `[r | z | n]`:
//! `<prefix>.w_ih: [D × 3H]`, `<prefix>.w_hh: [H × 3H]`,
//! `<prefix>.b_ih: [3H]` (holding `b_r, b_z, b_wn`) and `<prefix>.b_hn: [H]`.

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{invalid, Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub fn activation(g: &mut Graph, x: Var, kind: Activation) -> Var {
    match kind {
        Activation::Relu => g.relu(x),
        Activation::Sigmoid => g.sigmoid(x),
        Activation::Tanh => g.tanh(x),
    }
}

/// `x · w + b`.
pub fn dense_forward(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = g.matmul(x, w)?;
    g.add_bias(xw, b)
}

/// Dense layer whose weights live at `<prefix>.w` / `<prefix>.b`.
pub fn dense(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(store, &format!("{prefix}.w"))?;
    let b = g.param(store, &format!("{prefix}.b"))?;
    dense_forward(g, x, w, b)
}

pub fn init_dense(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, din: usize, dout: usize) {
    let bound = 1.0 / (din as f64).sqrt();
    store.insert_uniform(rng, &format!("{prefix}.w"), &[din, dout], bound);
    store.insert_uniform(rng, &format!("{prefix}.b"), &[dout], bound);
}

pub fn init_batchnorm(store: &mut ParamStore, prefix: &str, dim: usize) {
    store.insert(&format!("{prefix}.gamma"), Tensor::full(&[dim], 1.0));
    store.insert(&format!("{prefix}.beta"), Tensor::zeros(&[dim]));
    store.set_buffer(&format!("{prefix}.running_mean"), Tensor::zeros(&[dim]));
    store.set_buffer(&format!("{prefix}.running_var"), Tensor::full(&[dim], 1.0));
}

/// Batch norm over rows (every row is one frame of one clip).
///
/// Train mode normalizes with batch statistics and folds them into the
/// running buffers (`running = 0.9·running + 0.1·batch`, unbiased variance);
/// eval mode uses the running buffers.
pub fn batchnorm_forward(g: &mut Graph, store: &mut ParamStore, prefix: &str, x: Var, mode: Mode) -> Result<Var> {
    let gamma = g.param(store, &format!("{prefix}.gamma"))?;
    let beta = g.param(store, &format!("{prefix}.beta"))?;
    let mean_key = format!("{prefix}.running_mean");
    let var_key = format!("{prefix}.running_var");
    match mode {
        Mode::Train => {
            let n = g.value(x).rows() as f64;
            let (y, stats) = g.batch_norm(x, gamma, beta, BN_EPS)?;
            let mean = store
                .buffer_mut(&mean_key)
                .ok_or_else(|| Error::InvalidArgument(format!("missing buffer {mean_key}")))?;
            for (r, m) in mean.data_mut().iter_mut().zip(&stats.mean) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
            }
            let var = store
                .buffer_mut(&var_key)
                .ok_or_else(|| Error::InvalidArgument(format!("missing buffer {var_key}")))?;
            for (r, v) in var.data_mut().iter_mut().zip(&stats.var) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v * n / (n - 1.0);
            }
            Ok(y)
        }
        Mode::Eval => {
            let mean = store
                .buffer(&mean_key)
                .ok_or_else(|| Error::InvalidArgument(format!("missing buffer {mean_key}")))?
                .data()
                .to_vec();
            let var = store
                .buffer(&var_key)
                .ok_or_else(|| Error::InvalidArgument(format!("missing buffer {var_key}")))?
                .data()
                .to_vec();
            g.channel_affine(x, gamma, beta, &mean, &var, BN_EPS)
        }
    }
}

pub fn init_gru(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, input: usize, hidden: usize) {
    let bound = 1.0 / (hidden as f64).sqrt();
    store.insert_uniform(rng, &format!("{prefix}.w_ih"), &[input, 3 * hidden], 1.0 / (input as f64).sqrt());
    store.insert_uniform(rng, &format!("{prefix}.w_hh"), &[hidden, 3 * hidden], bound);
    store.insert_uniform(rng, &format!("{prefix}.b_ih"), &[3 * hidden], bound);
    store.insert_uniform(rng, &format!("{prefix}.b_hn"), &[hidden], bound);
}

/// Tape handles of one GRU's parameters.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub b_ih: Var,
    pub b_hn: Var,
    pub hidden: usize,
}

impl GruVars {
    pub fn bind(g: &mut Graph, store: &ParamStore, prefix: &str) -> Result<Self> {
        let w_hh = g.param(store, &format!("{prefix}.w_hh"))?;
        let hidden = g.value(w_hh).rows();
        if g.value(w_hh).cols() != 3 * hidden {
            return Err(Error::shape("gru w_hh", g.value(w_hh).shape(), &[hidden, 3 * hidden]));
        }
        Ok(Self {
            w_ih: g.param(store, &format!("{prefix}.w_ih"))?,
            w_hh,
            b_ih: g.param(store, &format!("{prefix}.b_ih"))?,
            b_hn: g.param(store, &format!("{prefix}.b_hn"))?,
            hidden,
        })
    }
}

/// One step given the precomputed input projection `gi = x·W_ih + b_ih`
/// (`[B × 3H]`) and the previous state `h` (`[B × H]`).
fn gru_step(g: &mut Graph, p: &GruVars, gi: Var, h: Var) -> Result<Var> {
    let hs = p.hidden;
    let gh = g.matmul(h, p.w_hh)?;
    let gi_r = g.slice_cols(gi, 0, hs)?;
    let gi_z = g.slice_cols(gi, hs, hs)?;
    let gi_n = g.slice_cols(gi, 2 * hs, hs)?;
    let gh_r = g.slice_cols(gh, 0, hs)?;
    let gh_z = g.slice_cols(gh, hs, hs)?;
    let gh_n = g.slice_cols(gh, 2 * hs, hs)?;
    let r_pre = g.add(gi_r, gh_r)?;
    let r = g.sigmoid(r_pre);
    let z_pre = g.add(gi_z, gh_z)?;
    let z = g.sigmoid(z_pre);
    let hn = g.add_bias(gh_n, p.b_hn)?;
    let rhn = g.mul(r, hn)?;
    let n_pre = g.add(gi_n, rhn)?;
    let n = g.tanh(n_pre);
    // h' = n + z ⊙ (h − n)
    let diff = g.sub(h, n)?;
    let zd = g.mul(z, diff)?;
    g.add(n, zd)
}

/// Single GRU cell update for `x: [B × D]`, `h: [B × H]`.
pub fn gru_cell(g: &mut Graph, p: &GruVars, x: Var, h: Var) -> Result<Var> {
    let d = g.value(p.w_ih).rows();
    if g.value(x).cols() != d {
        return Err(Error::shape("gru_cell input", g.value(x).shape(), g.value(p.w_ih).shape()));
    }
    if g.value(h).cols() != p.hidden || g.value(h).rows() != g.value(x).rows() {
        return Err(Error::shape("gru_cell state", g.value(h).shape(), &[g.value(x).rows(), p.hidden]));
    }
    let gi = dense_forward(g, x, p.w_ih, p.b_ih)?;
    gru_step(g, p, gi, h)
}

/// Runs a GRU over a clip-major sequence `x: [B*T × D]` from a zero state.
/// Returns `[B*T × H]` in the same layout; `reverse` scans right-to-left.
pub fn gru_sequence(g: &mut Graph, p: &GruVars, x: Var, batch: usize, steps: usize, reverse: bool) -> Result<Var> {
    if steps == 0 || batch == 0 {
        invalid!("GRU over an empty sequence");
    }
    if g.value(x).rows() != batch * steps {
        return Err(Error::shape("gru_sequence", g.value(x).shape(), &[batch * steps]));
    }
    if g.value(x).cols() != g.value(p.w_ih).rows() {
        return Err(Error::shape("gru_sequence input", g.value(x).shape(), g.value(p.w_ih).shape()));
    }
    let gi_all = dense_forward(g, x, p.w_ih, p.b_ih)?;
    let mut h = g.input(Tensor::zeros(&[batch, p.hidden]));
    let mut outs = vec![h; steps];
    let order: Vec<usize> = if reverse { (0..steps).rev().collect() } else { (0..steps).collect() };
    let mut rows = vec![0usize; batch];
    for t in order {
        for (b, r) in rows.iter_mut().enumerate() {
            *r = b * steps + t;
        }
        let gi = g.gather_rows(gi_all, &rows)?;
        h = gru_step(g, p, gi, h)?;
        outs[t] = h;
    }
    g.stack_steps(&outs)
}

/// Bidirectional GRU: `[B*T × D]` → `[B*T × 2H]` (forward half first).
pub fn bigru_forward(
    g: &mut Graph,
    fwd: &GruVars,
    bwd: &GruVars,
    x: Var,
    batch: usize,
    steps: usize,
) -> Result<Var> {
    let f = gru_sequence(g, fwd, x, batch, steps, false)?;
    let b = gru_sequence(g, bwd, x, batch, steps, true)?;
    g.concat_cols(&[f, b])
}

/// MSE of the posterior loss: `Σ_t Σ_θ (p − p̄)²`, summed rather than averaged.
pub fn mse_loss(g: &mut Graph, pred: Var, target: &Tensor) -> Result<Var> {
    g.sum_squared_error(pred, target)
}

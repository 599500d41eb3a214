//! Mini-batch training loops for both networks.
//!
//! Each epoch visits the training clips in an order drawn from
//! `(seed, epoch)` alone, so resuming at epoch `k` from a saved
//! `(params, Adam)` state replays exactly the same updates.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::coding::{mae, DoaTrace};
use crate::doanet::{self, DoaExample};
use crate::error::{invalid, Result};
use crate::masknet::{self, MaskExample};
use crate::numerics::{AdamState, Graph, Mode, ParamStore};
use crate::rng::rng_indexed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_mae: Option<f64>,
}

/// Shuffled mini-batches of `0..n` for one epoch.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_indexed(seed, "epoch-shuffle", epoch as u64));
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Runs epochs `start_epoch + 1 ..= cfg.epochs`. `on_epoch` sees the state
/// after every epoch (for checkpointing and logging).
pub fn fit_masknet(
    store: &mut ParamStore,
    adam: &mut AdamState,
    train: &[MaskExample],
    val: &[MaskExample],
    cfg: &FitConfig,
    seed: u64,
    start_epoch: usize,
    mut on_epoch: impl FnMut(&EpochStats, &ParamStore, &AdamState) -> Result<()>,
) -> Result<Vec<EpochStats>> {
    if train.is_empty() {
        invalid!("empty mask training set");
    }
    let mut history = Vec::new();
    for epoch in start_epoch + 1..=cfg.epochs {
        let (mut sse, mut bins) = (0.0, 0usize);
        for batch in epoch_batches(train.len(), cfg.batch_size, seed, epoch) {
            let clips: Vec<&MaskExample> = batch.iter().map(|&i| &train[i]).collect();
            let mut g = Graph::new();
            let (loss, n) = masknet::batch_loss(&mut g, store, &clips)?;
            sse += g.value(loss).data()[0];
            bins += n;
            let mean = g.scale(loss, 1.0 / n as f64);
            g.backward(mean)?;
            g.flush_grads(store);
            adam.step(store)?;
        }
        let val_loss = if val.is_empty() { f64::NAN } else { masknet::per_bin_mse(store, val)? };
        let stats = EpochStats {
            epoch,
            train_loss: sse / bins as f64,
            val_loss,
            val_mae: None,
        };
        on_epoch(&stats, store, adam)?;
        history.push(stats);
    }
    Ok(history)
}

/// Mean eval-mode loss and frame MAE over a clip set.
pub fn evaluate_doanet(store: &mut ParamStore, set: &[DoaExample]) -> Result<(f64, f64)> {
    if set.is_empty() {
        invalid!("empty evaluation set");
    }
    let (mut loss, mut err) = (0.0, 0.0);
    for ex in set {
        let mut g = Graph::new();
        let l = doanet::batch_loss(&mut g, store, &[ex], Mode::Eval)?;
        loss += g.value(l).data()[0];
        let trace = doanet::predict_trace(store, ex)?;
        err += mae(&trace, &DoaTrace::constant(ex.doa, trace.len()))?;
    }
    Ok((loss / set.len() as f64, err / set.len() as f64))
}

pub fn fit_doanet(
    store: &mut ParamStore,
    adam: &mut AdamState,
    train: &[DoaExample],
    val: &[DoaExample],
    cfg: &FitConfig,
    seed: u64,
    start_epoch: usize,
    mut on_epoch: impl FnMut(&EpochStats, &ParamStore, &AdamState) -> Result<()>,
) -> Result<Vec<EpochStats>> {
    if train.is_empty() {
        invalid!("empty DoA training set");
    }
    let mut history = Vec::new();
    for epoch in start_epoch + 1..=cfg.epochs {
        let (mut total, mut clips) = (0.0, 0usize);
        for batch in epoch_batches(train.len(), cfg.batch_size, seed, epoch) {
            let exs: Vec<&DoaExample> = batch.iter().map(|&i| &train[i]).collect();
            let mut g = Graph::new();
            let loss = doanet::batch_loss(&mut g, store, &exs, Mode::Train)?;
            total += g.value(loss).data()[0] * exs.len() as f64;
            clips += exs.len();
            g.backward(loss)?;
            g.flush_grads(store);
            adam.step(store)?;
        }
        let (val_loss, val_mae) = if val.is_empty() {
            (f64::NAN, None)
        } else {
            let (l, m) = evaluate_doanet(store, val)?;
            (l, Some(m))
        };
        let stats = EpochStats {
            epoch,
            train_loss: total / clips as f64,
            val_loss,
            val_mae,
        };
        on_epoch(&stats, store, adam)?;
        history.push(stats);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_each_index_once() {
        let b = epoch_batches(10, 3, 7, 1);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 3, 1]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(b, epoch_batches(10, 3, 7, 1));
        assert_ne!(b, epoch_batches(10, 3, 7, 2));
    }
}

//! Training stages, checkpoints and resume.
//!
//! Each stage writes `checkpoints/<stage>.ckpt` (final parameters) and keeps
//! `checkpoints/<stage>.state` (parameters, Adam moments, epoch, loss
//! history) current after every epoch. A rerun with the same configuration
//! continues from the state file and produces the same bytes as an
//! uninterrupted run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::layout::{log_event, Layout};
use super::manifest::{read_jsonl, ClipRecord, ClipSplit, CLIP_SCHEMA};
use crate::acoustics::Stereo;
use crate::coding::DoaClass;
use crate::doanet::{self, mono_magnitude, stereo_spectra, DoaExample};
use crate::dsp::{read_wav, Waveform};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::masknet::{self, irm_target, MaskExample};
use crate::numerics::{AdamConfig, AdamState, Container, ParamStore};
use crate::rng::derive_seed;
use crate::training::{fit_doanet, fit_masknet, EpochStats, FitConfig};

pub const PARAMS_FORMAT: &str = "locselect.params";
pub const STATE_FORMAT: &str = "locselect.state";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Mask,
    Doa,
    DoaUnmasked,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Mask => "mask",
            Stage::Doa => "doa",
            Stage::DoaUnmasked => "doa-unmasked",
        }
    }

    fn file_stem(self) -> &'static str {
        match self {
            Stage::Mask => "mask",
            Stage::Doa => "doa",
            Stage::DoaUnmasked => "doa_unmasked",
        }
    }

    pub fn checkpoint(self, layout: &Layout) -> PathBuf {
        layout.checkpoint_dir().join(format!("{}.ckpt", self.file_stem()))
    }

    pub fn state_file(self, layout: &Layout) -> PathBuf {
        layout.checkpoint_dir().join(format!("{}.state", self.file_stem()))
    }

    /// Parameters of the epoch with the lowest validation loss so far.
    pub fn best_file(self, layout: &Layout) -> PathBuf {
        layout.checkpoint_dir().join(format!("{}.best", self.file_stem()))
    }

    pub fn loss_log(self, layout: &Layout) -> PathBuf {
        layout.logs_dir().join(format!("train_{}.csv", self.file_stem()))
    }

    pub fn config_hash(self, cfg: &ExperimentConfig) -> String {
        match self {
            Stage::Mask => cfg.mask_hash(),
            Stage::Doa => cfg.doa_hash(true),
            Stage::DoaUnmasked => cfg.doa_hash(false),
        }
    }

    fn fit_config(self, cfg: &ExperimentConfig) -> FitConfig {
        match self {
            Stage::Mask => cfg.train_mask,
            _ => cfg.train_doa,
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mask" => Ok(Stage::Mask),
            "doa" => Ok(Stage::Doa),
            "doa-unmasked" => Ok(Stage::DoaUnmasked),
            other => Err(Error::InvalidArgument(format!("unknown stage {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Stop (with a resumable state file) after this epoch.
    pub stop_after_epoch: Option<usize>,
    /// Print one line per epoch to stdout.
    pub progress: bool,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub stage: Stage,
    /// Epochs already done when this invocation started.
    pub resumed_from: usize,
    pub history: Vec<EpochStats>,
    /// `None` when stopped early.
    pub checkpoint: Option<PathBuf>,
    /// Epoch whose parameters went into the checkpoint.
    pub best_epoch: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LogRow {
    epoch: usize,
    train_loss: f64,
    val_loss: f64,
}

impl From<&EpochStats> for LogRow {
    fn from(s: &EpochStats) -> Self {
        Self {
            epoch: s.epoch,
            train_loss: s.train_loss,
            val_loss: s.val_loss,
        }
    }
}

/// Reads one split of the clip manifest, checking it belongs to `cfg`.
pub fn load_clips(cfg: &ExperimentConfig, layout: &Layout, split: ClipSplit) -> Result<Vec<ClipRecord>> {
    let path = layout.clip_manifest(split);
    if !path.exists() {
        return Err(Error::MissingPrerequisite(format!(
            "{} not found; run simulate first",
            path.display()
        )));
    }
    let (header, records) = read_jsonl::<ClipRecord>(&path, CLIP_SCHEMA)?;
    if header.config_hash != cfg.data_hash() {
        return Err(Error::Config(format!(
            "{} was generated with a different configuration; rerun simulate",
            path.display()
        )));
    }
    Ok(records.into_iter().filter(|r| r.split == split).collect())
}

pub fn read_stereo(layout: &Layout, rel: &str, fs: u32) -> Result<Stereo> {
    let path = layout.resolve_data(rel);
    let ch = read_wav(&path, fs)?;
    match <[Vec<f64>; 2]>::try_from(ch) {
        Ok(channels) => Ok(Stereo {
            channels,
            sample_rate: fs,
        }),
        Err(ch) => Err(Error::InvalidArgument(format!(
            "{}: expected 2 channels, found {}",
            path.display(),
            ch.len()
        ))),
    }
}

pub fn read_mono(layout: &Layout, rel: &str, fs: u32) -> Result<Waveform> {
    let path = layout.resolve_data(rel);
    let mut ch = read_wav(&path, fs)?;
    if ch.len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "{}: expected 1 channel, found {}",
            path.display(),
            ch.len()
        )));
    }
    Ok(Waveform::new(ch.remove(0), fs))
}

fn mask_example(layout: &Layout, r: &ClipRecord, fs: u32) -> Result<MaskExample> {
    let missing = || Error::MissingPrerequisite(format!("{}: training components not written", r.clip_id));
    let mix = read_stereo(layout, &r.mixture_wav, fs)?;
    let target = read_stereo(layout, r.target_wav.as_deref().ok_or_else(missing)?, fs)?;
    let s_mag = mono_magnitude(&target.channel(0))?;
    let i_mag = match &r.interferer_wav {
        Some(rel) => mono_magnitude(&read_stereo(layout, rel, fs)?.channel(0))?,
        None => s_mag.map(|_| 0.0),
    };
    let reference = read_mono(layout, &r.reference_wav, fs)?;
    MaskExample::new(
        &mono_magnitude(&mix.channel(0))?,
        &mono_magnitude(&reference)?,
        irm_target(&s_mag, &i_mag)?,
    )
}

/// Network input and coded target of one clip, masked when `mask_params` is set.
pub fn doa_example(
    cfg: &ExperimentConfig,
    layout: &Layout,
    r: &ClipRecord,
    mask_params: Option<&ParamStore>,
) -> Result<DoaExample> {
    let fs = cfg.sample_rate;
    let spec = stereo_spectra(&read_stereo(layout, &r.mixture_wav, fs)?)?;
    let mask = match mask_params {
        Some(_) => doanet::channel1_mask(&spec, &read_mono(layout, &r.reference_wav, fs)?, mask_params)?,
        None => None,
    };
    let features = doanet::clip_features(&spec, mask.as_ref(), cfg.doanet.phase_mode)?;
    DoaExample::new(&features, DoaClass::from_degrees(r.theta_t), cfg.sigma_deg)
}

/// Loads a parameter checkpoint, checking format, stage and configuration.
pub fn load_params(path: &Path, stage: Stage, expected_hash: &str) -> Result<ParamStore> {
    if !path.exists() {
        return Err(Error::MissingPrerequisite(format!(
            "{} not found; run train --stage {}",
            path.display(),
            stage.name()
        )));
    }
    let c = Container::load(path)?;
    let meta = |k: &str| c.meta.get(k).map(String::as_str).unwrap_or("");
    if meta("format") != PARAMS_FORMAT || meta("stage") != stage.name() {
        return Err(Error::Checkpoint(format!("{}: not a {} checkpoint", path.display(), stage.name())));
    }
    if meta("config_hash") != expected_hash {
        return Err(Error::Config(format!(
            "{} was trained with a different configuration; retrain stage {}",
            path.display(),
            stage.name()
        )));
    }
    ParamStore::from_container(&c)
}

fn save_params(path: &Path, stage: Stage, hash: &str, epoch: usize, store: &ParamStore) -> Result<()> {
    let mut c = store.to_container();
    c.meta.insert("format".into(), PARAMS_FORMAT.into());
    c.meta.insert("stage".into(), stage.name().into());
    c.meta.insert("config_hash".into(), hash.into());
    c.meta.insert("epoch".into(), epoch.to_string());
    write_atomic(path, &c)
}

/// Epoch (1-based) with the lowest validation loss; ties go to the earlier one.
fn best_epoch(rows: &[LogRow]) -> Option<usize> {
    rows.iter()
        .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss).then(a.epoch.cmp(&b.epoch)))
        .map(|r| r.epoch)
}

fn write_atomic(path: &Path, c: &Container) -> Result<()> {
    let tmp = path.with_extension("tmp");
    c.save(&tmp)?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Resume {
    store: ParamStore,
    adam: AdamState,
    epoch: usize,
    history: Vec<LogRow>,
}

fn load_state(path: &Path, stage: Stage, hash: &str, adam_cfg: AdamConfig) -> Result<Option<Resume>> {
    if !path.exists() {
        return Ok(None);
    }
    let c = Container::load(path)?;
    let meta = |k: &str| c.meta.get(k).cloned().unwrap_or_default();
    if meta("format") != STATE_FORMAT || meta("stage") != stage.name() || meta("config_hash") != hash {
        log::warn!("{}: stale training state ignored", path.display());
        return Ok(None);
    }
    let epoch = meta("epoch")
        .parse()
        .map_err(|_| Error::Checkpoint(format!("{}: bad epoch", path.display())))?;
    let history = serde_json::from_str(&meta("history"))?;
    Ok(Some(Resume {
        store: ParamStore::from_container(&c)?,
        adam: AdamState::from_container(adam_cfg, &c)?,
        epoch,
        history,
    }))
}

fn save_state(
    path: &Path,
    stage: Stage,
    hash: &str,
    epoch: usize,
    history: &[LogRow],
    store: &ParamStore,
    adam: &AdamState,
) -> Result<()> {
    let mut c = store.to_container();
    let a = adam.to_container();
    c.meta.extend(a.meta);
    c.tensors.extend(a.tensors);
    c.meta.insert("format".into(), STATE_FORMAT.into());
    c.meta.insert("stage".into(), stage.name().into());
    c.meta.insert("config_hash".into(), hash.into());
    c.meta.insert("epoch".into(), epoch.to_string());
    c.meta.insert("history".into(), serde_json::to_string(history)?);
    write_atomic(path, &c)
}

fn write_loss_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Runs one training stage.
pub fn train(
    cfg: &ExperimentConfig,
    layout: &Layout,
    stage: Stage,
    exec: Exec,
    opts: &TrainOptions,
) -> Result<TrainSummary> {
    cfg.validate()?;
    let fs = cfg.sample_rate;
    let hash = stage.config_hash(cfg);
    let mask_params = match stage {
        Stage::Doa => Some(load_params(&Stage::Mask.checkpoint(layout), Stage::Mask, &cfg.mask_hash())?),
        _ => None,
    };
    let train_clips = load_clips(cfg, layout, ClipSplit::Train)?;
    let val_clips = load_clips(cfg, layout, ClipSplit::Val)?;
    layout.ensure(&layout.checkpoint_dir())?;
    layout.ensure(&layout.logs_dir())?;

    let mut fit = stage.fit_config(cfg);
    if let Some(stop) = opts.stop_after_epoch {
        fit.epochs = fit.epochs.min(stop);
    }
    let adam_cfg = AdamConfig {
        lr: fit.lr,
        ..AdamConfig::default()
    };
    let seed = derive_seed(cfg.seed, stage.name());
    let state_path = stage.state_file(layout);
    let resume = load_state(&state_path, stage, &hash, adam_cfg)?;
    let (mut store, mut adam, start, mut rows) = match resume {
        Some(r) => (r.store, r.adam, r.epoch, r.history),
        None => {
            let store = match stage {
                Stage::Mask => masknet::init_masknet(&cfg.masknet, derive_seed(seed, "init"))?,
                _ => doanet::init_doanet(&cfg.doanet, derive_seed(seed, "init"))?,
            };
            let adam = AdamState::new(adam_cfg, &store);
            (store, adam, 0, Vec::new())
        }
    };
    rows.truncate(start);
    log_event(
        layout,
        &format!(
            "train {}: {} train / {} val clips, epochs {}..={}",
            stage.name(),
            train_clips.len(),
            val_clips.len(),
            start + 1,
            fit.epochs
        ),
    );

    let ckpt = stage.checkpoint(layout);
    let log_path = stage.loss_log(layout);
    let best_path = stage.best_file(layout);
    let mut on_epoch = |s: &EpochStats, store: &ParamStore, adam: &AdamState| -> Result<()> {
        rows.push(LogRow::from(s));
        if best_epoch(&rows) == Some(s.epoch) {
            save_params(&best_path, stage, &hash, s.epoch, store)?;
        }
        save_state(&state_path, stage, &hash, s.epoch, &rows, store, adam)?;
        write_loss_log(&log_path, &rows)?;
        let mae = s.val_mae.map(|m| format!(", val MAE {m:.2} deg")).unwrap_or_default();
        let line = format!(
            "train {} epoch {}: train loss {:.6}, val loss {:.6}{mae}",
            stage.name(),
            s.epoch,
            s.train_loss,
            s.val_loss
        );
        if opts.progress {
            println!("{line}");
        }
        log_event(layout, &line);
        Ok(())
    };

    let history = if start >= fit.epochs {
        Vec::new()
    } else {
        match stage {
            Stage::Mask => {
                let tr = exec.try_map(&train_clips, |r| mask_example(layout, r, fs))?;
                let va = exec.try_map(&val_clips, |r| mask_example(layout, r, fs))?;
                fit_masknet(&mut store, &mut adam, &tr, &va, &fit, seed, start, &mut on_epoch)?
            }
            Stage::Doa | Stage::DoaUnmasked => {
                let mp = mask_params.as_ref();
                let tr = exec.try_map(&train_clips, |r| doa_example(cfg, layout, r, mp))?;
                let va = exec.try_map(&val_clips, |r| doa_example(cfg, layout, r, mp))?;
                fit_doanet(&mut store, &mut adam, &tr, &va, &fit, seed, start, &mut on_epoch)?
            }
        }
    };

    let full = stage.fit_config(cfg).epochs;
    let done = fit.epochs == full;
    let best = if done { best_epoch(&rows) } else { None };
    let checkpoint = match best {
        Some(epoch) => {
            let store = load_params(&best_path, stage, &hash)?;
            save_params(&ckpt, stage, &hash, epoch, &store)?;
            log_event(layout, &format!("train {}: wrote {} (epoch {epoch})", stage.name(), ckpt.display()));
            Some(ckpt)
        }
        None => None,
    };
    Ok(TrainSummary {
        stage,
        resumed_from: start,
        history,
        checkpoint,
        best_epoch: best,
    })
}

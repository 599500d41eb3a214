//! Test-set inference: per-frame DoA traces for both network variants,
//! clip-level GCC-PHAT, the anechoic GCC-PHAT audit, and exported
//! pre-Sigmoid outputs for one clip.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::layout::{log_event, Layout};
use super::manifest::{ClipRecord, ClipSplit};
use super::train::{load_clips, load_params, read_mono, read_stereo, Stage};
use crate::baselines::{gcc_phat_doa, lag_quantization_bound};
use crate::coding::{circular_distance, DoaClass, N_CLASSES};
use crate::doanet::{infer, Inference};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::numerics::{ParamStore, Tensor};

pub const TRACE_COLUMNS: [&str; 6] = ["clip_id", "snr_db", "frame", "theta_gt", "theta_est", "abs_err"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Locselect,
    Unmasked,
    GccPhat,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Locselect, Variant::Unmasked, Variant::GccPhat];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Locselect => "locselect",
            Variant::Unmasked => "unmasked",
            Variant::GccPhat => "gcc_phat",
        }
    }

    pub fn trace_file(self, layout: &Layout) -> PathBuf {
        layout.eval_dir().join(format!("traces_{}.csv", self.name()))
    }

    /// Clip-level estimates. GCC-PHAT is clip-level only, so its file is the
    /// trace file.
    pub fn clip_file(self, layout: &Layout) -> PathBuf {
        match self {
            Variant::GccPhat => self.trace_file(layout),
            v => layout.eval_dir().join(format!("clips_{}.csv", v.name())),
        }
    }
}

/// One row of a metric CSV. Network rows hold integer classes; GCC-PHAT rows
/// hold continuous angles. `frame` is empty for clip-level estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub clip_id: String,
    pub snr_db: f64,
    pub frame: Option<usize>,
    pub theta_gt: f64,
    pub theta_est: f64,
    pub abs_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub clip_id: String,
    pub theta_gt: f64,
    pub theta_est: f64,
    pub abs_err: f64,
    pub bound_deg: f64,
    pub within_bound: bool,
}

pub fn audit_file(layout: &Layout) -> PathBuf {
    layout.eval_dir().join("gcc_audit.csv")
}

pub fn posterior_file(layout: &Layout, variant: Variant) -> PathBuf {
    layout.eval_dir().join(format!("posterior_{}.csv", variant.name()))
}

#[derive(Clone, Debug)]
pub struct EvalSummary {
    pub test_clips: usize,
    pub audit_clips: usize,
    pub audit_within_bound: usize,
}

fn row(r: &ClipRecord, frame: Option<usize>, gt: f64, est: f64) -> TraceRow {
    TraceRow {
        clip_id: r.clip_id.clone(),
        snr_db: r.snr_db.unwrap_or(f64::NAN),
        frame,
        theta_gt: gt,
        theta_est: est,
        abs_err: circular_distance(est, gt),
    }
}

/// Per-frame rows and the clip-level row of one network variant.
fn network_rows(r: &ClipRecord, inf: &Inference) -> (Vec<TraceRow>, TraceRow) {
    let gt = f64::from(DoaClass::from_degrees(r.theta_t).degrees());
    let frames = inf
        .trace
        .angles
        .iter()
        .enumerate()
        .map(|(t, c)| row(r, Some(t), gt, f64::from(c.degrees())))
        .collect();
    (frames, row(r, None, gt, f64::from(inf.clip_doa.degrees())))
}

fn gcc_estimate(layout: &Layout, r: &ClipRecord, fs: u32) -> Result<f64> {
    let x = read_stereo(layout, &r.mixture_wav, fs)?;
    let spacing = r.scene.array.spacing();
    gcc_phat_doa(&x.channels[0], &x.channels[1], spacing, r.scene.room.speed_of_sound, fs)
}

struct ClipResult {
    rows: [Vec<TraceRow>; 3],
    clip_rows: [TraceRow; 2],
    logits: Option<[Tensor; 2]>,
}

fn eval_clip(
    cfg: &ExperimentConfig,
    layout: &Layout,
    r: &ClipRecord,
    mask: &ParamStore,
    doa: &ParamStore,
    unmasked: &ParamStore,
    export: bool,
) -> Result<ClipResult> {
    let fs = cfg.sample_rate;
    let x = read_stereo(layout, &r.mixture_wav, fs)?;
    let reference = read_mono(layout, &r.reference_wav, fs)?;
    let mode = cfg.doanet.phase_mode;
    let masked = infer(&x, &reference, Some(mask), &mut doa.clone(), mode)?;
    let plain = infer(&x, &reference, None, &mut unmasked.clone(), mode)?;
    let gcc = row(r, None, r.theta_t, gcc_estimate(layout, r, fs)?);
    let (m_frames, m_clip) = network_rows(r, &masked);
    let (p_frames, p_clip) = network_rows(r, &plain);
    Ok(ClipResult {
        rows: [m_frames, p_frames, vec![gcc]],
        clip_rows: [m_clip, p_clip],
        logits: export.then(|| [masked.output.logits, plain.output.logits]),
    })
}

pub fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(Error::MissingPrerequisite(format!("{} not found; run eval first", path.display())));
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(Error::from)
}

/// `frame, deg_1 .. deg_360` rows of pre-Sigmoid outputs.
fn write_posterior(path: &Path, logits: &Tensor) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["frame".to_string()];
    header.extend((1..=N_CLASSES).map(|d| format!("deg_{d}")));
    w.write_record(&header)?;
    for t in 0..logits.rows() {
        let mut rec = vec![t.to_string()];
        rec.extend(logits.row(t).iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_posterior(path: &Path) -> Result<Tensor> {
    if !path.exists() {
        return Err(Error::MissingPrerequisite(format!("{} not found; run eval first", path.display())));
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut data = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        for v in rec.iter().skip(1) {
            data.push(
                v.parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("{}: bad value {v:?}", path.display())))?,
            );
        }
        rows += 1;
    }
    Tensor::matrix(rows, N_CLASSES, data)
}

fn audit_row(cfg: &ExperimentConfig, layout: &Layout, r: &ClipRecord) -> Result<AuditRow> {
    let est = gcc_estimate(layout, r, cfg.sample_rate)?;
    let bound = lag_quantization_bound(
        r.theta_t,
        r.scene.array.spacing(),
        r.scene.room.speed_of_sound,
        cfg.sample_rate,
    );
    let err = (est - r.theta_t).abs();
    Ok(AuditRow {
        clip_id: r.clip_id.clone(),
        theta_gt: r.theta_t,
        theta_est: est,
        abs_err: err,
        bound_deg: bound,
        within_bound: err <= bound,
    })
}

/// Runs all variants over the test split and the audit split.
pub fn evaluate(cfg: &ExperimentConfig, layout: &Layout, exec: Exec) -> Result<EvalSummary> {
    cfg.validate()?;
    let mask = load_params(&Stage::Mask.checkpoint(layout), Stage::Mask, &cfg.mask_hash())?;
    let doa = load_params(&Stage::Doa.checkpoint(layout), Stage::Doa, &cfg.doa_hash(true))?;
    let unmasked = load_params(
        &Stage::DoaUnmasked.checkpoint(layout),
        Stage::DoaUnmasked,
        &cfg.doa_hash(false),
    )?;
    let test = load_clips(cfg, layout, ClipSplit::Test)?;
    let audit = load_clips(cfg, layout, ClipSplit::Audit)?;
    layout.ensure(&layout.eval_dir())?;
    log_event(layout, &format!("eval: {} test clips, {} audit clips", test.len(), audit.len()));

    let export = |r: &ClipRecord| {
        r.scene_index == cfg.report.posterior_clip && r.snr_db == Some(cfg.report.posterior_snr_db)
    };
    let results = exec.try_map(&test, |r| eval_clip(cfg, layout, r, &mask, &doa, &unmasked, export(r)))?;

    for (k, v) in Variant::ALL.iter().enumerate() {
        write_rows(&v.trace_file(layout), results.iter().flat_map(|c| &c.rows[k]))?;
    }
    for (k, v) in [Variant::Locselect, Variant::Unmasked].iter().enumerate() {
        write_rows(&v.clip_file(layout), results.iter().map(|c| &c.clip_rows[k]))?;
    }
    let logits = results
        .iter()
        .find_map(|c| c.logits.as_ref())
        .ok_or_else(|| Error::Config("report clip not present in the test split".into()))?;
    write_posterior(&posterior_file(layout, Variant::Locselect), &logits[0])?;
    write_posterior(&posterior_file(layout, Variant::Unmasked), &logits[1])?;

    let audit_rows = exec.try_map(&audit, |r| audit_row(cfg, layout, r))?;
    write_rows(&audit_file(layout), &audit_rows)?;
    let within = audit_rows.iter().filter(|a| a.within_bound).count();
    log_event(
        layout,
        &format!("eval: done, GCC-PHAT audit {within}/{} within bound", audit_rows.len()),
    );
    Ok(EvalSummary {
        test_clips: test.len(),
        audit_clips: audit_rows.len(),
        audit_within_bound: within,
    })
}

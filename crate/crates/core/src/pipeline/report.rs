//! Summary tables, JSON report and SVG plots, all recomputed from the
//! metric CSVs written by eval.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentConfig;
use super::eval::{audit_file, posterior_file, read_posterior, read_rows, write_rows, AuditRow, TraceRow, Variant};
use super::layout::{log_event, Layout};
use super::manifest::ClipSplit;
use super::train::load_clips;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const REPORT_VERSION: u32 = 1;

/// MAE and ACC over one group of trace rows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Cell {
    pub rows: usize,
    pub mae_deg: f64,
    pub acc: f64,
}

pub fn cell(rows: &[&TraceRow], rho: f64) -> Option<Cell> {
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    Some(Cell {
        rows: rows.len(),
        mae_deg: rows.iter().map(|r| r.abs_err).sum::<f64>() / n,
        acc: rows.iter().filter(|r| r.abs_err <= rho).count() as f64 / n,
    })
}

/// Cells per SNR, in grid order.
pub fn cells_by_snr(rows: &[TraceRow], grid: &[f64], rho: f64) -> Vec<Option<Cell>> {
    grid.iter()
        .map(|&s| cell(&rows.iter().filter(|r| r.snr_db == s).collect::<Vec<_>>(), rho))
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct VariantCells {
    pub variant: Variant,
    pub cells: Vec<Option<Cell>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditSummary {
    pub scenes: usize,
    pub within_bound: usize,
    pub mae_deg: f64,
    pub acc: f64,
}

/// Pairwise comparisons the experiment is designed to show.
#[derive(Clone, Debug, Serialize)]
pub struct Comparisons {
    /// Per SNR: LocSelect MAE strictly below the unmasked ablation.
    pub mae_better: Vec<bool>,
    /// Per SNR: LocSelect ACC strictly above the unmasked ablation.
    pub acc_better: Vec<bool>,
    /// ACC gap (LocSelect − unmasked) at the lowest and highest SNR.
    pub acc_gap_low: f64,
    pub acc_gap_high: f64,
    /// LocSelect ACC and MAE improve from the lowest to the highest SNR.
    pub locselect_improves_with_snr: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub report_version: u32,
    pub package_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub rho_deg: f64,
    pub snr_grid_db: Vec<f64>,
    pub min_test_frames: usize,
    pub cells_below_min_frames: Vec<String>,
    /// Frame-level cells (GCC-PHAT is clip-level throughout).
    pub variants: Vec<VariantCells>,
    /// Clip-level cells from the time-averaged posterior.
    pub clip_variants: Vec<VariantCells>,
    pub gcc_audit: AuditSummary,
    pub comparisons: Comparisons,
}

pub fn summary_file(layout: &Layout) -> PathBuf {
    layout.eval_dir().join("summary.csv")
}

pub fn clip_summary_file(layout: &Layout) -> PathBuf {
    layout.eval_dir().join("summary_clip.csv")
}

fn label(v: Variant) -> &'static str {
    match v {
        Variant::Locselect => "LocSelect",
        Variant::Unmasked => "Unmasked",
        Variant::GccPhat => "GCC-PHAT",
    }
}

fn snr_label(s: f64) -> String {
    format!("snr_{s}")
}

/// Table layout: one row per (method, metric), one column per SNR, plus the
/// anechoic audit column for GCC-PHAT.
fn write_summary(path: &Path, grid: &[f64], variants: &[VariantCells], audit: &AuditSummary) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["method".to_string(), "metric".to_string()];
    header.extend(grid.iter().map(|&s| snr_label(s)));
    header.push("anechoic".into());
    w.write_record(&header)?;
    for vc in variants {
        for metric in ["MAE", "ACC"] {
            let mut rec = vec![label(vc.variant).to_string(), metric.to_string()];
            rec.extend(vc.cells.iter().map(|c| match c {
                Some(c) if metric == "MAE" => c.mae_deg.to_string(),
                Some(c) => c.acc.to_string(),
                None => String::new(),
            }));
            rec.push(match (vc.variant, metric) {
                (Variant::GccPhat, "MAE") => audit.mae_deg.to_string(),
                (Variant::GccPhat, _) => audit.acc.to_string(),
                _ => String::new(),
            });
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn comparisons(loc: &[Option<Cell>], unm: &[Option<Cell>]) -> Comparisons {
    let pairs: Vec<(Cell, Cell)> = loc.iter().zip(unm).filter_map(|(a, b)| Some(((*a)?, (*b)?))).collect();
    let gap = |p: Option<&(Cell, Cell)>| p.map(|(a, b)| a.acc - b.acc).unwrap_or(f64::NAN);
    let improves = match (pairs.first(), pairs.last()) {
        (Some((lo, _)), Some((hi, _))) => hi.acc > lo.acc && hi.mae_deg < lo.mae_deg,
        _ => false,
    };
    Comparisons {
        mae_better: pairs.iter().map(|(a, b)| a.mae_deg < b.mae_deg).collect(),
        acc_better: pairs.iter().map(|(a, b)| a.acc > b.acc).collect(),
        acc_gap_low: gap(pairs.first()),
        acc_gap_high: gap(pairs.last()),
        locselect_improves_with_snr: improves,
    }
}

/// Builds every report artifact from the eval outputs.
pub fn report(cfg: &ExperimentConfig, layout: &Layout) -> Result<Report> {
    cfg.validate()?;
    let grid = cfg.snr_grid_db.clone();
    let rho = cfg.rho_deg;
    let mut variants = Vec::new();
    let mut below = Vec::new();
    for v in Variant::ALL {
        let rows: Vec<TraceRow> = read_rows(&v.trace_file(layout))?;
        let cells = cells_by_snr(&rows, &grid, rho);
        if v != Variant::GccPhat {
            for (s, c) in grid.iter().zip(&cells) {
                if c.map_or(0, |c| c.rows) < cfg.dataset.min_test_frames {
                    below.push(format!("{}@{s}", v.name()));
                }
            }
        }
        variants.push(VariantCells { variant: v, cells });
    }
    let mut clip_variants = Vec::new();
    for v in Variant::ALL {
        let rows: Vec<TraceRow> = read_rows(&v.clip_file(layout))?;
        clip_variants.push(VariantCells {
            variant: v,
            cells: cells_by_snr(&rows, &grid, rho),
        });
    }
    for b in &below {
        log::warn!("cell {b} has fewer than {} frames", cfg.dataset.min_test_frames);
    }
    let audit_rows: Vec<AuditRow> = read_rows(&audit_file(layout))?;
    let n = audit_rows.len().max(1) as f64;
    let audit = AuditSummary {
        scenes: audit_rows.len(),
        within_bound: audit_rows.iter().filter(|a| a.within_bound).count(),
        mae_deg: audit_rows.iter().map(|a| a.abs_err).sum::<f64>() / n,
        acc: audit_rows.iter().filter(|a| a.abs_err <= rho).count() as f64 / n,
    };
    let cmp = comparisons(&variants[0].cells, &variants[1].cells);

    write_summary(&summary_file(layout), &grid, &variants, &audit)?;
    write_summary(&clip_summary_file(layout), &grid, &clip_variants, &audit)?;
    let grid_ref = &grid;
    let long: Vec<LongRow> = [("frame", &variants), ("clip", &clip_variants)]
        .into_iter()
        .flat_map(|(granularity, vs)| {
            vs.iter().flat_map(move |vc| {
                grid_ref.iter().zip(&vc.cells).filter_map(move |(&s, c)| {
                    c.map(|c| LongRow {
                        granularity,
                        variant: vc.variant.name(),
                        snr_db: s,
                        rows: c.rows,
                        mae_deg: c.mae_deg,
                        acc: c.acc,
                    })
                })
            })
        })
        .collect();
    write_rows(&layout.eval_dir().join("metrics.csv"), &long)?;

    layout.ensure(&layout.plots_dir())?;
    let plots = layout.plots_dir();
    write_text(&plots.join("mae_vs_snr.svg"), &line_plot(&grid, &variants, "MAE (deg)", |c| c.mae_deg))?;
    write_text(&plots.join("acc_vs_snr.svg"), &line_plot(&grid, &variants, "ACC", |c| c.acc))?;
    let test = load_clips(cfg, layout, ClipSplit::Test)?;
    let clip = test
        .iter()
        .find(|r| r.scene_index == cfg.report.posterior_clip && r.snr_db == Some(cfg.report.posterior_snr_db))
        .ok_or_else(|| Error::Config("report clip not present in the test split".into()))?;
    for v in [Variant::Locselect, Variant::Unmasked] {
        let logits = read_posterior(&posterior_file(layout, v))?;
        let svg = heatmap(&logits, clip.theta_t, &clip.interferer_doas, label(v));
        write_text(&plots.join(format!("posterior_{}.svg", v.name())), &svg)?;
    }

    let rep = Report {
        report_version: REPORT_VERSION,
        package_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        rho_deg: rho,
        snr_grid_db: grid,
        min_test_frames: cfg.dataset.min_test_frames,
        cells_below_min_frames: below,
        variants,
        clip_variants,
        gcc_audit: audit,
        comparisons: cmp,
    };
    write_text(&layout.report_json(), &(serde_json::to_string_pretty(&rep)? + "\n"))?;
    log_event(layout, "report: done");
    Ok(rep)
}

#[derive(Serialize)]
struct LongRow {
    granularity: &'static str,
    variant: &'static str,
    snr_db: f64,
    rows: usize,
    mae_deg: f64,
    acc: f64,
}

fn write_text(path: &Path, s: &str) -> Result<()> {
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

const W: f64 = 480.0;
const H: f64 = 320.0;
const M: f64 = 48.0;
const COLORS: [&str; 3] = ["#1f77b4", "#d62728", "#7f7f7f"];

fn line_plot(grid: &[f64], variants: &[VariantCells], ylabel: &str, metric: impl Fn(&Cell) -> f64) -> String {
    let vals: Vec<f64> = variants.iter().flat_map(|v| v.cells.iter().flatten().map(&metric)).collect();
    let ymax = vals.iter().copied().fold(0.0, f64::max).max(1e-9) * 1.1;
    let (x0, x1) = (grid[0], grid[grid.len() - 1]);
    let span = if x1 > x0 { x1 - x0 } else { 1.0 };
    let px = |x: f64| M + (x - x0) / span * (W - 2.0 * M);
    let py = |y: f64| H - M - y / ymax * (H - 2.0 * M);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{M:.2} {:.2}V{:.2}H{:.2}" stroke="black" fill="none"/>"#,
        M,
        H - M,
        W - M
    );
    for &g in grid {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{g}</text>"#,
            px(g),
            H - M + 16.0
        );
    }
    for k in 0..=4 {
        let y = ymax * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{y:.2}</text>"#,
            M - 4.0,
            py(y) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">SNR (dB)</text>"#,
        W / 2.0,
        H - 8.0
    );
    let _ = writeln!(s, r#"<text x="12" y="{:.2}" font-size="12" transform="rotate(-90 12 {:.2})" text-anchor="middle">{ylabel}</text>"#, H / 2.0, H / 2.0);
    for (i, vc) in variants.iter().enumerate() {
        let pts: Vec<String> = grid
            .iter()
            .zip(&vc.cells)
            .filter_map(|(&g, c)| c.as_ref().map(|c| format!("{:.2},{:.2}", px(g), py(metric(c)))))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" stroke="{}" stroke-width="2" fill="none"/>"#,
            pts.join(" "),
            COLORS[i % 3]
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" fill="{}">{}</text>"#,
            W - M - 90.0,
            M + 14.0 * i as f64,
            COLORS[i % 3],
            label(vc.variant)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Piecewise-linear dark-blue → yellow ramp.
fn ramp(t: f64) -> String {
    const STOPS: [[f64; 3]; 4] = [[68.0, 1.0, 84.0], [59.0, 82.0, 139.0], [33.0, 145.0, 140.0], [253.0, 231.0, 37.0]];
    let t = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - i as f64;
    let c: Vec<u8> = (0..3).map(|k| (STOPS[i][k] + f * (STOPS[i + 1][k] - STOPS[i][k])).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

const HEAT_MAX_COLS: usize = 150;
const HEAT_DEG_BIN: usize = 2;
const HEAT_DEG_SPAN: usize = 180;

/// Frame × angle heat map over `1..=180°` of pre-Sigmoid outputs, pooled by
/// maximum, with the target (solid) and interferer (dashed) angles marked.
fn heatmap(logits: &Tensor, theta_t: f64, interferers: &[f64], title: &str) -> String {
    let frames = logits.rows();
    let step = frames.div_ceil(HEAT_MAX_COLS).max(1);
    let cols = frames.div_ceil(step);
    let rows = HEAT_DEG_SPAN / HEAT_DEG_BIN;
    let mut pooled = vec![f64::NEG_INFINITY; rows * cols];
    for t in 0..frames {
        let row = logits.row(t);
        for d in 0..HEAT_DEG_SPAN {
            let k = (d / HEAT_DEG_BIN) * cols + t / step;
            pooled[k] = pooled[k].max(row[d]);
        }
    }
    let lo = pooled.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = pooled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = if hi > lo { hi - lo } else { 1.0 };
    let (pw, ph) = (W - 2.0 * M, H - 2.0 * M);
    let (cw, ch) = (pw / cols as f64, ph / rows as f64);
    let py = |deg: f64| M + ph - (deg - 1.0) / HEAT_DEG_SPAN as f64 * ph;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.2}" y="20" font-size="13" text-anchor="middle">{title}</text>"#, W / 2.0);
    for r in 0..rows {
        for c in 0..cols {
            let v = (pooled[r * cols + c] - lo) / range;
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                M + c as f64 * cw,
                M + ph - (r + 1) as f64 * ch,
                cw + 0.05,
                ch + 0.05,
                ramp(v)
            );
        }
    }
    let mut mark = |deg: f64, dash: &str| {
        let _ = writeln!(
            s,
            r#"<line x1="{M:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="white" stroke-width="1.5"{dash}/>"#,
            M + pw,
            y = py(deg)
        );
    };
    mark(theta_t, "");
    for &d in interferers {
        mark(d, r#" stroke-dasharray="4 3""#);
    }
    for deg in [0.0f64, 45.0, 90.0, 135.0, 180.0] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{deg}</text>"#,
            M - 4.0,
            py(deg.max(1.0)) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">frame (0..{frames})</text>"#,
        W / 2.0,
        H - 12.0
    );
    s.push_str("</svg>\n");
    s
}

/// Cells keyed by variant name, for callers that only need the numbers.
pub fn cell_table(rep: &Report) -> BTreeMap<&'static str, Vec<Option<Cell>>> {
    rep.variants.iter().map(|v| (v.variant.name(), v.cells.clone())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(snr: f64, err: f64) -> TraceRow {
        TraceRow {
            clip_id: "c".into(),
            snr_db: snr,
            frame: Some(0),
            theta_gt: 90.0,
            theta_est: 90.0 + err,
            abs_err: err,
        }
    }

    #[test]
    fn cells_use_inclusive_threshold() {
        let rows = vec![row(0.0, 5.0), row(0.0, 6.0), row(0.0, 1.0), row(5.0, 0.0)];
        let c = cells_by_snr(&rows, &[0.0, 5.0, 10.0], 5.0);
        assert_eq!(c[0].unwrap().rows, 3);
        assert!((c[0].unwrap().mae_deg - 4.0).abs() < 1e-12);
        assert!((c[0].unwrap().acc - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(c[1].unwrap().acc, 1.0);
        assert!(c[2].is_none());
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp(0.0), "#440154");
        assert_eq!(ramp(1.0), "#fde725");
        assert_eq!(ramp(-3.0), ramp(0.0));
    }
}

use std::path::{Path, PathBuf};
use std::process::Command;

use locselect::acoustics::snr_of;
use locselect::exec::Exec;
use locselect::pipeline::eval::{self, TraceRow, Variant};
use locselect::pipeline::manifest::{read_jsonl, ClipRecord, ClipSplit, CLIP_SCHEMA};
use locselect::pipeline::report::{self, summary_file};
use locselect::pipeline::train::{load_clips, read_stereo};
use locselect::pipeline::{simulate, train, ExperimentConfig, Layout, Stage, TrainOptions};
use locselect::Error;

fn smoke(dir: &Path) -> (ExperimentConfig, Layout) {
    let mut cfg = ExperimentConfig::smoke();
    cfg.output_dir = dir.to_path_buf();
    (cfg, Layout::new(dir))
}

fn full_run(cfg: &ExperimentConfig, layout: &Layout, exec: Exec) {
    simulate::simulate(cfg, layout, exec).unwrap();
    for stage in [Stage::Mask, Stage::Doa, Stage::DoaUnmasked] {
        train::train(cfg, layout, stage, exec, &TrainOptions::default()).unwrap();
    }
    eval::evaluate(cfg, layout, exec).unwrap();
    report::report(cfg, layout).unwrap();
}

/// Every file under `root` except the timestamped run log, sorted.
fn artifacts(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "run.log" {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn two_runs_are_byte_identical_across_execution_modes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ca, la) = smoke(a.path());
    let (cb, lb) = smoke(b.path());
    full_run(&ca, &la, Exec::Parallel);
    full_run(&cb, &lb, Exec::Sequential);
    let (fa, fb) = (artifacts(a.path()), artifacts(b.path()));
    assert_eq!(
        fa.iter().map(|f| &f.0).collect::<Vec<_>>(),
        fb.iter().map(|f| &f.0).collect::<Vec<_>>()
    );
    for ((p, x), (_, y)) in fa.iter().zip(&fb) {
        assert!(x == y, "{} differs", p.display());
    }
    for v in Variant::ALL {
        let header = std::fs::read_to_string(v.trace_file(&la)).unwrap();
        assert_eq!(header.lines().next().unwrap(), eval::TRACE_COLUMNS.join(","));
    }
    for svg in ["mae_vs_snr.svg", "acc_vs_snr.svg", "posterior_locselect.svg", "posterior_unmasked.svg"] {
        let s = std::fs::read_to_string(la.plots_dir().join(svg)).unwrap();
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"), "{svg}");
    }

    // Report cells recomputed directly from the trace CSVs.
    let mut summary = csv::Reader::from_path(summary_file(&la)).unwrap();
    let rows: Vec<csv::StringRecord> = summary.records().map(Result::unwrap).collect();
    for (vi, v) in Variant::ALL.iter().enumerate() {
        let traces: Vec<TraceRow> = eval::read_rows(&v.trace_file(&la)).unwrap();
        for (si, snr) in ca.snr_grid_db.iter().enumerate() {
            let sel: Vec<&TraceRow> = traces.iter().filter(|r| r.snr_db == *snr).collect();
            let mae = sel.iter().map(|r| r.abs_err).sum::<f64>() / sel.len() as f64;
            let acc = sel.iter().filter(|r| r.abs_err <= 5.0).count() as f64 / sel.len() as f64;
            let got_mae: f64 = rows[2 * vi][2 + si].parse().unwrap();
            let got_acc: f64 = rows[2 * vi + 1][2 + si].parse().unwrap();
            assert!((got_mae - mae).abs() < 1e-12 && (got_acc - acc).abs() < 1e-12);
        }
    }
}

#[test]
fn mixture_components_reproduce_requested_snr() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, layout) = smoke(dir.path());
    let s = simulate::simulate(&cfg, &layout, Exec::Parallel).unwrap();
    assert!(s.max_snr_error_db < 1e-9);
    let (header, recs) = read_jsonl::<ClipRecord>(&layout.clip_manifest(ClipSplit::Train), CLIP_SCHEMA).unwrap();
    assert_eq!(header.config_hash, cfg.data_hash());
    for r in &recs {
        let t = read_stereo(&layout, r.target_wav.as_deref().unwrap(), cfg.sample_rate).unwrap();
        let i = read_stereo(&layout, r.interferer_wav.as_deref().unwrap(), cfg.sample_rate).unwrap();
        let m = read_stereo(&layout, &r.mixture_wav, cfg.sample_rate).unwrap();
        let measured = snr_of(&t, &i).unwrap();
        assert!((measured - r.snr_db.unwrap()).abs() < 1e-6, "{}: {measured}", r.clip_id);
        assert!(m.peak() <= 0.9 + 1e-6);
        for c in 0..2 {
            for n in 0..m.len() {
                let sum = t.channels[c][n] + i.channels[c][n];
                assert!((m.channels[c][n] - sum).abs() < 1e-6);
            }
        }
    }
    assert!(read_stereo(&layout, &recs[0].mixture_wav, 8_000).is_err());
}

#[test]
fn test_clips_never_reuse_training_utterances() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, layout) = smoke(dir.path());
    simulate::simulate(&cfg, &layout, Exec::Parallel).unwrap();
    let utts = |split| -> Vec<String> {
        load_clips(&cfg, &layout, split)
            .unwrap()
            .into_iter()
            .flat_map(|r| {
                let mut u = r.interferer_utterances;
                u.push(r.target_utterance);
                u.push(r.reference_utterance);
                u
            })
            .collect()
    };
    let train: Vec<String> = [ClipSplit::Train, ClipSplit::Val].into_iter().flat_map(utts).collect();
    let test = utts(ClipSplit::Test);
    assert!(!test.is_empty());
    assert!(test.iter().all(|u| !train.contains(u)));

    // A test scene's SNR variants share everything except the mixing gain.
    let recs = load_clips(&cfg, &layout, ClipSplit::Test).unwrap();
    for group in recs.chunks(cfg.snr_grid_db.len()) {
        assert!(group.iter().all(|r| r.scene_index == group[0].scene_index
            && r.target_utterance == group[0].target_utterance
            && r.reference_utterance == group[0].reference_utterance
            && r.theta_t == group[0].theta_t));
        for r in group {
            assert_ne!(r.reference_utterance, r.target_utterance);
        }
    }
}

#[test]
fn interrupted_training_resumes_to_identical_checkpoint() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (mut ca, la) = smoke(a.path());
    ca.train_mask.epochs = 3;
    let mut cb = ca.clone();
    cb.output_dir = b.path().to_path_buf();
    let lb = Layout::new(b.path());
    for (c, l) in [(&ca, &la), (&cb, &lb)] {
        simulate::simulate(c, l, Exec::Parallel).unwrap();
    }
    train::train(&ca, &la, Stage::Mask, Exec::Parallel, &TrainOptions::default()).unwrap();
    let stop = TrainOptions {
        stop_after_epoch: Some(1),
        ..TrainOptions::default()
    };
    let part = train::train(&cb, &lb, Stage::Mask, Exec::Parallel, &stop).unwrap();
    assert!(part.checkpoint.is_none());
    let rest = train::train(&cb, &lb, Stage::Mask, Exec::Parallel, &TrainOptions::default()).unwrap();
    assert_eq!(rest.resumed_from, 1);
    assert_eq!(rest.history.len(), 2);
    for f in [Stage::Mask.checkpoint(&la), Stage::Mask.loss_log(&la)] {
        let g = lb.root.join(f.strip_prefix(&la.root).unwrap());
        assert_eq!(std::fs::read(&f).unwrap(), std::fs::read(&g).unwrap(), "{}", f.display());
    }
    let log = std::fs::read_to_string(Stage::Mask.loss_log(&la)).unwrap();
    assert_eq!(log.lines().next().unwrap(), "epoch,train_loss,val_loss");
    assert_eq!(log.lines().count(), 4);
}

#[test]
fn stages_refuse_to_run_out_of_order() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, layout) = smoke(dir.path());
    let opts = TrainOptions::default();
    let e = train::train(&cfg, &layout, Stage::Mask, Exec::Parallel, &opts).unwrap_err();
    assert!(matches!(e, Error::MissingPrerequisite(_)), "{e}");
    simulate::simulate(&cfg, &layout, Exec::Parallel).unwrap();
    let e = train::train(&cfg, &layout, Stage::Doa, Exec::Parallel, &opts).unwrap_err();
    assert!(matches!(e, Error::MissingPrerequisite(_)), "{e}");
    // The ablation never needs the mask network.
    train::train(&cfg, &layout, Stage::DoaUnmasked, Exec::Parallel, &opts).unwrap();
    assert!(!Stage::Mask.checkpoint(&layout).exists());
    let e = eval::evaluate(&cfg, &layout, Exec::Parallel).unwrap_err();
    assert!(matches!(e, Error::MissingPrerequisite(_)), "{e}");
    let e = report::report(&cfg, &layout).unwrap_err();
    assert!(matches!(e, Error::MissingPrerequisite(_)), "{e}");

    // A checkpoint from a different configuration is rejected.
    train::train(&cfg, &layout, Stage::Mask, Exec::Parallel, &opts).unwrap();
    let mut other = cfg.clone();
    other.train_mask.lr *= 2.0;
    let e = train::train(&other, &layout, Stage::Doa, Exec::Parallel, &opts).unwrap_err();
    assert!(matches!(e, Error::Config(_)), "{e}");
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_locselect")).args(args).output().unwrap()
}

#[test]
fn cli_reports_errors_as_one_json_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("smoke.toml");
    let mut cfg = ExperimentConfig::smoke();
    cfg.output_dir = PathBuf::from("out");
    std::fs::write(&cfg_path, cfg.to_toml().unwrap()).unwrap();
    let c = cfg_path.to_str().unwrap();

    let out = cli(&["train", "--config", c, "--seed", "3", "--stage", "doa"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    let v: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(v["error"], "missing_prerequisite");

    let out = cli(&["train", "--config", c, "--stage", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["error"], "usage");

    let out = cli(&["eval", "--config", "/nonexistent/x.toml"]);
    assert_eq!(out.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["error"], "io");

    let out = cli(&["simulate", "--config", c, "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("out/data/manifest_test.jsonl").exists());
}

#[test]
fn shipped_configs_load() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["desk", "full", "smoke"] {
        let cfg = ExperimentConfig::load(&root.join(format!("{name}.toml"))).unwrap();
        let mut preset = ExperimentConfig::preset(name).unwrap();
        preset.output_dir = cfg.output_dir.clone();
        assert_eq!(cfg, preset, "{name}");
    }
}

//! Dataset generation: corpus, scenes, rendering, mixing, WAVs, manifests.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use super::config::ExperimentConfig;
use super::layout::{log_event, Layout};
use super::manifest::{write_jsonl, ClipRecord, ClipSplit, CLIP_SCHEMA, CORPUS_SCHEMA};
use crate::acoustics::{mix_at_snr, render, sample_scene, snr_of, Scene, SceneConfig, SignalEnergy, Stereo, PEAK_LEVEL};
use crate::dsp::{write_wav, SampleFormat, Waveform};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng::{derive_indexed, derive_seed, rng_for, rng_indexed};
use crate::speakers::{build_corpus, pick_reference, Corpus, Split, Utterance};

/// A clip's components as they appear in the normalized mixture.
#[derive(Clone, Debug)]
pub struct RenderedClip {
    pub mixture: Stereo,
    pub target: Stereo,
    pub interferer: Option<Stereo>,
    pub alpha: f64,
    pub gain: f64,
    pub measured_snr_db: Option<f64>,
}

fn sum_stereo(parts: &[Stereo], len: usize) -> Stereo {
    let mut out = parts[0].padded(len);
    for p in &parts[1..] {
        let p = p.padded(len);
        for (o, c) in out.channels.iter_mut().zip(&p.channels) {
            o.iter_mut().zip(c).for_each(|(a, b)| *a += b);
        }
    }
    out
}

/// Renders sources through the scene and mixes at `snr_db`. Interferers are
/// trimmed or zero-padded to the target length.
pub fn render_clip(
    scene: &Scene,
    target: &Waveform,
    interferers: &[Waveform],
    noise_snr_db: Option<f64>,
) -> Result<RenderedClip> {
    let fs = target.sample_rate;
    let len = target.len();
    let pairs = scene.rir_pairs(fs)?;
    if pairs.len() != interferers.len() + 1 {
        return Err(Error::InvalidArgument(format!(
            "scene has {} interferers, got {} signals",
            pairs.len() - 1,
            interferers.len()
        )));
    }
    let t = render(target, &pairs[0])?;
    let rendered: Vec<Stereo> = interferers
        .iter()
        .zip(&pairs[1..])
        .map(|(w, p)| {
            let mut w = w.clone();
            w.samples.resize(len, 0.0);
            render(&w, p)
        })
        .collect::<Result<_>>()?;
    let interf = (!rendered.is_empty()).then(|| sum_stereo(&rendered, len));
    let mix = mix_at_snr(&t, interf.as_ref(), scene.snr_db)?;
    let scaled_i = interf.as_ref().map(|i| i.scaled(mix.alpha));
    let measured = scaled_i.as_ref().map(|i| snr_of(&t, i)).transpose()?;

    let (mixture, gain) = match noise_snr_db {
        None => (mix.mixture, mix.gain),
        Some(nsnr) => {
            let mut rng = rng_for(scene.seed, "white-noise");
            let mut noise = Stereo {
                channels: [0, 1].map(|_| (0..len).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()),
                sample_rate: fs,
            };
            let k = (t.energy() / (noise.energy() * 10f64.powf(nsnr / 10.0))).sqrt();
            noise = noise.scaled(k);
            let mut pre = t.clone();
            for parts in [scaled_i.as_ref(), Some(&noise)].into_iter().flatten() {
                for (o, c) in pre.channels.iter_mut().zip(&parts.channels) {
                    o.iter_mut().zip(c).for_each(|(a, b)| *a += b);
                }
            }
            let gain = PEAK_LEVEL / pre.peak();
            (pre.scaled(gain), gain)
        }
    };
    Ok(RenderedClip {
        mixture,
        target: t.scaled(gain),
        interferer: scaled_i.map(|i| i.scaled(gain)),
        alpha: mix.alpha,
        gain,
        measured_snr_db: measured,
    })
}

/// Everything needed to render one clip.
#[derive(Clone, Debug)]
struct ClipPlan {
    record: ClipRecord,
    write_components: bool,
}

fn pick_interferers<'a>(
    pool: &[&'a Utterance],
    target: &Utterance,
    k: usize,
    rng: &mut impl Rng,
) -> Result<Vec<&'a Utterance>> {
    let others: Vec<&Utterance> = pool.iter().copied().filter(|u| u.speaker_id != target.speaker_id).collect();
    if others.len() < k {
        return Err(Error::Infeasible("not enough interfering utterances".into()));
    }
    let mut chosen: Vec<&Utterance> = Vec::with_capacity(k);
    while chosen.len() < k {
        let c = others[rng.random_range(0..others.len())];
        if chosen.iter().all(|u| u.speaker_id != c.speaker_id) || others.iter().all(|u| u.speaker_id == c.speaker_id) {
            chosen.push(c);
        }
    }
    Ok(chosen)
}

#[allow(clippy::too_many_arguments)]
fn plan(
    corpus: &Corpus,
    split: ClipSplit,
    index: usize,
    scene_cfg: &SceneConfig,
    scene_seed: u64,
    snr: Option<f64>,
    target: &Utterance,
    pool: &[&Utterance],
    rng: &mut impl Rng,
) -> Result<ClipRecord> {
    let scene = sample_scene(scene_cfg, scene_seed, snr.unwrap_or(0.0))?;
    let interferers = pick_interferers(pool, target, scene.interferers.len(), rng)?;
    let reference = pick_reference(corpus, target, rng)?;
    let clip_id = match (split, snr) {
        (ClipSplit::Test, Some(s)) => format!("test_{index:04}_snr{s:+03}"),
        _ => format!("{}_{index:04}", split.name()),
    };
    let dir = format!("clips/{}", if split == ClipSplit::Val { "train" } else { split.name() });
    Ok(ClipRecord {
        mixture_wav: format!("{dir}/{clip_id}_mix.wav"),
        target_wav: None,
        interferer_wav: None,
        reference_wav: reference.wav_path(),
        clip_id,
        split,
        scene_index: index,
        snr_db: snr,
        measured_snr_db: None,
        seed: scene_seed,
        theta_t: scene.target_doa(),
        interferer_doas: scene.interferer_doas(),
        target_speaker: target.speaker_id,
        target_utterance: target.utterance_id.clone(),
        interferer_speakers: interferers.iter().map(|u| u.speaker_id).collect(),
        interferer_utterances: interferers.iter().map(|u| u.utterance_id.clone()).collect(),
        reference_utterance: reference.utterance_id.clone(),
        alpha: 0.0,
        gain: 0.0,
        scene,
    })
}

/// All clip records of a run, before rendering.
fn plan_clips(cfg: &ExperimentConfig, corpus: &Corpus, seed: u64) -> Result<Vec<ClipPlan>> {
    let train_pool: Vec<&Utterance> = corpus.utterances.iter().filter(|u| u.split == Split::Train).collect();
    let test_pool: Vec<&Utterance> = corpus.utterances.iter().filter(|u| u.split == Split::Test).collect();
    let d = &cfg.dataset;
    let grid = &cfg.snr_grid_db;
    let mut plans = Vec::new();

    let mut order = train_pool.clone();
    order.shuffle(&mut rng_for(seed, "train-order"));
    for i in 0..d.train_clips {
        let split = if i >= d.train_clips - d.val_clips { ClipSplit::Val } else { ClipSplit::Train };
        let mut rng = rng_indexed(seed, "train-picks", i as u64);
        let target = order[i % order.len()];
        let snr = grid[i % grid.len()];
        let scene_seed = derive_indexed(seed, "train-scene", i as u64);
        let record = plan(corpus, split, i, &cfg.scenes, scene_seed, Some(snr), target, &train_pool, &mut rng)?;
        plans.push(ClipPlan {
            record,
            write_components: true,
        });
    }

    let mut order = test_pool.clone();
    order.shuffle(&mut rng_for(seed, "test-order"));
    for j in 0..d.test_clips {
        let target = order[j];
        let scene_seed = derive_indexed(seed, "test-scene", j as u64);
        for &snr in grid {
            // Same picks for every SNR of a scene: the variants are paired.
            let mut rng = rng_indexed(seed, "test-picks", j as u64);
            let record = plan(corpus, ClipSplit::Test, j, &cfg.scenes, scene_seed, Some(snr), target, &test_pool, &mut rng)?;
            plans.push(ClipPlan {
                record,
                write_components: false,
            });
        }
    }

    let audit_cfg = SceneConfig {
        n_interferers: 0,
        ..SceneConfig::anechoic_far_field(cfg.scenes.mic_spacing)
    };
    for k in 0..d.audit_clips {
        let mut rng = rng_indexed(seed, "audit-picks", k as u64);
        let target = order[k % order.len()];
        let scene_seed = derive_indexed(seed, "audit-scene", k as u64);
        let record = plan(corpus, ClipSplit::Audit, k, &audit_cfg, scene_seed, None, target, &test_pool, &mut rng)?;
        plans.push(ClipPlan {
            record,
            write_components: false,
        });
    }
    Ok(plans)
}

fn write_stereo(layout: &Layout, rel: &str, x: &Stereo) -> Result<()> {
    let path = layout.resolve_data(rel);
    write_wav(&path, &[&x.channels[0], &x.channels[1]], x.sample_rate, SampleFormat::Float32)
}

#[derive(Clone, Debug)]
pub struct SimulateSummary {
    pub utterances: usize,
    pub clips: BTreeMap<ClipSplit, usize>,
    /// Largest |requested − measured| SNR over all mixed clips.
    pub max_snr_error_db: f64,
}

/// Generates the dataset under `layout`; re-running overwrites identically.
pub fn simulate(cfg: &ExperimentConfig, layout: &Layout, exec: Exec) -> Result<SimulateSummary> {
    cfg.validate()?;
    let seed = cfg.seed;
    let hash = cfg.data_hash();
    let fs = cfg.sample_rate;
    let corpus = build_corpus(&cfg.corpus, derive_seed(seed, "corpus"))?;
    let data = layout.data_dir();
    for sub in ["utterances", "clips/train", "clips/test", "clips/audit"] {
        layout.ensure(&data.join(sub))?;
    }
    log_event(layout, &format!("simulate: synthesizing {} utterances", corpus.utterances.len()));
    let dry: Vec<Waveform> = exec.try_map(&corpus.utterances, |u| {
        let w = corpus.synth(u, fs)?;
        write_wav(&layout.resolve_data(&u.wav_path()), &[&w.samples], fs, SampleFormat::Float32)?;
        Ok(w)
    })?;
    write_jsonl(&layout.corpus_manifest(), CORPUS_SCHEMA, &hash, &corpus_rows(&corpus))?;
    let by_id: BTreeMap<&str, &Waveform> = corpus
        .utterances
        .iter()
        .map(|u| u.utterance_id.as_str())
        .zip(&dry)
        .collect();
    let dry_of = |id: &str| -> &Waveform { by_id[id] };

    let plans = plan_clips(cfg, &corpus, seed)?;
    log_event(layout, &format!("simulate: rendering {} clips", plans.len()));
    let noise = cfg.dataset.noise_snr_db;
    let records: Vec<ClipRecord> = exec.try_map(&plans, |p| {
        let mut r = p.record.clone();
        let interf: Vec<Waveform> = r.interferer_utterances.iter().map(|id| dry_of(id).clone()).collect();
        let clip = render_clip(&r.scene, dry_of(&r.target_utterance), &interf, noise)?;
        write_stereo(layout, &r.mixture_wav, &clip.mixture)?;
        if p.write_components {
            let t_rel = r.mixture_wav.replace("_mix.wav", "_target.wav");
            write_stereo(layout, &t_rel, &clip.target)?;
            r.target_wav = Some(t_rel);
            if let Some(i) = &clip.interferer {
                let i_rel = r.mixture_wav.replace("_mix.wav", "_interf.wav");
                write_stereo(layout, &i_rel, i)?;
                r.interferer_wav = Some(i_rel);
            }
        }
        r.alpha = clip.alpha;
        r.gain = clip.gain;
        r.measured_snr_db = clip.measured_snr_db;
        Ok(r)
    })?;

    let mut summary = SimulateSummary {
        utterances: corpus.utterances.len(),
        clips: BTreeMap::new(),
        max_snr_error_db: 0.0,
    };
    for r in &records {
        *summary.clips.entry(r.split).or_default() += 1;
        if let (Some(a), Some(b)) = (r.snr_db, r.measured_snr_db) {
            summary.max_snr_error_db = summary.max_snr_error_db.max((a - b).abs());
        }
    }
    for split in [ClipSplit::Train, ClipSplit::Test, ClipSplit::Audit] {
        let rows: Vec<&ClipRecord> = records
            .iter()
            .filter(|r| layout.clip_manifest(r.split) == layout.clip_manifest(split))
            .collect();
        write_jsonl(&layout.clip_manifest(split), CLIP_SCHEMA, &hash, &rows)?;
    }
    log_event(
        layout,
        &format!("simulate: done, max SNR error {:.3e} dB", summary.max_snr_error_db),
    );
    Ok(summary)
}

/// Corpus manifest row.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CorpusRow {
    pub speaker_id: u32,
    pub utterance_id: String,
    pub seed: u64,
    pub duration_s: f64,
    pub split: Split,
    pub wav: String,
    pub speaker: crate::speakers::SpeakerModel,
}

fn corpus_rows(c: &Corpus) -> Vec<CorpusRow> {
    c.utterances
        .iter()
        .map(|u| CorpusRow {
            speaker_id: u.speaker_id,
            utterance_id: u.utterance_id.clone(),
            seed: u.seed,
            duration_s: u.duration_s,
            split: u.split,
            wav: u.wav_path(),
            speaker: c.speaker(u.speaker_id).expect("corpus speaker").clone(),
        })
        .collect()
}

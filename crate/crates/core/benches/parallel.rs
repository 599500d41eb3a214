//! Sequential vs data-parallel execution of per-clip work: rendering a
//! two-source scene and computing the DoA network features.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use locselect::acoustics::{sample_scene, SceneConfig};
use locselect::doanet::{clip_features, stereo_spectra, PhaseMode};
use locselect::exec::Exec;
use locselect::pipeline::simulate::render_clip;
use locselect::speakers::{build_corpus, CorpusConfig};

const CLIPS: usize = 8;

fn bench(c: &mut Criterion) {
    let corpus = build_corpus(
        &CorpusConfig {
            n_speakers: 4,
            clips_per_speaker: 4,
            test_clips_per_speaker: 2,
            clip_duration_s: 1.0,
            ..CorpusConfig::default()
        },
        11,
    )
    .unwrap();
    let dry: Vec<_> = corpus.utterances.iter().map(|u| corpus.synth(u, 16_000).unwrap()).collect();
    let cfg = SceneConfig::default();
    let jobs: Vec<_> = (0..CLIPS)
        .map(|i| {
            let scene = sample_scene(&cfg, i as u64, 0.0).unwrap();
            (scene, dry[i % dry.len()].clone(), dry[(i + 5) % dry.len()].clone())
        })
        .collect();
    let work = |(scene, t, n): &(_, _, _)| {
        let clip = render_clip(scene, t, std::slice::from_ref(n), None).unwrap();
        let spec = stereo_spectra(&clip.mixture).unwrap();
        clip_features(&spec, None, PhaseMode::IpdCosSin).unwrap().values.len()
    };

    let mut g = c.benchmark_group("render_and_features");
    g.sample_size(10);
    for (name, exec) in [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)] {
        g.bench_function(name, |b| {
            b.iter_batched(|| &jobs, |jobs| exec.map(jobs, work), BatchSize::SmallInput)
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);

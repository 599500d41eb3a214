//! Full-network gradient oracles and shape/range contracts.

use locselect::coding::DoaClass;
use locselect::doanet::{self, init_doanet, DoaExample, DoaNetConfig, FrameFeatures, PhaseMode};
use locselect::dsp::TfGrid;
use locselect::masknet::{self, init_masknet, MaskExample, MaskNetConfig};
use locselect::numerics::{gradient_check, Mode, Tensor};
use locselect::rng::rng_for;
use proptest::prelude::*;
use rand::Rng;

fn random(seed: u64, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let mut rng = rng_for(seed, "net-input");
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect()).unwrap()
}

fn tiny_mask() -> MaskNetConfig {
    MaskNetConfig {
        n_freq: 6,
        enc_hidden: 5,
        embed_dim: 4,
        fc: 5,
        gru_hidden: 3,
    }
}

fn tiny_doa() -> DoaNetConfig {
    DoaNetConfig {
        n_freq: 4,
        fc1: 7,
        fc2: 6,
        gru_hidden: 3,
        phase_mode: PhaseMode::IpdCosSin,
    }
}

#[test]
fn masknet_gradient_matches_finite_differences() {
    let cfg = tiny_mask();
    let mut store = init_masknet(&cfg, 11).unwrap();
    let mix = random(1, 2 * 5, 6, 0.0, 2.0);
    let refs = random(2, 2 * 4, 6, 0.0, 2.0);
    let proj = random(3, 2 * 5, 6, -1.0, 1.0);
    let report = gradient_check(&mut store, 1e-4, 40, |g, s| {
        let m = masknet::masknet_graph(g, s, &mix, &refs, 2)?;
        g.weighted_sum(m, &proj)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
    assert!(report.checked > 100);
}

#[test]
fn masknet_mse_gradient_matches_finite_differences() {
    let cfg = tiny_mask();
    let mut store = init_masknet(&cfg, 12).unwrap();
    let ex = MaskExample {
        mix: random(4, 5, 6, 0.0, 2.0),
        reference: random(5, 3, 6, 0.0, 2.0),
        irm: random(6, 5, 6, 0.0, 1.0),
    };
    let report = gradient_check(&mut store, 3e-4, 40, |g, s| Ok(masknet::batch_loss(g, s, &[&ex])?.0)).unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn doanet_gradient_matches_finite_differences() {
    let cfg = tiny_doa();
    let mut store = init_doanet(&cfg, 13).unwrap();
    let x = random(7, 2 * 5, 12, -1.0, 1.0);
    let proj = random(8, 2 * 5, 360, -1.0, 1.0);
    for mode in [Mode::Train, Mode::Eval] {
        let report = gradient_check(&mut store, 1e-4, 40, |g, s| {
            let xv = g.input(x.clone());
            let l = doanet::logits_graph(g, s, xv, 2, 5, mode)?;
            let p = g.sigmoid(l);
            g.weighted_sum(p, &proj)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{mode:?}: {report:?}");
    }
}

#[test]
fn doanet_loss_gradient_matches_finite_differences() {
    let cfg = tiny_doa();
    let mut store = init_doanet(&cfg, 14).unwrap();
    let exs: Vec<DoaExample> = (0..2)
        .map(|k| DoaExample {
            input: random(20 + k, 5, 12, -1.0, 1.0),
            doa: DoaClass::new(40 + 50 * k as u16).unwrap(),
            sigma: 8.0,
        })
        .collect();
    let refs: Vec<&DoaExample> = exs.iter().collect();
    let report = gradient_check(&mut store, 3e-4, 40, |g, s| doanet::batch_loss(g, s, &refs, Mode::Train)).unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn embedding_is_unit_norm_and_scale_sensitive() {
    let store = init_masknet(&tiny_mask(), 3).unwrap();
    let r = TfGrid::from_frames(&random(9, 7, 6, 0.0, 3.0));
    let e = masknet::embed_reference(&store, &r).unwrap();
    let norm: f64 = e.0.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-9);
    let e2 = masknet::embed_reference(&store, &r.map(|v| 2.0 * v)).unwrap();
    assert_ne!(e, e2);
    let z = masknet::embed_reference(&store, &TfGrid::filled(6, 3, 0.0)).unwrap();
    assert!(z.0.iter().all(|v| v.is_finite()));
    assert!(masknet::embed_reference(&store, &TfGrid::filled(6, 0, 0.0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn mask_in_unit_interval_and_never_amplifies(seed in any::<u64>(), t in 1usize..6) {
        let store = init_masknet(&tiny_mask(), seed).unwrap();
        let x = TfGrid::from_frames(&random(seed, t, 6, 0.0, 5.0));
        let e = masknet::embed_reference(&store, &x).unwrap();
        let m = masknet::predict_mask(&store, &x, &e).unwrap();
        prop_assert!(m.values().iter().all(|v| (0.0..=1.0).contains(v)));
        let xm = masknet::apply_mask(&x, &m).unwrap();
        prop_assert!(xm.values().iter().zip(x.values()).all(|(a, b)| a <= b));
    }

    #[test]
    fn posterior_shape_and_range(seed in any::<u64>(), t in 1usize..8) {
        let mut store = init_doanet(&tiny_doa(), seed).unwrap();
        let f = FrameFeatures { values: random(seed, t, 12, -1.0, 1.0), n_freq: 4, mode: PhaseMode::IpdCosSin };
        let out = doanet::doanet_forward(&f, &mut store, Mode::Eval).unwrap();
        prop_assert_eq!(out.posterior.tensor().shape(), &[t, 360]);
        prop_assert!(out.posterior.tensor().data().iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn ipd_features_lie_on_unit_circle(seed in any::<u64>()) {
        let p1 = TfGrid::from_frames(&random(seed, 3, 5, -3.14, 3.14));
        let p2 = TfGrid::from_frames(&random(seed ^ 1, 3, 5, -3.14, 3.14));
        let m = TfGrid::filled(5, 3, 1.0);
        let f = doanet::assemble_features(&m, &p1, &p2, PhaseMode::IpdCosSin).unwrap();
        for t in 0..3 {
            let row = f.values.row(t);
            for k in 0..5 {
                prop_assert!((row[5 + k].powi(2) + row[10 + k].powi(2) - 1.0).abs() < 1e-9);
            }
        }
    }
}

//! Finite-difference checks for every layer, determinism, and bounds.

use locselect::numerics::layers::{
    batchnorm_forward, bigru_forward, dense, gru_cell, gru_sequence, init_batchnorm, init_dense, init_gru, mse_loss,
};
use locselect::numerics::{gradient_check, Graph, GruVars, Mode, ParamStore, Tensor};
use locselect::rng::rng_for;
use proptest::prelude::*;
use rand::Rng;

const H: f64 = 1e-5;

fn random_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale).collect()).unwrap()
}

/// Random projection so the loss depends on every output with O(1) weight.
fn projection(seed: u64, shape: &[usize]) -> Tensor {
    random_tensor(&mut rng_for(seed, "projection"), shape, 1.0)
}

#[test]
fn dense_gradient_of_sum_matches_finite_differences() {
    let mut rng = rng_for(1, "dense");
    let mut store = ParamStore::new(1);
    init_dense(&mut store, &mut rng, "fc", 5, 4);
    store.insert("x", random_tensor(&mut rng, &[3, 5], 1.0));
    let ones = Tensor::full(&[3, 4], 1.0);
    let report = gradient_check(&mut store, H, 64, |g, s| {
        let x = g.param(s, "x")?;
        let y = dense(g, s, "fc", x)?;
        g.weighted_sum(y, &ones)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

#[test]
fn activations_gradient() {
    let mut rng = rng_for(2, "act");
    let mut store = ParamStore::new(2);
    store.insert("x", random_tensor(&mut rng, &[4, 6], 2.0));
    let w = projection(2, &[4, 6]);
    let report = gradient_check(&mut store, H, 64, |g, s| {
        let x = g.param(s, "x")?;
        let a = g.sigmoid(x);
        let b = g.tanh(a);
        let c = g.relu(x);
        let d = g.add(b, c)?;
        g.weighted_sum(d, &w)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn batchnorm_gradient_train_and_eval() {
    let mut rng = rng_for(3, "bn");
    let mut store = ParamStore::new(3);
    init_batchnorm(&mut store, "bn", 4);
    store.value_mut("bn.gamma").unwrap().data_mut().copy_from_slice(&[0.5, 1.5, -0.7, 1.1]);
    store.insert("x", random_tensor(&mut rng, &[6, 4], 1.0));
    let w = projection(3, &[6, 4]);
    for mode in [Mode::Train, Mode::Eval] {
        let report = gradient_check(&mut store, H, 64, |g, s| {
            let x = g.param(s, "x")?;
            let y = batchnorm_forward(g, s, "bn", x, mode)?;
            g.weighted_sum(y, &w)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{mode:?}: {report:?}");
    }
}

#[test]
fn gru_cell_gradient_all_weight_blocks() {
    let mut rng = rng_for(4, "gru");
    let mut store = ParamStore::new(4);
    init_gru(&mut store, &mut rng, "gru", 5, 3);
    store.insert("x", random_tensor(&mut rng, &[2, 5], 1.0));
    store.insert("h", random_tensor(&mut rng, &[2, 3], 0.8));
    let w = projection(4, &[2, 3]);
    let report = gradient_check(&mut store, H, 128, |g, s| {
        let p = GruVars::bind(g, s, "gru")?;
        let x = g.param(s, "x")?;
        let h = g.param(s, "h")?;
        let h1 = gru_cell(g, &p, x, h)?;
        g.weighted_sum(h1, &w)
    })
    .unwrap();
    // every entry of both stacked matrices is checked, covering W_r, W_z,
    // W_n, U_r, U_z, U_n
    assert_eq!(report.per_param.len(), 6);
    assert!(report.max_rel_error < 1e-5, "{report:?}");
}

#[test]
fn bigru_three_frame_gradient() {
    let mut rng = rng_for(5, "bigru");
    let mut store = ParamStore::new(5);
    init_gru(&mut store, &mut rng, "f", 4, 3);
    init_gru(&mut store, &mut rng, "b", 4, 3);
    store.insert("x", random_tensor(&mut rng, &[2 * 3, 4], 1.0));
    let w = projection(5, &[6, 6]);
    let report = gradient_check(&mut store, H, 128, |g, s| {
        let f = GruVars::bind(g, s, "f")?;
        let b = GruVars::bind(g, s, "b")?;
        let x = g.param(s, "x")?;
        let y = bigru_forward(g, &f, &b, x, 2, 3)?;
        g.weighted_sum(y, &w)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-5, "{report:?}");
}

#[test]
fn bigru_reversal_symmetry() {
    let mut rng = rng_for(6, "sym");
    let mut store = ParamStore::new(6);
    init_gru(&mut store, &mut rng, "gru", 3, 4);
    let t = 5;
    let x = random_tensor(&mut rng, &[t, 3], 1.0);
    let rev_rows: Vec<Vec<f64>> = (0..t).rev().map(|r| x.row(r).to_vec()).collect();
    let xr = Tensor::from_rows(&rev_rows).unwrap();
    let mut g = Graph::new();
    let p = GruVars::bind(&mut g, &store, "gru").unwrap();
    let a = g.input(x);
    let b = g.input(xr);
    let ya = bigru_forward(&mut g, &p, &p, a, 1, t).unwrap();
    let yb = bigru_forward(&mut g, &p, &p, b, 1, t).unwrap();
    let (ya, yb) = (g.value(ya).clone(), g.value(yb).clone());
    for r in 0..t {
        let (fa, ba) = ya.row(r).split_at(4);
        let (fb, bb) = yb.row(t - 1 - r).split_at(4);
        assert_eq!(fa, bb);
        assert_eq!(ba, fb);
    }
}

#[test]
fn mse_gradient_is_twice_residual() {
    let mut rng = rng_for(7, "mse");
    let pred = random_tensor(&mut rng, &[2, 360], 1.0);
    let target = random_tensor(&mut rng, &[2, 360], 1.0);
    let mut g = Graph::new();
    let p = g.watched(pred.clone());
    let l = mse_loss(&mut g, p, &target).unwrap();
    g.backward(l).unwrap();
    for ((gv, a), b) in g.grad(p).unwrap().data().iter().zip(pred.data()).zip(target.data()) {
        assert_eq!(*gv, 2.0 * (a - b));
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let run = || {
        let mut rng = rng_for(8, "det");
        let mut store = ParamStore::new(8);
        init_dense(&mut store, &mut rng, "fc", 6, 5);
        init_gru(&mut store, &mut rng, "gru", 5, 4);
        let x = random_tensor(&mut rng, &[2 * 7, 6], 1.0);
        let mut g = Graph::new();
        let xv = g.input(x);
        let y = dense(&mut g, &store, "fc", xv).unwrap();
        let p = GruVars::bind(&mut g, &store, "gru").unwrap();
        let h = gru_sequence(&mut g, &p, y, 2, 7, false).unwrap();
        g.value(h).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn activation_ranges(vals in prop::collection::vec(-50.0f64..50.0, 1..64)) {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vals));
        let s = g.sigmoid(x);
        let r = g.relu(x);
        prop_assert!(g.value(s).data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(g.value(r).data().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn gru_state_stays_bounded(seed in any::<u64>(), h0 in prop::collection::vec(-1.0f64..=1.0, 4)) {
        let mut rng = rng_for(seed, "bound");
        let mut store = ParamStore::new(seed);
        init_gru(&mut store, &mut rng, "gru", 3, 4);
        let mut g = Graph::new();
        let p = GruVars::bind(&mut g, &store, "gru").unwrap();
        let mut h = g.input(Tensor::matrix(1, 4, h0).unwrap());
        for _ in 0..10 {
            let x = g.input(random_tensor(&mut rng, &[1, 3], 3.0));
            h = gru_cell(&mut g, &p, x, h).unwrap();
            prop_assert!(g.value(h).data().iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn layer_gradients_on_random_instances(seed in any::<u64>(), n in 2usize..6, d in 1usize..6, o in 1usize..5) {
        let mut rng = rng_for(seed, "layers");
        let mut store = ParamStore::new(seed);
        init_dense(&mut store, &mut rng, "fc", d, o);
        init_batchnorm(&mut store, "bn", o);
        store.insert("x", random_tensor(&mut rng, &[n, d], 1.0));
        let w = random_tensor(&mut rng, &[n, o], 1.0);
        let r = gradient_check(&mut store, H, 32, |g, s| {
            let x = g.param(s, "x")?;
            let y = dense(g, s, "fc", x)?;
            let y = g.tanh(y);
            let y = batchnorm_forward(g, s, "bn", y, Mode::Train)?;
            g.weighted_sum(y, &w)
        }).unwrap();
        prop_assert!(r.max_rel_error < 1e-4, "{:?}", r);
    }
}

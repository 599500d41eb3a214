use std::f64::consts::PI;

use locselect::acoustics::{
    doa_from_geometry, image_count, image_sources, mix_at_snr, render, sample_scene, simulate_rir, snr_of,
    ArrayGeometry, Room, SceneConfig, SignalEnergy, Stereo, DOA_RANGE_DEG, SPEED_OF_SOUND,
};
use locselect::dsp::Waveform;
use locselect::rng::rng_for;
use rand::Rng;

const FS: u32 = 16_000;

fn room(order: u32, beta: f64) -> Room {
    Room {
        dims: [6.0, 5.0, 3.0],
        beta,
        max_order: order,
        speed_of_sound: SPEED_OF_SOUND,
    }
}

fn argmax(x: &[f64]) -> usize {
    x.iter()
        .enumerate()
        .fold((0, f64::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
        .0
}

fn noise(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = rng_for(seed, "test-noise");
    (0..n).map(|_| rng.random::<f64>() - 0.5).collect()
}

/// Hann-windowed sinc tap placed independently of the library.
fn add_tap(h: &mut [f64], delay: f64, amp: f64) {
    let c = delay.floor() as i64;
    for n in (c - 40).max(0)..=c + 40 {
        let x = n as f64 - delay;
        let s = if x.abs() < 1e-12 { 1.0 } else { (PI * x).sin() / (PI * x) };
        h[n as usize] += amp * 0.5 * (1.0 + (PI * x / 41.0).cos()) * s;
    }
}

#[test]
fn direct_path_amplitude_and_delay() {
    let r = room(0, 0.0);
    let mic = [3.0, 2.5, 1.5];
    let h1 = simulate_rir(&r, &[2.0, 2.5, 1.5], &mic, FS).unwrap();
    let h2 = simulate_rir(&r, &[1.0, 2.5, 1.5], &mic, FS).unwrap();
    let d1 = f64::from(FS) / 343.0;
    let p1 = argmax(&h1);
    assert!((p1 as f64 - d1).abs() <= 1.0);
    let peak1 = h1[p1];
    assert!((peak1 - 1.0 / (4.0 * PI)).abs() < 0.02 / (4.0 * PI) + 0.02);
    let p2 = argmax(&h2);
    assert!((p2 as f64 - 2.0 * d1).abs() <= 1.0);
    // Same fractional offset at both distances would be exact; allow sinc ripple.
    let ratio = h2[p2] / peak1;
    assert!((ratio - 0.5).abs() < 0.05, "amplitude ratio {ratio}");
}

#[test]
fn first_order_matches_hand_enumeration() {
    let r = room(1, 0.7);
    let src = [1.3, 3.1, 1.1];
    let mic = [4.2, 1.7, 1.9];
    let images = image_sources(&r, &src);
    assert_eq!(images.len(), 7);
    assert_eq!(image_count(1), 7);

    let mut hand = vec![src];
    for a in 0..3 {
        for wall in [0.0, r.dims[a]] {
            let mut p = src;
            p[a] = 2.0 * wall - src[a];
            hand.push(p);
        }
    }
    let mut h = vec![0.0; simulate_rir(&r, &src, &mic, FS).unwrap().len()];
    for (i, p) in hand.iter().enumerate() {
        let dist = ((p[0] - mic[0]).powi(2) + (p[1] - mic[1]).powi(2) + (p[2] - mic[2]).powi(2)).sqrt();
        let gain = if i == 0 { 1.0 } else { 0.7 };
        add_tap(&mut h, dist / 343.0 * f64::from(FS), gain / (4.0 * PI * dist));
        assert!(
            images.iter().any(|img| (0..3).all(|k| (img.position[k] - p[k]).abs() < 1e-12)),
            "image {p:?} missing"
        );
    }
    let lib = simulate_rir(&r, &src, &mic, FS).unwrap();
    let err = lib.iter().zip(&h).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-12, "max deviation {err}");
}

#[test]
fn image_counts_follow_closed_form() {
    let src = [1.0, 1.5, 1.2];
    for n in 0..=6 {
        let expected = (2 * n + 1) * (2 * n * n + 2 * n + 3) / 3;
        assert_eq!(image_sources(&room(n as u32, 0.5), &src).len(), expected);
    }
}

#[test]
fn rir_rejects_bad_inputs() {
    let r = room(1, 0.5);
    assert!(simulate_rir(&r, &[7.0, 1.0, 1.0], &[1.0, 1.0, 1.0], FS).is_err());
    assert!(simulate_rir(&r, &[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0], FS).is_err());
    assert!(simulate_rir(&room(7, 0.5), &[2.0, 1.0, 1.0], &[1.0, 1.0, 1.0], FS).is_err());
}

#[test]
fn geometry_examples() {
    let a = ArrayGeometry {
        mics: [[1.0, 1.0, 1.2], [1.2, 1.0, 1.2]],
    };
    assert!((doa_from_geometry(&a, &[1.1, 3.0, 1.5]).unwrap() - 90.0).abs() < 1e-9);
    assert!(doa_from_geometry(&a, &[3.0, 1.0, 1.2]).unwrap() < 1e-9);
    assert!((doa_from_geometry(&a, &[0.2, 1.0, 1.7]).unwrap() - 180.0).abs() < 1e-9);
    assert!(doa_from_geometry(&a, &[1.1, 1.0, 2.0]).is_err());
}

#[test]
fn render_identity_and_delay() {
    let x = Waveform::new(noise(1, 300), FS);
    let mut unit = vec![0.0; 16];
    unit[0] = 1.0;
    let mut delayed = vec![0.0; 16];
    delayed[10] = 0.5;
    let y = render(&x, &[unit, delayed]).unwrap();
    assert_eq!(y.len(), 300);
    for n in 0..300 {
        assert!((y.channels[0][n] - x.samples[n]).abs() < 1e-15);
        let want = if n >= 10 { 0.5 * x.samples[n - 10] } else { 0.0 };
        assert!((y.channels[1][n] - want).abs() < 1e-15);
    }
    assert!(render(&Waveform::new(vec![], FS), &[vec![1.0], vec![1.0]]).is_err());
}

fn xcorr_lag(a: &[f64], b: &[f64], max_lag: i64) -> i64 {
    (-max_lag..=max_lag)
        .map(|lag| {
            let s: f64 = (0..a.len() as i64)
                .filter(|&n| n + lag >= 0 && n + lag < b.len() as i64)
                .map(|n| a[n as usize] * b[(n + lag) as usize])
                .sum();
            (lag, s)
        })
        .fold((0, f64::MIN), |best, c| if c.1 > best.1 { c } else { best })
        .0
}

#[test]
fn cross_correlation_recovers_inter_channel_delay() {
    let x = Waveform::new(noise(2, 4000), FS);
    let r = Room {
        dims: [20.0, 20.0, 5.0],
        ..room(0, 0.0)
    };
    let m1 = [10.0, 10.0, 1.5];
    let m2 = [10.2, 10.0, 1.5];
    for (k, src) in [[14.0, 10.0, 1.5], [6.0, 10.0, 1.5], [12.0, 13.0, 1.5]].iter().enumerate() {
        let pair = [simulate_rir(&r, src, &m1, FS).unwrap(), simulate_rir(&r, src, &m2, FS).unwrap()];
        let y = render(&x, &pair).unwrap();
        let dist = |m: &[f64; 3]| (0..3).map(|a| (src[a] - m[a]).powi(2)).sum::<f64>().sqrt();
        let true_delay = (dist(&m1) - dist(&m2)) / 343.0 * f64::from(FS);
        // Channel 2 leads channel 1 by `true_delay` samples.
        let lag = xcorr_lag(&y.channels[1], &y.channels[0], 20);
        assert!((lag as f64 - true_delay).abs() <= 0.5 + 1e-9, "case {k}: lag {lag} vs {true_delay}");
    }
}

#[test]
fn far_field_delay_within_one_sample() {
    let cfg = SceneConfig::anechoic_far_field(0.2);
    for seed in 0..200u64 {
        let scene = sample_scene(&cfg, seed, 0.0).unwrap();
        let d = scene.array.spacing();
        let theta = scene.target_doa().to_radians();
        let expected = d * theta.cos() / SPEED_OF_SOUND * f64::from(FS);
        let [h1, h2] = scene.rir_pair(&scene.target, FS).unwrap();
        let measured = argmax(&h1) as f64 - argmax(&h2) as f64;
        assert!((measured - expected).abs() <= 1.0, "seed {seed}: {measured} vs {expected}");
    }
}

fn stereo(seed: u64, n: usize, gain: f64) -> Stereo {
    Stereo {
        channels: [
            noise(seed, n).iter().map(|v| v * gain).collect(),
            noise(seed + 1000, n).iter().map(|v| v * gain).collect(),
        ],
        sample_rate: FS,
    }
}

#[test]
fn snr_round_trip_and_peak() {
    let t = stereo(3, 1600, 1.0);
    let i = stereo(4, 1200, 0.3);
    for snr in [-10.0, -5.0, 0.0, 5.0, 10.0, 3.7] {
        let m = mix_at_snr(&t, Some(&i), snr).unwrap();
        let got = snr_of(&t.padded(1600), &i.padded(1600).scaled(m.alpha)).unwrap();
        assert!((got - snr).abs() < 1e-9, "{got} vs {snr}");
        assert!((m.mixture.peak() - 0.9).abs() < 1e-15);
        let after = snr_of(&m.target_component(&t), &m.interferer_component(&i)).unwrap();
        assert!((after - snr).abs() < 1e-9);
    }
}

#[test]
fn equal_power_alpha_values() {
    let t = stereo(5, 500, 1.0);
    let scale = (t.energy() / stereo(6, 500, 1.0).energy()).sqrt();
    let i = stereo(6, 500, scale);
    assert!((mix_at_snr(&t, Some(&i), 0.0).unwrap().alpha - 1.0).abs() < 1e-12);
    assert!((mix_at_snr(&t, Some(&i), -10.0).unwrap().alpha - 3.16228).abs() < 1e-5);
}

#[test]
fn sampler_sweeps() {
    let cfg = SceneConfig::default();
    for seed in 0..1000u64 {
        let s = sample_scene(&cfg, seed, 0.0).unwrap();
        let doa = s.target_doa();
        assert!((DOA_RANGE_DEG.0..=DOA_RANGE_DEG.1).contains(&doa), "seed {seed}: {doa}");
        let c = s.array.center();
        for p in std::iter::once(&s.target).chain(&s.interferers) {
            let r = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt();
            assert!(r >= cfg.min_distance);
            assert!(s.room.contains(p));
        }
        for d in s.interferer_doas() {
            assert!((d - doa).abs() >= cfg.min_separation_deg);
        }
    }
}

#[test]
fn sampler_is_deterministic() {
    let cfg = SceneConfig::default();
    assert_eq!(sample_scene(&cfg, 42, 5.0).unwrap(), sample_scene(&cfg, 42, 5.0).unwrap());
    assert_ne!(sample_scene(&cfg, 42, 5.0).unwrap(), sample_scene(&cfg, 43, 5.0).unwrap());
}

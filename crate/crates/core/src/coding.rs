//! Gaussian-like DoA posterior coding, argmax decoding, and the MAE/ACC
//! metrics. Classes are integer degrees `1..=360`; column `j` of a posterior
//! row holds class `j + 1`. All distances are circular.

use crate::error::{invalid, Error, Result};
use crate::numerics::Tensor;

pub const N_CLASSES: usize = 360;
pub const DEFAULT_SIGMA_DEG: f64 = 8.0;
pub const DEFAULT_RHO_DEG: f64 = 5.0;

/// Integer DoA class in `1..=360`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DoaClass(u16);

impl DoaClass {
    pub fn new(deg: u16) -> Result<Self> {
        if !(1..=360).contains(&deg) {
            invalid!("DoA class {deg} outside 1..=360");
        }
        Ok(Self(deg))
    }

    /// Nearest class to a continuous angle; 0° maps to 360°.
    pub fn from_degrees(deg: f64) -> Self {
        let r = deg.rem_euclid(360.0).round() as u16;
        Self(if r == 0 { 360 } else { r })
    }

    pub fn degrees(self) -> u16 {
        self.0
    }
}

/// Circular distance on the 360° circle.
pub fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// `[T × 360]` posterior rows.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSequence {
    values: Tensor,
}

impl PosteriorSequence {
    pub fn from_tensor(values: Tensor) -> Result<Self> {
        if values.cols() != N_CLASSES || values.shape().len() != 2 {
            return Err(Error::shape("posterior", values.shape(), &[values.rows(), N_CLASSES]));
        }
        Ok(Self { values })
    }

    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.values.row(t)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.values
    }

    pub fn into_tensor(self) -> Tensor {
        self.values
    }

    /// Per-class mean over frames.
    pub fn time_average(&self) -> Vec<f64> {
        let mut avg = vec![0.0; N_CLASSES];
        for t in 0..self.frames() {
            for (a, v) in avg.iter_mut().zip(self.row(t)) {
                *a += v;
            }
        }
        let n = self.frames().max(1) as f64;
        avg.iter_mut().for_each(|a| *a /= n);
        avg
    }
}

/// Per-frame angles.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DoaTrace {
    pub angles: Vec<DoaClass>,
}

impl DoaTrace {
    pub fn constant(theta: DoaClass, frames: usize) -> Self {
        Self {
            angles: vec![theta; frames],
        }
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }
}

/// One coded row: `r[θ] = exp(−dist(θ, θ_t)/σ)`.
pub fn encode_row(theta: DoaClass, sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        invalid!("sigma must be positive, got {sigma}");
    }
    let c = f64::from(theta.degrees());
    Ok((1..=N_CLASSES)
        .map(|j| (-circular_distance(j as f64, c) / sigma).exp())
        .collect())
}

/// Identical coded rows for `frames` frames of a static source.
pub fn encode_posterior(theta: DoaClass, sigma: f64, frames: usize) -> Result<PosteriorSequence> {
    let row = encode_row(theta, sigma)?;
    let data = row.iter().copied().cycle().take(frames * N_CLASSES).collect();
    PosteriorSequence::from_tensor(Tensor::matrix(frames, N_CLASSES, data)?)
}

/// Argmax of one row; ties go to the smallest angle.
pub fn argmax_class(row: &[f64]) -> DoaClass {
    let mut best = 0;
    for (j, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = j;
        }
    }
    DoaClass(best as u16 + 1)
}

pub fn decode_doa(post: &PosteriorSequence) -> DoaTrace {
    DoaTrace {
        angles: (0..post.frames()).map(|t| argmax_class(post.row(t))).collect(),
    }
}

fn check_lengths(est: &DoaTrace, gt: &DoaTrace) -> Result<()> {
    if est.len() != gt.len() {
        invalid!("trace lengths differ: {} vs {}", est.len(), gt.len());
    }
    if est.is_empty() {
        invalid!("empty trace");
    }
    Ok(())
}

fn errors<'a>(est: &'a DoaTrace, gt: &'a DoaTrace) -> impl Iterator<Item = f64> + 'a {
    est.angles
        .iter()
        .zip(&gt.angles)
        .map(|(a, b)| circular_distance(f64::from(a.degrees()), f64::from(b.degrees())))
}

/// Mean absolute circular error in degrees.
pub fn mae(est: &DoaTrace, gt: &DoaTrace) -> Result<f64> {
    check_lengths(est, gt)?;
    Ok(errors(est, gt).sum::<f64>() / est.len() as f64)
}

/// Fraction of frames with error `≤ rho` (inclusive).
pub fn acc(est: &DoaTrace, gt: &DoaTrace, rho: f64) -> Result<f64> {
    check_lengths(est, gt)?;
    let hits = errors(est, gt).filter(|e| *e <= rho).count();
    Ok(hits as f64 / est.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(d: u16) -> DoaClass {
        DoaClass::new(d).unwrap()
    }

    fn trace(v: &[u16]) -> DoaTrace {
        DoaTrace {
            angles: v.iter().map(|&d| c(d)).collect(),
        }
    }

    #[test]
    fn encode_spot_values() {
        let r = encode_row(c(90), 8.0).unwrap();
        assert_eq!(r[89], 1.0);
        assert!((r[97] - (-1.0f64).exp()).abs() < 1e-12);
        let r = encode_row(c(1), 8.0).unwrap();
        assert!((r[359] - (-1.0f64 / 8.0).exp()).abs() < 1e-15);
        assert!(encode_row(c(1), 0.0).is_err());
        assert!(encode_row(c(1), -1.0).is_err());
    }

    #[test]
    fn decode_examples() {
        for d in 1..=360 {
            let p = encode_posterior(c(d), 8.0, 2).unwrap();
            assert_eq!(decode_doa(&p), trace(&[d, d]));
        }
        assert_eq!(argmax_class(&[0.3; 360]), c(1));
        let mut row = encode_row(c(200), 8.0).unwrap();
        row.iter_mut().for_each(|v| *v += 3.0);
        assert_eq!(argmax_class(&row), c(200));
    }

    #[test]
    fn metric_examples() {
        let gt = trace(&[100, 100]);
        assert_eq!(mae(&gt, &gt).unwrap(), 0.0);
        assert_eq!(acc(&gt, &gt, 5.0).unwrap(), 1.0);
        assert_eq!(mae(&trace(&[105, 95]), &gt).unwrap(), 5.0);
        assert_eq!(mae(&trace(&[103, 107]), &gt).unwrap(), 5.0);
        assert_eq!(acc(&trace(&[105, 95]), &gt, 5.0).unwrap(), 1.0);
        assert_eq!(acc(&trace(&[103, 107]), &gt, 5.0).unwrap(), 0.5);
        assert!(mae(&trace(&[1]), &gt).is_err());
        assert!(acc(&trace(&[]), &trace(&[]), 5.0).is_err());
        // wrap-around counts as 2°
        assert_eq!(mae(&trace(&[359]), &trace(&[1])).unwrap(), 2.0);
    }

    proptest! {
        #[test]
        fn encode_symmetric_and_monotone(d in 1u16..=360, k in 0usize..180, sigma in 0.5f64..40.0) {
            let r = encode_row(c(d), sigma).unwrap();
            let col = |off: isize| (d as isize - 1 + off).rem_euclid(360) as usize;
            prop_assert_eq!(r[col(k as isize)], r[col(-(k as isize))]);
            prop_assert!(r[col(k as isize + 1)] <= r[col(k as isize)]);
            prop_assert!(r.iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn decode_invariant_under_monotone_transform(d in 1u16..=360, a in 0.1f64..10.0, b in -5.0f64..5.0) {
            let r = encode_row(c(d), 8.0).unwrap();
            let t: Vec<f64> = r.iter().map(|v| (a * v + b).exp()).collect();
            prop_assert_eq!(argmax_class(&t), argmax_class(&r));
        }

        #[test]
        fn metric_ranges(est in prop::collection::vec(1u16..=360, 1..50), off in 0u16..360) {
            let gt: Vec<u16> = est.iter().map(|d| (d + off - 1) % 360 + 1).collect();
            let m = mae(&trace(&est), &trace(&gt)).unwrap();
            let a = acc(&trace(&est), &trace(&gt), 5.0).unwrap();
            prop_assert!(m >= 0.0 && m <= 180.0);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}

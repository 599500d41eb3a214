use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{distance, simulate_rir, ArrayGeometry, Position, Room, SPEED_OF_SOUND};
use crate::error::{invalid, Error, Result};
use crate::rng::rng_indexed;

/// Accepted target DoA range in degrees.
pub const DOA_RANGE_DEG: (f64, f64) = (10.18, 166.96);
const MAX_REJECTIONS: usize = 1000;

/// Azimuth of `src` relative to the mic1→mic2 axis, in `[0°, 180°]`, with
/// both vectors projected onto the horizontal plane. 0° is beyond mic 2.
pub fn doa_from_geometry(array: &ArrayGeometry, src: &Position) -> Result<f64> {
    let [m1, m2] = &array.mics;
    let c = array.center();
    let u = [m2[0] - m1[0], m2[1] - m1[1]];
    let v = [src[0] - c[0], src[1] - c[1]];
    let (nu, nv) = (u[0].hypot(u[1]), v[0].hypot(v[1]));
    if nu < 1e-12 {
        invalid!("array axis is vertical");
    }
    if nv < 1e-12 {
        invalid!("source lies on the vertical through the array centre");
    }
    let cos = ((u[0] * v[0] + u[1] * v[1]) / (nu * nv)).clamp(-1.0, 1.0);
    Ok(cos.acos().to_degrees())
}

/// Ranges the scene sampler draws from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub room_min: [f64; 3],
    pub room_max: [f64; 3],
    pub beta_min: f64,
    pub beta_max: f64,
    pub max_order: u32,
    pub mic_spacing: f64,
    pub array_height: [f64; 2],
    pub source_height: [f64; 2],
    pub min_distance: f64,
    pub max_distance: f64,
    pub wall_margin: f64,
    pub n_interferers: usize,
    pub min_separation_deg: f64,
    pub speed_of_sound: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            room_min: [5.0, 4.0, 2.6],
            room_max: [8.0, 7.0, 3.4],
            beta_min: 0.2,
            beta_max: 0.5,
            max_order: 2,
            mic_spacing: 0.2,
            array_height: [1.0, 1.6],
            source_height: [1.2, 1.8],
            min_distance: 1.0,
            max_distance: 2.5,
            wall_margin: 0.4,
            n_interferers: 1,
            min_separation_deg: 20.0,
            speed_of_sound: SPEED_OF_SOUND,
        }
    }
}

impl SceneConfig {
    /// Large anechoic rooms with far-field sources (distance ≥ 20·spacing).
    pub fn anechoic_far_field(mic_spacing: f64) -> Self {
        Self {
            room_min: [16.0, 16.0, 4.0],
            room_max: [20.0, 20.0, 5.0],
            beta_min: 0.0,
            beta_max: 0.0,
            max_order: 0,
            mic_spacing,
            min_distance: 20.0 * mic_spacing,
            max_distance: 20.0 * mic_spacing + 2.0,
            n_interferers: 0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if !(self.room_min[a] > 0.0) || self.room_max[a] < self.room_min[a] {
                return Err(Error::Config(format!("bad room range on axis {a}")));
            }
        }
        if !(0.0..1.0).contains(&self.beta_min) || self.beta_max < self.beta_min || self.beta_max >= 1.0 {
            return Err(Error::Config("reflection range must lie in [0, 1)".into()));
        }
        if !(self.mic_spacing > 0.0) {
            return Err(Error::Config("mic_spacing must be positive".into()));
        }
        if !(self.min_distance > 0.0) || self.max_distance < self.min_distance {
            return Err(Error::Config("bad source distance range".into()));
        }
        if self.max_order > 6 {
            return Err(Error::Config("max_order must be <= 6".into()));
        }
        Ok(())
    }
}

/// One simulated clip's geometry. DoAs are always recomputed from positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub room: Room,
    pub array: ArrayGeometry,
    pub target: Position,
    pub interferers: Vec<Position>,
    pub snr_db: f64,
    pub seed: u64,
}

impl Scene {
    pub fn target_doa(&self) -> f64 {
        doa_from_geometry(&self.array, &self.target).expect("validated at sampling")
    }

    pub fn interferer_doas(&self) -> Vec<f64> {
        self.interferers
            .iter()
            .map(|p| doa_from_geometry(&self.array, p).expect("validated at sampling"))
            .collect()
    }

    /// Impulse responses `[mic1, mic2]` from `src` to the array.
    pub fn rir_pair(&self, src: &Position, sample_rate: u32) -> Result<[Vec<f64>; 2]> {
        Ok([
            simulate_rir(&self.room, src, &self.array.mics[0], sample_rate)?,
            simulate_rir(&self.room, src, &self.array.mics[1], sample_rate)?,
        ])
    }

    /// Target pair first, then one pair per interferer.
    pub fn rir_pairs(&self, sample_rate: u32) -> Result<Vec<[Vec<f64>; 2]>> {
        std::iter::once(&self.target)
            .chain(&self.interferers)
            .map(|p| self.rir_pair(p, sample_rate))
            .collect()
    }
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn in_doa_range(doa: f64) -> bool {
    (DOA_RANGE_DEG.0..=DOA_RANGE_DEG.1).contains(&doa)
}

fn place_source(rng: &mut impl Rng, cfg: &SceneConfig, room: &Room, array: &ArrayGeometry) -> Option<(Position, f64)> {
    let c = array.center();
    let r = uniform(rng, cfg.min_distance, cfg.max_distance);
    let psi = uniform(rng, 0.0, 2.0 * PI);
    let z = uniform(rng, cfg.source_height[0], cfg.source_height[1]);
    let p = [c[0] + r * psi.cos(), c[1] + r * psi.sin(), z];
    if room.wall_clearance(&p) < cfg.wall_margin || distance(&p, &c) < cfg.min_distance {
        return None;
    }
    let doa = doa_from_geometry(array, &p).ok()?;
    in_doa_range(doa).then_some((p, doa))
}

fn try_sample(rng: &mut impl Rng, cfg: &SceneConfig) -> Option<(Room, ArrayGeometry, Position, Vec<Position>)> {
    let dims = [0, 1, 2].map(|a| uniform(rng, cfg.room_min[a], cfg.room_max[a]));
    let room = Room {
        dims,
        beta: uniform(rng, cfg.beta_min, cfg.beta_max),
        max_order: cfg.max_order,
        speed_of_sound: cfg.speed_of_sound,
    };
    let margin = cfg.wall_margin + cfg.mic_spacing / 2.0;
    if dims[0] <= 2.0 * margin || dims[1] <= 2.0 * margin {
        return None;
    }
    let center = [
        uniform(rng, margin, dims[0] - margin),
        uniform(rng, margin, dims[1] - margin),
        uniform(rng, cfg.array_height[0], cfg.array_height[1]).min(dims[2] - cfg.wall_margin),
    ];
    let phi = uniform(rng, 0.0, 2.0 * PI);
    let half = [phi.cos() * cfg.mic_spacing / 2.0, phi.sin() * cfg.mic_spacing / 2.0];
    let array = ArrayGeometry {
        mics: [
            [center[0] - half[0], center[1] - half[1], center[2]],
            [center[0] + half[0], center[1] + half[1], center[2]],
        ],
    };
    if array.validate(&room).is_err() {
        return None;
    }
    let (target, doa) = place_source(rng, cfg, &room, &array)?;
    let mut interferers = Vec::with_capacity(cfg.n_interferers);
    for _ in 0..cfg.n_interferers {
        let (p, d) = place_source(rng, cfg, &room, &array)?;
        if (d - doa).abs() < cfg.min_separation_deg {
            return None;
        }
        interferers.push(p);
    }
    Some((room, array, target, interferers))
}

/// Draws a scene deterministically from `(config, seed)`.
///
/// Placements whose target or interferer DoA falls outside
/// [`DOA_RANGE_DEG`] are rejected; 1000 consecutive rejections is an error.
pub fn sample_scene(cfg: &SceneConfig, seed: u64, snr_db: f64) -> Result<Scene> {
    cfg.validate()?;
    for attempt in 0..MAX_REJECTIONS {
        let mut rng = rng_indexed(seed, "scene", attempt as u64);
        if let Some((room, array, target, interferers)) = try_sample(&mut rng, cfg) {
            return Ok(Scene {
                room,
                array,
                target,
                interferers,
                snr_db,
                seed,
            });
        }
    }
    Err(Error::Infeasible(format!(
        "scene sampler rejected {MAX_REJECTIONS} consecutive placements"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn array() -> ArrayGeometry {
        ArrayGeometry {
            mics: [[2.0, 2.0, 1.5], [2.2, 2.0, 1.5]],
        }
    }

    #[test]
    fn geometry_examples() {
        let a = array();
        assert!((doa_from_geometry(&a, &[2.1, 4.0, 1.7]).unwrap() - 90.0).abs() < 1e-9);
        assert!(doa_from_geometry(&a, &[4.0, 2.0, 1.5]).unwrap().abs() < 1e-9);
        assert!((doa_from_geometry(&a, &[0.5, 2.0, 1.0]).unwrap() - 180.0).abs() < 1e-9);
        assert!(doa_from_geometry(&a, &[2.1, 2.0, 2.5]).is_err());
    }

    #[test]
    fn infeasible_config_errors() {
        let cfg = SceneConfig {
            min_distance: 30.0,
            max_distance: 31.0,
            ..SceneConfig::default()
        };
        assert!(matches!(sample_scene(&cfg, 1, 0.0), Err(Error::Infeasible(_))));
    }
}

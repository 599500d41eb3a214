//! Experiment configuration (TOML).
//!
//! Every field is required; `configs/*.toml` at the repository root are
//! complete, annotated examples. Relative `output_dir` paths resolve against
//! the config file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acoustics::SceneConfig;
use crate::doanet::{DoaNetConfig, PhaseMode};
use crate::dsp::DEFAULT_SAMPLE_RATE;
use crate::error::{Error, Result};
use crate::masknet::MaskNetConfig;
use crate::speakers::CorpusConfig;
use crate::training::FitConfig;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Training mixtures; train SNRs cycle through the grid.
    pub train_clips: usize,
    /// Trailing training mixtures held out for validation.
    pub val_clips: usize,
    /// Test scenes, each rendered at every grid SNR. At most the number of
    /// test utterances.
    pub test_clips: usize,
    /// Single-source anechoic scenes for the GCC-PHAT audit.
    pub audit_clips: usize,
    /// Optional white noise at this SNR relative to the target.
    pub noise_snr_db: Option<f64>,
    /// Minimum frames behind every (variant, SNR) cell.
    pub min_test_frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    /// Test scene index whose posteriors are exported.
    pub posterior_clip: usize,
    pub posterior_snr_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub sample_rate: u32,
    pub snr_grid_db: Vec<f64>,
    pub sigma_deg: f64,
    pub rho_deg: f64,
    pub corpus: CorpusConfig,
    pub scenes: SceneConfig,
    pub dataset: DatasetConfig,
    pub masknet: MaskNetConfig,
    pub doanet: DoaNetConfig,
    pub train_mask: FitConfig,
    pub train_doa: FitConfig,
    pub report: ReportConfig,
}

impl ExperimentConfig {
    /// Desk scale: 40 speakers, 3 s clips, small networks.
    pub fn desk() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 20240501,
            output_dir: PathBuf::from("runs/desk"),
            sample_rate: DEFAULT_SAMPLE_RATE,
            snr_grid_db: vec![-10.0, -5.0, 0.0, 5.0, 10.0],
            sigma_deg: 8.0,
            rho_deg: 5.0,
            corpus: CorpusConfig::default(),
            scenes: SceneConfig::default(),
            dataset: DatasetConfig {
                train_clips: 1260,
                val_clips: 60,
                test_clips: 160,
                audit_clips: 100,
                noise_snr_db: None,
                min_test_frames: 1000,
            },
            masknet: MaskNetConfig {
                n_freq: 201,
                enc_hidden: 128,
                embed_dim: 64,
                fc: 128,
                gru_hidden: 64,
            },
            doanet: DoaNetConfig {
                n_freq: 201,
                fc1: 128,
                fc2: 64,
                gru_hidden: 32,
                phase_mode: PhaseMode::IpdCosSin,
            },
            train_mask: FitConfig {
                epochs: 15,
                batch_size: 8,
                lr: 1e-3,
            },
            train_doa: FitConfig {
                epochs: 20,
                batch_size: 8,
                lr: 1e-3,
            },
            report: ReportConfig {
                posterior_clip: 0,
                posterior_snr_db: -10.0,
            },
        }
    }

    /// Full-size networks, 30 epochs, lr 1e-4.
    pub fn full() -> Self {
        let mut c = Self::desk();
        c.output_dir = PathBuf::from("runs/full");
        c.masknet = MaskNetConfig::default();
        c.doanet = DoaNetConfig::default();
        c.train_mask = FitConfig {
            epochs: 30,
            batch_size: 8,
            lr: 1e-4,
        };
        c.train_doa = c.train_mask;
        c
    }

    /// Seconds-scale configuration for tests.
    pub fn smoke() -> Self {
        let mut c = Self::desk();
        c.output_dir = PathBuf::from("runs/smoke");
        c.corpus = CorpusConfig {
            n_speakers: 4,
            clips_per_speaker: 5,
            test_clips_per_speaker: 2,
            clip_duration_s: 0.6,
            ..CorpusConfig::default()
        };
        c.dataset = DatasetConfig {
            train_clips: 8,
            val_clips: 2,
            test_clips: 4,
            audit_clips: 4,
            noise_snr_db: None,
            min_test_frames: 10,
        };
        c.masknet = MaskNetConfig {
            n_freq: 201,
            enc_hidden: 8,
            embed_dim: 4,
            fc: 8,
            gru_hidden: 4,
        };
        c.doanet = DoaNetConfig {
            n_freq: 201,
            fc1: 8,
            fc2: 8,
            gru_hidden: 4,
            phase_mode: PhaseMode::IpdCosSin,
        };
        c.train_mask = FitConfig {
            epochs: 2,
            batch_size: 4,
            lr: 1e-3,
        };
        c.train_doa = c.train_mask;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            "smoke" => Ok(Self::smoke()),
            other => Err(Error::Config(format!("unknown preset {other:?} (desk, full, smoke)"))),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
        if cfg.output_dir.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} unsupported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.snr_grid_db.is_empty() || self.snr_grid_db.iter().any(|s| !s.is_finite()) {
            return bad("snr_grid_db must be a non-empty list of finite values");
        }
        if !(self.rho_deg > 0.0) || !(self.sigma_deg > 0.0) {
            return bad("rho_deg and sigma_deg must be positive");
        }
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive");
        }
        self.scenes.validate()?;
        self.masknet.validate()?;
        self.doanet.validate()?;
        if self.masknet.n_freq != self.doanet.n_freq || self.doanet.n_freq != crate::doanet::STFT_WIN / 2 + 1 {
            return bad("n_freq must equal the STFT bin count (201)");
        }
        let d = &self.dataset;
        if d.train_clips == 0 || d.val_clips >= d.train_clips {
            return bad("need train_clips > val_clips >= 0");
        }
        let test_utts = self.corpus.n_speakers * self.corpus.test_clips_per_speaker;
        if d.test_clips == 0 || d.test_clips > test_utts {
            return Err(Error::Config(format!("test_clips must lie in 1..={test_utts}")));
        }
        if self.report.posterior_clip >= d.test_clips {
            return bad("report.posterior_clip must index a test clip");
        }
        if !self.snr_grid_db.contains(&self.report.posterior_snr_db) {
            return bad("report.posterior_snr_db must be on the SNR grid");
        }
        for f in [&self.train_mask, &self.train_doa] {
            if f.epochs == 0 || f.batch_size == 0 || !(f.lr > 0.0) {
                return bad("training needs epochs, batch_size and lr > 0");
            }
        }
        if self.corpus.clip_duration_s < crate::speakers::MIN_DURATION_S {
            return bad("clip_duration_s must be at least 0.5 s");
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, ignoring `output_dir`.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.output_dir = PathBuf::new();
        digest(&canon)
    }

    /// Fields that determine the generated dataset.
    pub fn data_hash(&self) -> String {
        digest(&(
            self.seed,
            self.sample_rate,
            &self.snr_grid_db,
            &self.corpus,
            &self.scenes,
            &self.dataset,
        ))
    }

    /// Fields that determine the trained mask network.
    pub fn mask_hash(&self) -> String {
        digest(&(self.data_hash(), &self.masknet, &self.train_mask))
    }

    /// Fields that determine a trained DoA network, with or without the mask.
    pub fn doa_hash(&self, masked: bool) -> String {
        let upstream = if masked { self.mask_hash() } else { self.data_hash() };
        digest(&(upstream, &self.doanet, &self.train_doa, self.sigma_deg))
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        self
    }
}

fn digest(v: &impl Serialize) -> String {
    let json = serde_json::to_vec(v).expect("config serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in ["desk", "full", "smoke"] {
            let c = ExperimentConfig::preset(name).unwrap();
            c.validate().unwrap();
            let back: ExperimentConfig = toml::from_str(&c.to_toml().unwrap()).unwrap();
            assert_eq!(back, c);
        }
        assert!(ExperimentConfig::preset("huge").is_err());
    }

    #[test]
    fn hash_tracks_content_not_location() {
        let a = ExperimentConfig::desk();
        let mut b = a.clone();
        b.output_dir = PathBuf::from("/elsewhere");
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), a.clone().with_seed(Some(7)).hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn stage_hashes_follow_their_inputs() {
        let a = ExperimentConfig::desk();
        let mut b = a.clone();
        b.train_doa.epochs += 1;
        assert_eq!(a.data_hash(), b.data_hash());
        assert_eq!(a.mask_hash(), b.mask_hash());
        assert_ne!(a.doa_hash(true), b.doa_hash(true));
        b.train_mask.lr *= 2.0;
        assert_ne!(a.mask_hash(), b.mask_hash());
        assert_eq!(a.doa_hash(false), a.clone().doa_hash(false));
        assert_ne!(a.doa_hash(false), a.doa_hash(true));
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut c = ExperimentConfig::smoke();
        c.snr_grid_db.clear();
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::smoke();
        c.rho_deg = 0.0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::smoke();
        c.report.posterior_snr_db = 3.0;
        assert!(c.validate().is_err());
    }
}

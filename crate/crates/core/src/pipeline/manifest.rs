//! JSON Lines manifests with a schema header.
//!
//! Line 1 is a header object `{"schema": <name>, "version": <n>, ...}`;
//! every following line is one record.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::acoustics::Scene;
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const CLIP_SCHEMA: &str = "locselect.clips";
pub const CORPUS_SCHEMA: &str = "locselect.corpus";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub schema: String,
    pub version: u32,
    pub config_hash: String,
    pub records: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClipSplit {
    Train,
    Val,
    Test,
    Audit,
}

impl ClipSplit {
    pub fn name(self) -> &'static str {
        match self {
            ClipSplit::Train => "train",
            ClipSplit::Val => "val",
            ClipSplit::Test => "test",
            ClipSplit::Audit => "audit",
        }
    }
}

/// One rendered clip. WAV paths are relative to the dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    pub split: ClipSplit,
    /// Index of the underlying scene; shared by a test scene's SNR variants.
    pub scene_index: usize,
    /// Requested SNR; `None` for single-source clips.
    pub snr_db: Option<f64>,
    /// SNR measured on the rendered components before normalization.
    pub measured_snr_db: Option<f64>,
    pub seed: u64,
    pub scene: Scene,
    pub theta_t: f64,
    pub interferer_doas: Vec<f64>,
    pub target_speaker: u32,
    pub target_utterance: String,
    pub interferer_speakers: Vec<u32>,
    pub interferer_utterances: Vec<String>,
    pub reference_utterance: String,
    pub alpha: f64,
    pub gain: f64,
    pub mixture_wav: String,
    pub target_wav: Option<String>,
    pub interferer_wav: Option<String>,
    pub reference_wav: String,
}

pub fn write_jsonl<T: Serialize>(path: &Path, schema: &str, config_hash: &str, records: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = Header {
        schema: schema.to_string(),
        version: MANIFEST_VERSION,
        config_hash: config_hash.to_string(),
        records: records.len(),
    };
    let mut put = |line: String| writeln!(w, "{line}").map_err(|e| Error::io(path, e));
    put(serde_json::to_string(&header)?)?;
    for r in records {
        put(serde_json::to_string(r)?)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path, schema: &str) -> Result<(Header, Vec<T>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::InvalidArgument(format!("{}: empty manifest", path.display())))?
        .map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_str(&first)?;
    if header.schema != schema || header.version != MANIFEST_VERSION {
        return Err(Error::InvalidArgument(format!(
            "{}: expected {schema} v{MANIFEST_VERSION}, found {} v{}",
            path.display(),
            header.schema,
            header.version
        )));
    }
    let mut records = Vec::with_capacity(header.records);
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            records.push(serde_json::from_str(&line)?);
        }
    }
    if records.len() != header.records {
        return Err(Error::InvalidArgument(format!(
            "{}: header announces {} records, found {}",
            path.display(),
            header.records,
            records.len()
        )));
    }
    Ok((header, records))
}

//! JSON artifacts: epoch telemetry lines, run records and content hashes.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use pointrft_core::encoder::EncoderParams;
use pointrft_core::paradigms::{EpochObserver, PretrainManifest};
use pointrft_core::rft_loss::{EpochStats, Phase};
use pointrft_core::shapes::GenerationManifest;
use pointrft_core::FewShotResult;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};

use crate::error::{LabError, Result};

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| LabError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| LabError::io(path, e))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| LabError::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// Hex SHA-1 of `blob <len>\0<bytes>`, the object id git gives the same file.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String> {
    fs::read(path).map(|b| blob_hash(&b)).map_err(|e| LabError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: String,
    pub sha1: String,
}

/// Hashes each input, plus a combined id over the `(path, sha1)` list.
pub fn hash_inputs(paths: &[&Path]) -> Result<(Vec<InputHash>, String)> {
    let mut list = Vec::with_capacity(paths.len());
    let mut all = String::new();
    for p in paths {
        let sha1 = hash_file(p)?;
        all.push_str(&format!("{sha1} {}\n", p.display()));
        list.push(InputHash {
            path: p.display().to_string(),
            sha1,
        });
    }
    Ok((list, blob_hash(all.as_bytes())))
}

/// One line of `epochs.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_reward: Option<f64>,
    pub clip_fraction: Option<f64>,
    pub wall_ms: f64,
    pub phase: Phase,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub episode: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cell: Option<String>,
}

/// Stamps every finished epoch with monotonic wall time.
#[derive(Debug, Default)]
pub struct TimingObserver {
    pub episode: Option<usize>,
    pub cell: Option<String>,
    pub records: Vec<EpochRecord>,
    /// Seconds spent per phase name.
    pub phase_wall: BTreeMap<String, f64>,
    started: Option<Instant>,
}

impl TimingObserver {
    pub fn new(episode: Option<usize>, cell: Option<String>) -> Self {
        TimingObserver {
            episode,
            cell,
            ..Default::default()
        }
    }

    pub fn absorb(&mut self, other: TimingObserver) {
        self.records.extend(other.records);
        for (k, v) in other.phase_wall {
            *self.phase_wall.entry(k).or_default() += v;
        }
    }
}

pub fn phase_name(p: Phase) -> &'static str {
    match p {
        Phase::Pretrain => "pretrain",
        Phase::Sft => "sft",
        Phase::Rft => "rft",
    }
}

impl EpochObserver for TimingObserver {
    fn epoch_started(&mut self, _phase: Phase, _epoch: usize) {
        self.started = Some(Instant::now());
    }

    fn epoch_finished(&mut self, st: &EpochStats) {
        let secs = self.started.take().map_or(0.0, |t| t.elapsed().as_secs_f64());
        *self.phase_wall.entry(phase_name(st.phase).into()).or_default() += secs;
        self.records.push(EpochRecord {
            epoch: st.epoch,
            mean_loss: st.mean_loss,
            mean_reward: st.mean_reward,
            clip_fraction: st.clip_fraction,
            wall_ms: secs * 1e3,
            phase: st.phase,
            episode: self.episode,
            cell: self.cell.clone(),
        });
    }

    fn stage_finished(&mut self, _phase: Phase, _params: &EncoderParams) {}
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let f = File::create(path).map_err(|e| LabError::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| LabError::io(path, e))?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| LabError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Provenance of one CLI run. Config, seed and dataset manifest are enough
/// to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub argv: Vec<String>,
    /// Fully resolved configuration.
    pub config: serde_json::Value,
    pub seed: u64,
    pub inputs: Vec<InputHash>,
    pub input_hash: String,
    pub dataset_manifest: Option<GenerationManifest>,
    pub pretrain: Option<PretrainManifest>,
    /// Path of the per-epoch stream, relative to this record.
    pub epochs_file: String,
    pub epoch_count: usize,
    pub results: Vec<FewShotResult>,
    pub phase_wall_s: BTreeMap<String, f64>,
    pub total_wall_s: f64,
    /// Analytic forward+backward multiply-accumulates per epoch, by phase.
    pub macs_per_epoch: BTreeMap<String, u64>,
}

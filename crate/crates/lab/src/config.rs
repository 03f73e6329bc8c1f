//! Resolved configurations. Precedence: command-line flags, then a JSON
//! config file, then built-in defaults. The seed additionally falls back to
//! `PRFT_SEED` before its default of 0.

use std::path::{Path, PathBuf};

use pointrft_core::encoder::FineTuneScope;
use pointrft_core::episodes::{EpisodeShape, DEFAULT_QUERY_SIZE, META_TEST_EPISODES};
use pointrft_core::paradigms::{PretrainConfig, RewardSetting, DEFAULT_REWARD_GRID};
use pointrft_core::shapes::Regime;
use pointrft_core::{ParadigmConfig, ParadigmKind};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{LabError, Result};

pub const SEED_ENV: &str = "PRFT_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataConfig {
    pub classes: usize,
    pub per_class: usize,
    pub n_points: usize,
    pub regime: Regime,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        GenDataConfig {
            classes: 12,
            per_class: 60,
            n_points: 256,
            regime: Regime::Clean,
            seed: None,
            out: "data.prftpc".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainRunConfig {
    pub data: PathBuf,
    /// Number of base classes; the rest are held back for few-shot tasks.
    /// Defaults to 7 of every 12.
    pub base_classes: Option<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub h1: usize,
    pub h2: usize,
    pub holdout: f64,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

impl Default for PretrainRunConfig {
    fn default() -> Self {
        let p = PretrainConfig::default();
        PretrainRunConfig {
            data: "data.prftpc".into(),
            base_classes: None,
            epochs: p.epochs,
            lr: p.lr,
            batch_size: p.batch_size,
            h1: p.h1,
            h2: p.h2,
            holdout: p.holdout_fraction,
            seed: None,
            out: "pretrained.ckpt".into(),
        }
    }
}

impl PretrainRunConfig {
    pub fn core(&self, seed: u64) -> PretrainConfig {
        PretrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch_size,
            h1: self.h1,
            h2: self.h2,
            seed,
            holdout_fraction: self.holdout,
        }
    }
}

/// Shared by `fewshot` and `ablate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: PathBuf,
    pub checkpoint: PathBuf,
    pub paradigm: ParadigmKind,
    pub n_way: usize,
    pub m_shot: usize,
    pub q_size: usize,
    pub episodes: usize,
    pub sft_epochs: usize,
    pub rft_epochs: usize,
    pub budget: f64,
    pub lr: f64,
    pub a: f64,
    pub b: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub scope: FineTuneScope,
    pub seed: Option<u64>,
    pub parallel: usize,
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/telemetry`.
    pub telemetry_dir: Option<PathBuf>,
    /// Record wall time in the results table (makes it run-dependent).
    pub timing: bool,
    /// Ablation grid.
    pub epsilons: Vec<f64>,
    pub rewards: Vec<RewardSetting>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = ParadigmConfig::default();
        RunConfig {
            data: "data.prftpc".into(),
            checkpoint: "pretrained.ckpt".into(),
            paradigm: p.kind,
            n_way: 5,
            m_shot: 1,
            q_size: DEFAULT_QUERY_SIZE,
            episodes: META_TEST_EPISODES,
            sft_epochs: p.sft_epochs,
            rft_epochs: p.rft_epochs,
            budget: p.budget_fraction,
            lr: p.lr,
            a: p.a,
            b: p.b,
            epsilon: p.epsilon_clip,
            batch_size: p.batch_size,
            scope: p.scope,
            seed: None,
            parallel: 1,
            out_dir: "results".into(),
            telemetry_dir: None,
            timing: false,
            epsilons: vec![p.epsilon_clip],
            rewards: DEFAULT_REWARD_GRID.to_vec(),
        }
    }
}

impl RunConfig {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn paradigm_config(&self) -> ParadigmConfig {
        ParadigmConfig {
            kind: self.paradigm,
            sft_epochs: self.sft_epochs,
            rft_epochs: self.rft_epochs,
            budget_fraction: self.budget,
            lr: self.lr,
            a: self.a,
            b: self.b,
            epsilon_clip: self.epsilon,
            batch_size: self.batch_size,
            seed: self.seed(),
            scope: self.scope,
        }
    }

    pub fn shape(&self) -> EpisodeShape {
        EpisodeShape {
            n_way: self.n_way,
            m_shot: self.m_shot,
            q_size: self.q_size,
        }
    }

    pub fn telemetry_dir(&self) -> PathBuf {
        self.telemetry_dir.clone().unwrap_or_else(|| self.out_dir.join("telemetry"))
    }

    pub fn validate(&self) -> Result<()> {
        self.paradigm_config().validate()?;
        if self.n_way < 2 || self.m_shot == 0 || self.q_size == 0 {
            return Err(LabError::Config(format!(
                "episodes need n_way >= 2, m_shot >= 1, q_size >= 1 (got {}, {}, {})",
                self.n_way, self.m_shot, self.q_size
            )));
        }
        if self.episodes == 0 {
            return Err(LabError::Config("episodes must be >= 1".into()));
        }
        if self.parallel == 0 {
            return Err(LabError::Config("parallel must be >= 1".into()));
        }
        Ok(())
    }
}

/// Layers `flags` over `file` over `base` (all JSON objects) and
/// deserializes the result; absent keys take the type's defaults.
pub fn layer<T: DeserializeOwned>(base: Map<String, Value>, file: Option<&Path>, flags: &impl Serialize) -> Result<T> {
    let mut merged = base;
    if let Some(path) = file {
        match crate::records::read_json::<Value>(path)? {
            Value::Object(m) => merged.extend(m),
            _ => {
                return Err(LabError::Format {
                    path: path.to_path_buf(),
                    msg: "config file must hold a JSON object".into(),
                })
            }
        }
    }
    match serde_json::to_value(flags)? {
        Value::Object(m) => merged.extend(m.into_iter().filter(|(_, v)| !v.is_null())),
        _ => unreachable!("flag structs serialize to objects"),
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| LabError::Config(e.to_string()))
}

/// Applies the `PRFT_SEED` fallback to an unset seed.
pub fn seed_or_env(seed: Option<u64>, env: Option<&str>) -> Result<u64> {
    match (seed, env) {
        (Some(s), _) => Ok(s),
        (None, Some(v)) => v
            .trim()
            .parse()
            .map_err(|_| LabError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        (None, None) => Ok(0),
    }
}

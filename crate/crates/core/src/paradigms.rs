//! Training regimes: Pre-S (pretrain, then SFT), Pre-R (pretrain, then RFT)
//! and Pre-S-R (pretrain, SFT to its budget, then RFT from there), plus the
//! supervised base-class pretraining that produces the shared checkpoint.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::encoder::{Body, EncoderParams, FineTuneScope, Head, PointCloud};
use crate::episodes::{self, EpisodeShape, FewShotResult};
use crate::error::{Error, Result};
use crate::rft_loss::{self, EpochStats, Phase, RftConfig};
use crate::rewards::DEFAULT_EPS_STD;
use crate::seed::{self, tags};
use crate::shapes::Dataset;
use crate::tensorgrad::AdamState;

/// Hooks into the training loops. Wall-clock timing is supplied by callers
/// that have a clock.
pub trait EpochObserver {
    fn epoch_started(&mut self, _phase: Phase, _epoch: usize) {}
    fn epoch_finished(&mut self, _stats: &EpochStats) {}
    /// Called once a stage (SFT or RFT) ends, with the parameters at that point.
    fn stage_finished(&mut self, _phase: Phase, _params: &EncoderParams) {}
}

pub struct NoObserver;

impl EpochObserver for NoObserver {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParadigmKind {
    #[serde(rename = "pre-s")]
    PreS,
    #[serde(rename = "pre-r")]
    PreR,
    #[serde(rename = "pre-s-r")]
    PreSR,
}

impl ParadigmKind {
    pub fn name(self) -> &'static str {
        match self {
            ParadigmKind::PreS => "pre-s",
            ParadigmKind::PreR => "pre-r",
            ParadigmKind::PreSR => "pre-s-r",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "pre-s" => Ok(ParadigmKind::PreS),
            "pre-r" => Ok(ParadigmKind::PreR),
            "pre-s-r" => Ok(ParadigmKind::PreSR),
            other => Err(Error::Parameter(format!("unknown paradigm '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParadigmConfig {
    pub kind: ParadigmKind,
    pub sft_epochs: usize,
    pub rft_epochs: usize,
    pub budget_fraction: f64,
    pub lr: f64,
    pub a: f64,
    pub b: f64,
    pub epsilon_clip: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub scope: FineTuneScope,
}

impl Default for ParadigmConfig {
    fn default() -> Self {
        ParadigmConfig {
            kind: ParadigmKind::PreSR,
            sft_epochs: 30,
            rft_epochs: 30,
            budget_fraction: 1.0,
            lr: 1e-3,
            a: 1.0,
            b: 2.0,
            epsilon_clip: 0.2,
            batch_size: 16,
            seed: 0,
            scope: FineTuneScope::Full,
        }
    }
}

/// `ceil(fraction * epochs)`, tolerant of binary rounding (0.1 * 30 is 3).
pub fn scaled_epochs(epochs: usize, fraction: f64) -> usize {
    if epochs == 0 {
        return 0;
    }
    let scaled = libm::ceil(fraction * epochs as f64 - 1e-9) as usize;
    scaled.max(1)
}

impl ParadigmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.budget_fraction > 0.0 && self.budget_fraction <= 1.0) {
            return Err(Error::Parameter(format!("budget fraction {} outside (0, 1]", self.budget_fraction)));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch size must be >= 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Parameter(format!("learning rate {} must be >= 0", self.lr)));
        }
        if !(self.a > 0.0 && self.b >= 0.0 && self.a.is_finite() && self.b.is_finite()) {
            return Err(Error::Parameter(format!("reward weights need a > 0, b >= 0; got a={} b={}", self.a, self.b)));
        }
        if !(self.epsilon_clip >= 0.0 && self.epsilon_clip < 1.0) {
            return Err(Error::Parameter(format!("epsilon {} outside [0, 1)", self.epsilon_clip)));
        }
        Ok(())
    }

    /// (SFT, RFT) epochs actually run, after the paradigm switch and budget scaling.
    pub fn effective_epochs(&self) -> (usize, usize) {
        let sft = scaled_epochs(self.sft_epochs, self.budget_fraction);
        let rft = scaled_epochs(self.rft_epochs, self.budget_fraction);
        match self.kind {
            ParadigmKind::PreS => (sft, 0),
            ParadigmKind::PreR => (0, rft),
            ParadigmKind::PreSR => (sft, rft),
        }
    }

    pub fn rft(&self) -> RftConfig {
        RftConfig {
            a: self.a,
            b: self.b,
            epsilon_clip: self.epsilon_clip,
            lr: self.lr,
            eps_std: DEFAULT_EPS_STD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub h1: usize,
    pub h2: usize,
    pub seed: u64,
    /// Per-class fraction of base samples held out for the accuracy report.
    pub holdout_fraction: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 50,
            lr: 1e-3,
            batch_size: 32,
            h1: 64,
            h2: 128,
            seed: 0,
            holdout_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainManifest {
    pub seed: u64,
    pub epochs: usize,
    pub h1: usize,
    pub h2: usize,
    pub base_classes: Vec<String>,
    pub train_samples: usize,
    pub holdout_samples: usize,
    pub final_base_accuracy: f64,
}

/// Pretrained body plus its provenance. Heads are task-specific and never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub body: Body,
    pub manifest: PretrainManifest,
}

impl Checkpoint {
    pub fn bitwise_eq(&self, other: &Checkpoint) -> bool {
        self.body.bitwise_eq(&other.body)
    }
}

fn shuffled_batches<'a>(clouds: &'a [PointCloud], batch_size: usize, rng: &mut seed::Rng) -> Vec<Vec<&'a PointCloud>> {
    let mut order: Vec<usize> = (0..clouds.len()).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .map(|c| c.iter().map(|&i| &clouds[i]).collect())
        .collect()
}

/// Supervised training of a fresh encoder on the base classes (labels
/// `0..classes`). The temporary head is discarded. `dataset` must be
/// normalized.
pub fn pretrain(dataset: &Dataset, cfg: &PretrainConfig, observer: &mut dyn EpochObserver) -> Result<Checkpoint> {
    let classes = dataset.num_classes();
    if classes < 2 {
        return Err(Error::Parameter(format!("pretraining needs >= 2 base classes, got {classes}")));
    }
    if cfg.batch_size == 0 || !(0.0..1.0).contains(&cfg.holdout_fraction) {
        return Err(Error::Parameter("pretrain needs batch_size >= 1 and holdout in [0, 1)".into()));
    }
    let mut params = crate::encoder::init_params(cfg.seed, cfg.h1, cfg.h2, classes)?;
    let mut rng = seed::rng(cfg.seed, tags::PRETRAIN, 0);
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    for idx in dataset.indices_by_class() {
        let mut idx = idx;
        idx.shuffle(&mut rng);
        let h = libm::floor(cfg.holdout_fraction * idx.len() as f64) as usize;
        let h = h.min(idx.len().saturating_sub(1));
        holdout.extend(idx[..h].iter().map(|&i| dataset.clouds[i].clone()));
        train.extend(idx[h..].iter().map(|&i| dataset.clouds[i].clone()));
    }
    let mut adam = AdamState::new();
    for epoch in 0..cfg.epochs {
        observer.epoch_started(Phase::Pretrain, epoch);
        let batches = shuffled_batches(&train, cfg.batch_size, &mut rng);
        let st = rft_loss::sft_train_epoch(&mut params, &batches, cfg.lr, &mut adam, epoch, Phase::Pretrain)?;
        observer.epoch_finished(&st);
    }
    observer.stage_finished(Phase::Pretrain, &params);
    let eval = if holdout.is_empty() { &train } else { &holdout };
    let final_base_accuracy = episodes::accuracy_on(&params, eval)?;
    Ok(Checkpoint {
        body: params.body,
        manifest: PretrainManifest {
            seed: cfg.seed,
            epochs: cfg.epochs,
            h1: cfg.h1,
            h2: cfg.h2,
            base_classes: dataset.class_names.clone(),
            train_samples: train.len(),
            holdout_samples: holdout.len(),
            final_base_accuracy,
        },
    })
}

/// Clones the checkpoint body, attaches a fresh `n_way` head seeded from
/// `cfg.seed`, and runs the configured paradigm on `support` (normalized,
/// labels in `0..n_way`).
pub fn apply_paradigm(
    checkpoint: &Checkpoint,
    support: &[PointCloud],
    n_way: usize,
    cfg: &ParadigmConfig,
    observer: &mut dyn EpochObserver,
) -> Result<EncoderParams> {
    cfg.validate()?;
    if support.is_empty() {
        return Err(Error::Validation("empty support set".into()));
    }
    let body = checkpoint.body.clone();
    let mut params = EncoderParams {
        head: Head::init(seed::derive(cfg.seed, tags::HEAD_INIT, 0), body.h2(), n_way),
        body,
    };
    params.dims().validate()?;
    params.set_scope(cfg.scope);
    let (sft_epochs, rft_epochs) = cfg.effective_epochs();

    if sft_epochs > 0 {
        let mut rng = seed::rng(cfg.seed, tags::SFT_SHUFFLE, 0);
        let mut adam = AdamState::new();
        for epoch in 0..sft_epochs {
            observer.epoch_started(Phase::Sft, epoch);
            let batches = shuffled_batches(support, cfg.batch_size, &mut rng);
            let st = rft_loss::sft_train_epoch(&mut params, &batches, cfg.lr, &mut adam, epoch, Phase::Sft)?;
            observer.epoch_finished(&st);
        }
        observer.stage_finished(Phase::Sft, &params);
    }
    if rft_epochs > 0 {
        let rcfg = cfg.rft();
        let mut rng = seed::rng(cfg.seed, tags::RFT_SHUFFLE, 0);
        let mut adam = AdamState::new();
        for epoch in 0..rft_epochs {
            observer.epoch_started(Phase::Rft, epoch);
            let old = params.snapshot();
            let batches = shuffled_batches(support, cfg.batch_size, &mut rng);
            let st = rft_loss::rft_train_epoch(&mut params, &old, &batches, &rcfg, &mut adam, epoch)?;
            observer.epoch_finished(&st);
        }
        observer.stage_finished(Phase::Rft, &params);
    }
    Ok(params)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSetting {
    pub a: f64,
    pub b: f64,
}

/// Accuracy-only, a=1 b=1, a=1 b=2.
pub const DEFAULT_REWARD_GRID: [RewardSetting; 3] = [
    RewardSetting { a: 1.0, b: 0.0 },
    RewardSetting { a: 1.0, b: 1.0 },
    RewardSetting { a: 1.0, b: 2.0 },
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub reward: RewardSetting,
    pub epsilon_clip: f64,
    pub result: FewShotResult,
    /// Parameter digest after fine-tuning on episode 0.
    pub first_episode_digest: u64,
}

/// One meta-evaluation per (reward setting, epsilon) cell, grid order. Every
/// cell uses the same master seed, so all cells see the same episodes and
/// head initializations. `dataset` must be normalized.
#[allow(clippy::too_many_arguments)]
pub fn ablation_sweep(
    checkpoint: &Checkpoint,
    dataset: &Dataset,
    rewards: &[RewardSetting],
    epsilons: &[f64],
    base: &ParadigmConfig,
    shape: EpisodeShape,
    n_episodes: usize,
    seed: u64,
) -> Result<Vec<SweepCell>> {
    if rewards.is_empty() || epsilons.is_empty() {
        return Err(Error::Parameter("ablation grid is empty".into()));
    }
    let mut cells = Vec::with_capacity(rewards.len() * epsilons.len());
    for &eps in epsilons {
        for &reward in rewards {
            let cfg = ParadigmConfig {
                a: reward.a,
                b: reward.b,
                epsilon_clip: eps,
                ..base.clone()
            };
            let outs = episodes::meta_evaluate_range(checkpoint, dataset, 0..n_episodes, shape, &cfg, seed, &mut NoObserver)?;
            let digest = outs.first().map(|o| o.params_digest).unwrap_or(0);
            let result = FewShotResult::from_accuracies(outs.iter().map(|o| o.accuracy).collect(), shape, seed, cfg)?;
            cells.push(SweepCell {
                reward,
                epsilon_clip: eps,
                result,
                first_episode_digest: digest,
            });
        }
    }
    Ok(cells)
}

impl EncoderParams {
    /// Order-sensitive 64-bit digest of every parameter bit pattern.
    pub fn digest(&self) -> u64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data().iter())
            .fold(0x5052_4654u64, |h, v| seed::mix64(h ^ v.to_bits()))
    }
}

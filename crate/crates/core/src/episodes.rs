//! N-way M-shot episode sampling and the per-episode fine-tune/evaluate loop.
//!
//! Each episode fine-tunes its own copy of the pretrained checkpoint on the
//! support set and is scored by argmax accuracy on the query set. Episode `i`
//! draws all of its randomness from `derive(master_seed, EPISODE, i)`, so any
//! subset of episodes can be replayed alone, in any order.

use alloc::format;
use alloc::vec::Vec;
use core::ops::Range;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::encoder::PointCloud;
use crate::error::{Error, Result};
use crate::paradigms::{self, Checkpoint, EpochObserver, ParadigmConfig};
use crate::rft_loss::EpochStats;
use crate::seed::{self, tags, Rng};
use crate::shapes::Dataset;

pub const DEFAULT_QUERY_SIZE: usize = 20;
pub const META_TRAIN_EPISODES: usize = 400;
pub const META_VAL_EPISODES: usize = 600;
pub const META_TEST_EPISODES: usize = 700;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeShape {
    pub n_way: usize,
    pub m_shot: usize,
    pub q_size: usize,
}

impl EpisodeShape {
    pub fn new(n_way: usize, m_shot: usize) -> Self {
        EpisodeShape {
            n_way,
            m_shot,
            q_size: DEFAULT_QUERY_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub support: Vec<PointCloud>,
    pub query: Vec<PointCloud>,
    /// Episode label -> dataset class id.
    pub class_map: Vec<usize>,
    pub seed: u64,
}

impl Episode {
    pub fn n_way(&self) -> usize {
        self.class_map.len()
    }
}

pub fn sample_episode(dataset: &Dataset, shape: EpisodeShape, rng: &mut Rng) -> Result<Episode> {
    let EpisodeShape { n_way, m_shot, q_size } = shape;
    if n_way < 2 || m_shot == 0 || q_size == 0 {
        return Err(Error::Parameter(format!(
            "episode needs n_way >= 2, m_shot >= 1, q_size >= 1; got {n_way}/{m_shot}/{q_size}"
        )));
    }
    let need = m_shot + q_size;
    let by_class = dataset.indices_by_class();
    let eligible: Vec<usize> = (0..by_class.len()).filter(|&c| by_class[c].len() >= need).collect();
    if eligible.len() < n_way {
        return Err(Error::Capacity(format!(
            "{n_way}-way episode with {need} samples per class needs {n_way} classes; only {} of {} classes have enough",
            eligible.len(),
            by_class.len()
        )));
    }
    let chosen: Vec<usize> = index::sample(rng, eligible.len(), n_way)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    let mut support = Vec::with_capacity(n_way * m_shot);
    let mut query = Vec::with_capacity(n_way * q_size);
    for (label, &class) in chosen.iter().enumerate() {
        let pool = &by_class[class];
        for (j, i) in index::sample(rng, pool.len(), need).into_iter().enumerate() {
            let mut c = dataset.clouds[pool[i]].clone();
            c.label = Some(label);
            if j < m_shot {
                support.push(c);
            } else {
                query.push(c);
            }
        }
    }
    Ok(Episode {
        support,
        query,
        class_map: chosen,
        seed: rng.gen(),
    })
}

pub fn episode_seed(master: u64, index: usize) -> u64 {
    seed::derive(master, tags::EPISODE, index as u64)
}

/// The `index`-th episode of the stream rooted at `master`.
pub fn episode_at(dataset: &Dataset, shape: EpisodeShape, master: u64, index: usize) -> Result<Episode> {
    let mut rng = seed::rng(master, tags::EPISODE, index as u64);
    sample_episode(dataset, shape, &mut rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub index: usize,
    pub seed: u64,
    pub accuracy: f64,
    /// Digest of the fine-tuned parameters.
    pub params_digest: u64,
    pub stats: Vec<EpochStats>,
}

struct Collect<'a> {
    inner: &'a mut dyn EpochObserver,
    stats: Vec<EpochStats>,
}

impl EpochObserver for Collect<'_> {
    fn epoch_started(&mut self, phase: crate::rft_loss::Phase, epoch: usize) {
        self.inner.epoch_started(phase, epoch);
    }

    fn epoch_finished(&mut self, stats: &EpochStats) {
        self.stats.push(stats.clone());
        self.inner.epoch_finished(stats);
    }

    fn stage_finished(&mut self, phase: crate::rft_loss::Phase, params: &crate::encoder::EncoderParams) {
        self.inner.stage_finished(phase, params);
    }
}

pub fn accuracy_on(params: &crate::encoder::EncoderParams, clouds: &[PointCloud]) -> Result<f64> {
    if clouds.is_empty() {
        return Err(Error::Validation("accuracy on an empty set".into()));
    }
    let refs: Vec<&PointCloud> = clouds.iter().collect();
    let mut correct = 0usize;
    // chunked so the tape stays small
    for chunk in refs.chunks(64) {
        let pred = params.predict(chunk)?;
        correct += pred.iter().zip(chunk).filter(|(p, c)| Some(**p) == c.label).count();
    }
    Ok(correct as f64 / clouds.len() as f64)
}

/// Fine-tunes a fresh copy of `checkpoint` (new N-way head) on the support
/// set and scores it on the query set. The checkpoint is not modified.
pub fn run_episode(
    checkpoint: &Checkpoint,
    episode: &Episode,
    cfg: &ParadigmConfig,
    observer: &mut dyn EpochObserver,
) -> Result<EpisodeOutcome> {
    let cfg = ParadigmConfig {
        seed: episode.seed,
        ..cfg.clone()
    };
    let mut collect = Collect {
        inner: observer,
        stats: Vec::new(),
    };
    let params = paradigms::apply_paradigm(checkpoint, &episode.support, episode.n_way(), &cfg, &mut collect)?;
    let accuracy = accuracy_on(&params, &episode.query)?;
    Ok(EpisodeOutcome {
        index: 0,
        seed: episode.seed,
        accuracy,
        params_digest: params.digest(),
        stats: collect.stats,
    })
}

/// Runs episodes `range` of the stream rooted at `seed` on an already
/// normalized dataset.
pub fn meta_evaluate_range(
    checkpoint: &Checkpoint,
    dataset: &Dataset,
    range: Range<usize>,
    shape: EpisodeShape,
    cfg: &ParadigmConfig,
    seed: u64,
    observer: &mut dyn EpochObserver,
) -> Result<Vec<EpisodeOutcome>> {
    range
        .map(|i| {
            let ep = episode_at(dataset, shape, seed, i)?;
            let mut out = run_episode(checkpoint, &ep, cfg, observer)?;
            out.index = i;
            Ok(out)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotResult {
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    /// Population std over episodes.
    pub std_accuracy: f64,
    pub episode_count: usize,
    pub shape: EpisodeShape,
    pub seed: u64,
    pub config: ParadigmConfig,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}

impl FewShotResult {
    pub fn from_accuracies(accuracies: Vec<f64>, shape: EpisodeShape, seed: u64, config: ParadigmConfig) -> Result<Self> {
        if let Some(a) = accuracies.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::Validation(format!("accuracy {a} outside [0, 1]")));
        }
        let (mean_accuracy, std_accuracy) = mean_std(&accuracies);
        Ok(FewShotResult {
            episode_count: accuracies.len(),
            accuracies,
            mean_accuracy,
            std_accuracy,
            shape,
            seed,
            config,
        })
    }
}

/// Sequential meta-test: normalizes the dataset, then runs `n_episodes`.
pub fn meta_evaluate(
    checkpoint: &Checkpoint,
    dataset: &Dataset,
    n_episodes: usize,
    shape: EpisodeShape,
    cfg: &ParadigmConfig,
    seed: u64,
) -> Result<FewShotResult> {
    let data = dataset.normalized()?;
    let outs = meta_evaluate_range(
        checkpoint,
        &data,
        0..n_episodes,
        shape,
        cfg,
        seed,
        &mut paradigms::NoObserver,
    )?;
    FewShotResult::from_accuracies(outs.iter().map(|o| o.accuracy).collect(), shape, seed, cfg.clone())
}

/// Seeded split of `num_classes` class ids into base (pretraining) and new
/// (evaluation) sets, each sorted.
pub fn make_base_new_split(num_classes: usize, base_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if num_classes < 2 {
        return Err(Error::Parameter(format!("need >= 2 classes to split, got {num_classes}")));
    }
    let base = libm::round(base_fraction * num_classes as f64);
    if !(base >= 1.0 && base < num_classes as f64) {
        return Err(Error::Parameter(format!(
            "base fraction {base_fraction} leaves one side of a {num_classes}-class split empty"
        )));
    }
    let mut rng = seed::rng(seed, tags::SPLIT, 0);
    let perm = index::sample(&mut rng, num_classes, num_classes).into_vec();
    let mut b: Vec<usize> = perm[..base as usize].to_vec();
    let mut n: Vec<usize> = perm[base as usize..].to_vec();
    b.sort_unstable();
    n.sort_unstable();
    Ok((b, n))
}

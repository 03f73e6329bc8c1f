//! Episode-level parallelism with order-preserving merge, and cost accounting.

use pointrft_core::cost::flops_estimate;
use pointrft_core::episodes::{self, EpisodeOutcome, EpisodeShape};
use pointrft_core::{Checkpoint, Dataset, ParadigmConfig};
use rayon::prelude::*;

use crate::error::{LabError, Result};
use crate::records::TimingObserver;

pub struct EpisodeRun {
    /// Indexed `0..n`, in order, regardless of thread count.
    pub outcomes: Vec<EpisodeOutcome>,
    pub timing: TimingObserver,
}

impl EpisodeRun {
    pub fn accuracies(&self) -> Vec<f64> {
        self.outcomes.iter().map(|o| o.accuracy).collect()
    }
}

fn one(
    ckpt: &Checkpoint,
    data: &Dataset,
    shape: EpisodeShape,
    cfg: &ParadigmConfig,
    seed: u64,
    i: usize,
    cell: &Option<String>,
) -> Result<(EpisodeOutcome, TimingObserver)> {
    let mut obs = TimingObserver::new(Some(i), cell.clone());
    let ep = episodes::episode_at(data, shape, seed, i)?;
    let mut out = episodes::run_episode(ckpt, &ep, cfg, &mut obs)?;
    out.index = i;
    Ok((out, obs))
}

/// Runs episodes `0..n` on a normalized dataset using up to `parallel`
/// threads. Results do not depend on `parallel`.
#[allow(clippy::too_many_arguments)]
pub fn run_episodes(
    ckpt: &Checkpoint,
    data: &Dataset,
    shape: EpisodeShape,
    cfg: &ParadigmConfig,
    seed: u64,
    n: usize,
    parallel: usize,
    cell: Option<String>,
) -> Result<EpisodeRun> {
    let parts: Vec<(EpisodeOutcome, TimingObserver)> = if parallel <= 1 {
        (0..n)
            .map(|i| one(ckpt, data, shape, cfg, seed, i, &cell))
            .collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallel)
            .build()
            .map_err(|e| LabError::Config(format!("thread pool: {e}")))?;
        pool.install(|| {
            (0..n)
                .into_par_iter()
                .map(|i| one(ckpt, data, shape, cfg, seed, i, &cell))
                .collect::<Result<_>>()
        })?
    };
    let mut timing = TimingObserver::new(None, cell);
    let mut outcomes = Vec::with_capacity(n);
    for (o, t) in parts {
        outcomes.push(o);
        timing.absorb(t);
    }
    Ok(EpisodeRun { outcomes, timing })
}

/// Analytic multiply-accumulates for fine-tuning one episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FineTuneCost {
    pub sft_epoch: u64,
    /// SFT cost plus the extra forward pass of the frozen old policy.
    pub rft_epoch: u64,
    pub per_episode: u64,
}

pub fn fine_tune_cost(ckpt: &Checkpoint, cfg: &ParadigmConfig, shape: EpisodeShape, n_points: usize) -> FineTuneCost {
    let support = (shape.n_way * shape.m_shot) as u64;
    let f = flops_estimate(
        ckpt.body.h1() as u64,
        ckpt.body.h2() as u64,
        shape.n_way as u64,
        n_points as u64,
        support,
    );
    let sft_epoch = f.total();
    let rft_epoch = sft_epoch + f.forward_macs;
    let (se, re) = cfg.effective_epochs();
    FineTuneCost {
        sft_epoch,
        rft_epoch,
        per_episode: se as u64 * sft_epoch + re as u64 * rft_epoch,
    }
}

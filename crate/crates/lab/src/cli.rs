//! The `pointrft` command line.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use pointrft_core::encoder::FineTuneScope;
use pointrft_core::episodes::{self, FewShotResult};
use pointrft_core::paradigms::{self, RewardSetting, SweepCell};
use pointrft_core::rft_loss::Phase;
use pointrft_core::shapes::{self, Regime};
use pointrft_core::{Checkpoint, Dataset, ParadigmKind};
use serde::Serialize;
use serde_json::Map;

use crate::chart::render_chart;
use crate::checkpoint::{self, CheckpointManifest, ClassSplit};
use crate::config::{self, GenDataConfig, PretrainRunConfig, RunConfig, SEED_ENV};
use crate::error::{LabError, Result};
use crate::prftpc;
use crate::records::{self, RunRecord, TimingObserver};
use crate::runner::{self, EpisodeRun};
use crate::tables::{self, EpisodeRow, ResultRow, SweepRow, Table};

#[derive(Debug, Parser)]
#[command(name = "pointrft", version, about = "Reinforcement vs supervised fine-tuning of point cloud classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic shape benchmark.
    GenData(GenDataArgs),
    /// Pretrain an encoder body on the base classes.
    Pretrain(PretrainArgs),
    /// Meta-test one paradigm on N-way M-shot episodes of the new classes.
    Fewshot(RunArgs),
    /// Sweep reward settings and clip ranges with paired episodes.
    Ablate(AblateArgs),
    /// Print result tables and render them as a chart.
    Report(ReportArgs),
}

fn parse_paradigm(s: &str) -> std::result::Result<ParadigmKind, String> {
    ParadigmKind::from_name(s).map_err(|e| e.to_string())
}

fn parse_regime(s: &str) -> std::result::Result<Regime, String> {
    Regime::from_name(s).map_err(|e| e.to_string())
}

fn parse_scope(s: &str) -> std::result::Result<FineTuneScope, String> {
    match s {
        "full" => Ok(FineTuneScope::Full),
        "head-only" => Ok(FineTuneScope::HeadOnly),
        _ => Err(format!("unknown scope '{s}' (full, head-only)")),
    }
}

fn parse_reward(s: &str) -> std::result::Result<RewardSetting, String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("reward '{s}' is not 'a:b'"))?;
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("bad number in reward '{s}'"));
    Ok(RewardSetting { a: num(a)?, b: num(b)? })
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Args, Serialize)]
pub struct GenDataArgs {
    /// Number of shape classes (2..=12).
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    n_points: Option<usize>,
    /// clean | corrupted
    #[arg(long, value_parser = parse_regime)]
    regime: Option<Regime>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file [default: data.prftpc]
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON file with defaults for any of the flags.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PretrainArgs {
    /// Dataset file [default: data.prftpc]
    #[arg(long)]
    data: Option<PathBuf>,
    /// Classes used for pretraining; the rest form the few-shot pool.
    #[arg(long)]
    base_classes: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    h1: Option<usize>,
    #[arg(long)]
    h2: Option<usize>,
    /// Per-class fraction of base samples held out for the accuracy report.
    #[arg(long)]
    holdout: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint file [default: pretrained.ckpt]
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct RunArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// pre-s | pre-r | pre-s-r
    #[arg(long, value_parser = parse_paradigm)]
    paradigm: Option<ParadigmKind>,
    #[arg(long)]
    n_way: Option<usize>,
    #[arg(long)]
    m_shot: Option<usize>,
    /// Query samples per class.
    #[arg(long)]
    q_size: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    sft_epochs: Option<usize>,
    #[arg(long)]
    rft_epochs: Option<usize>,
    /// Fraction of the epoch budget to spend, e.g. 0.1.
    #[arg(long)]
    budget: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    /// Accuracy reward weight.
    #[arg(long)]
    a: Option<f64>,
    /// Dispersion reward weight.
    #[arg(long)]
    b: Option<f64>,
    /// Clip range of the policy ratio.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// full | head-only
    #[arg(long, value_parser = parse_scope)]
    scope: Option<FineTuneScope>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for episodes; results do not depend on it.
    #[arg(long)]
    parallel: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    telemetry_dir: Option<PathBuf>,
    /// Put wall time into the results table.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    timing: bool,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct AblateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    run: RunArgs,
    /// Clip ranges to sweep, comma separated.
    #[arg(long, value_delimiter = ',')]
    epsilons: Option<Vec<f64>>,
    /// Reward settings `a:b`, comma separated [default: 1:0,1:1,1:2]
    #[arg(long, value_delimiter = ',', value_parser = parse_reward)]
    rewards: Option<Vec<RewardSetting>>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// results, sweep or episode CSV files with a common schema.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Write the combined table here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write a bar chart here.
    #[arg(long)]
    chart: Option<PathBuf>,
    #[arg(long, default_value = "few-shot accuracy")]
    title: String,
}

/// Parses `argv` (program name first), runs, and returns the exit code.
pub fn main_with_args(argv: Vec<OsString>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli, argv: &[String]) -> Result<()> {
    let env_seed = std::env::var(SEED_ENV).ok();
    let env_seed = env_seed.as_deref();
    match cli.command {
        Command::GenData(a) => {
            let mut c: GenDataConfig = config::layer(Map::new(), a.config.as_deref(), &a)?;
            c.seed = Some(config::seed_or_env(c.seed, env_seed)?);
            gen_data(&c)
        }
        Command::Pretrain(a) => {
            let mut c: PretrainRunConfig = config::layer(Map::new(), a.config.as_deref(), &a)?;
            c.seed = Some(config::seed_or_env(c.seed, env_seed)?);
            pretrain(&c, argv)
        }
        Command::Fewshot(a) => {
            let mut c: RunConfig = config::layer(Map::new(), a.config.as_deref(), &a)?;
            c.seed = Some(config::seed_or_env(c.seed, env_seed)?);
            fewshot(&c, argv)
        }
        Command::Ablate(a) => {
            let mut base = Map::new();
            base.insert("paradigm".into(), ParadigmKind::PreR.name().into());
            let mut c: RunConfig = config::layer(base, a.run.config.as_deref(), &a)?;
            c.seed = Some(config::seed_or_env(c.seed, env_seed)?);
            ablate(&c, argv)
        }
        Command::Report(a) => report(&a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

pub fn gen_data(c: &GenDataConfig) -> Result<()> {
    let seed = c.seed.unwrap_or(0);
    let data = shapes::generate_benchmark(c.classes, c.per_class, c.n_points, c.regime, seed)?;
    ensure_parent(&c.out)?;
    prftpc::save_dataset(&c.out, &data)?;
    println!(
        "wrote {} clouds ({} classes, {} points, {}) to {}",
        data.len(),
        data.num_classes(),
        c.n_points,
        c.regime.name(),
        c.out.display()
    );
    Ok(())
}

fn telemetry_paths(out: &Path) -> (PathBuf, PathBuf) {
    let mut run = out.as_os_str().to_owned();
    run.push(".run.json");
    let mut ep = out.as_os_str().to_owned();
    ep.push(".epochs.jsonl");
    (run.into(), ep.into())
}

fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned())
}

pub fn pretrain(c: &PretrainRunConfig, argv: &[String]) -> Result<()> {
    let started = Instant::now();
    let seed = c.seed.unwrap_or(0);
    let data = prftpc::load_dataset(&c.data)?;
    let classes = data.num_classes();
    let base_n = c.base_classes.unwrap_or((classes * 7 + 6) / 12);
    if base_n == 0 || base_n >= classes {
        return Err(LabError::Config(format!(
            "base_classes must be in 1..{classes}, got {base_n}"
        )));
    }
    let (base, new) = episodes::make_base_new_split(classes, base_n as f64 / classes as f64, seed)?;
    let base_data = data.restrict(&base)?.normalized()?;
    let mut timing = TimingObserver::default();
    let ckpt = paradigms::pretrain(&base_data, &c.core(seed), &mut timing)?;

    let (inputs, input_hash) = records::hash_inputs(&[&c.data])?;
    let names = |ids: &[usize]| ids.iter().map(|&i| data.class_names[i].clone()).collect();
    let manifest = CheckpointManifest {
        pretrain: ckpt.manifest.clone(),
        split: Some(ClassSplit {
            seed,
            base: names(&base),
            new: names(&new),
        }),
        data_hash: Some(inputs[0].sha1.clone()),
    };
    ensure_parent(&c.out)?;
    checkpoint::save_checkpoint(&c.out, &ckpt, &manifest)?;

    let (run_path, epochs_path) = telemetry_paths(&c.out);
    records::write_jsonl(&epochs_path, &timing.records)?;
    let h = ckpt.body.h2() as u64;
    let train_cost = pointrft_core::cost::flops_estimate(
        ckpt.body.h1() as u64,
        h,
        base.len() as u64,
        base_data.clouds.first().map_or(0, |c| c.len()) as u64,
        ckpt.manifest.train_samples as u64,
    );
    let record = RunRecord {
        command: "pretrain".into(),
        argv: argv.to_vec(),
        config: serde_json::to_value(c)?,
        seed,
        inputs,
        input_hash,
        dataset_manifest: data.manifest.clone(),
        pretrain: Some(ckpt.manifest.clone()),
        epochs_file: file_name(&epochs_path),
        epoch_count: timing.records.len(),
        results: vec![],
        phase_wall_s: timing.phase_wall.clone(),
        total_wall_s: started.elapsed().as_secs_f64(),
        macs_per_epoch: [("pretrain".to_string(), train_cost.total())].into(),
    };
    records::write_json(&run_path, &record)?;
    println!(
        "pretrained {}x{} on {} base classes ({} samples): holdout accuracy {:.4}",
        ckpt.body.h1(),
        ckpt.body.h2(),
        base.len(),
        ckpt.manifest.train_samples,
        ckpt.manifest.final_base_accuracy
    );
    Ok(())
}

/// The checkpoint plus the normalized few-shot pool it was split off from.
pub struct Prepared {
    pub checkpoint: Checkpoint,
    pub manifest: CheckpointManifest,
    pub data: Dataset,
    pub pool: Dataset,
}

pub fn prepare(c: &RunConfig) -> Result<Prepared> {
    c.validate()?;
    let (checkpoint, manifest) = checkpoint::load_checkpoint(&c.checkpoint)?;
    let data = prftpc::load_dataset(&c.data)?;
    let new: Vec<usize> = match &manifest.split {
        Some(split) => split
            .new
            .iter()
            .map(|n| {
                data.class_names.iter().position(|x| x == n).ok_or_else(|| {
                    LabError::Config(format!("class '{n}' from the checkpoint split is not in {}", c.data.display()))
                })
            })
            .collect::<Result<_>>()?,
        None => (0..data.num_classes())
            .filter(|&i| !manifest.pretrain.base_classes.contains(&data.class_names[i]))
            .collect(),
    };
    if let Some(h) = &manifest.data_hash {
        if *h != records::hash_file(&c.data)? {
            log::warn!("{} differs from the data the checkpoint was trained on", c.data.display());
        }
    }
    let pool = data.restrict(&new)?.normalized()?;
    Ok(Prepared {
        checkpoint,
        manifest,
        data,
        pool,
    })
}

fn regime_name(d: &Dataset) -> String {
    d.regime().map_or("custom", Regime::name).to_string()
}

struct Telemetry<'a> {
    command: &'a str,
    argv: &'a [String],
    config: &'a RunConfig,
    prepared: &'a Prepared,
    results: Vec<FewShotResult>,
    timing: TimingObserver,
    macs: runner::FineTuneCost,
    started: Instant,
}

impl Telemetry<'_> {
    fn write(self) -> Result<()> {
        let dir = self.config.telemetry_dir();
        create_dir(&dir)?;
        let epochs_path = dir.join("epochs.jsonl");
        records::write_jsonl(&epochs_path, &self.timing.records)?;
        let (inputs, input_hash) = records::hash_inputs(&[&self.config.data, &self.config.checkpoint])?;
        let mut macs = std::collections::BTreeMap::new();
        let (se, re) = self.config.paradigm_config().effective_epochs();
        if se > 0 {
            macs.insert(records::phase_name(Phase::Sft).to_string(), self.macs.sft_epoch);
        }
        if re > 0 {
            macs.insert(records::phase_name(Phase::Rft).to_string(), self.macs.rft_epoch);
        }
        let record = RunRecord {
            command: self.command.into(),
            argv: self.argv.to_vec(),
            config: serde_json::to_value(self.config)?,
            seed: self.config.seed(),
            inputs,
            input_hash,
            dataset_manifest: self.prepared.data.manifest.clone(),
            pretrain: Some(self.prepared.checkpoint.manifest.clone()),
            epochs_file: file_name(&epochs_path),
            epoch_count: self.timing.records.len(),
            results: self.results,
            phase_wall_s: self.timing.phase_wall,
            total_wall_s: self.started.elapsed().as_secs_f64(),
            macs_per_epoch: macs,
        };
        records::write_json(&dir.join("run_record.json"), &record)
    }
}

pub fn fewshot(c: &RunConfig, argv: &[String]) -> Result<()> {
    let started = Instant::now();
    let prepared = prepare(c)?;
    let cfg = c.paradigm_config();
    let shape = c.shape();
    let seed = c.seed();
    let run: EpisodeRun = runner::run_episodes(
        &prepared.checkpoint,
        &prepared.pool,
        shape,
        &cfg,
        seed,
        c.episodes,
        c.parallel,
        None,
    )?;
    let result = FewShotResult::from_accuracies(run.accuracies(), shape, seed, cfg.clone())?;
    let n_points = prepared.pool.clouds.first().map_or(0, |p| p.len());
    let macs = runner::fine_tune_cost(&prepared.checkpoint, &cfg, shape, n_points);
    let wall = started.elapsed().as_secs_f64();

    create_dir(&c.out_dir)?;
    records::write_json(&c.out_dir.join("fewshot.json"), &result)?;
    let rows: Vec<EpisodeRow> = run
        .outcomes
        .iter()
        .map(|o| EpisodeRow {
            episode_index: o.index,
            seed: o.seed,
            accuracy: o.accuracy,
        })
        .collect();
    tables::save_rows(&c.out_dir.join("episodes.csv"), &rows)?;
    let row = ResultRow {
        paradigm: cfg.kind.name().into(),
        a: cfg.a,
        b: cfg.b,
        epsilon: cfg.epsilon_clip,
        budget: cfg.budget_fraction,
        regime: regime_name(&prepared.data),
        n_way: shape.n_way,
        m_shot: shape.m_shot,
        q_size: shape.q_size,
        episodes: c.episodes,
        mean_acc: result.mean_accuracy,
        std_acc: result.std_accuracy,
        seed,
        wall_s: c.timing.then_some(wall),
        gmacs: macs.per_episode as f64 / 1e9,
    };
    tables::save_rows(&c.out_dir.join("results.csv"), std::slice::from_ref(&row))?;
    let svg = render_chart("few-shot accuracy", &[row.bar()])?;
    fs::write(c.out_dir.join("chart.svg"), svg).map_err(|e| LabError::io(c.out_dir.join("chart.svg"), e))?;

    println!(
        "{} {}-way {}-shot: {:.4} ± {:.4} over {} episodes",
        cfg.kind.name(),
        shape.n_way,
        shape.m_shot,
        result.mean_accuracy,
        result.std_accuracy,
        c.episodes
    );
    Telemetry {
        command: "fewshot",
        argv,
        config: c,
        prepared: &prepared,
        results: vec![result],
        timing: run.timing,
        macs,
        started,
    }
    .write()
}

pub fn ablate(c: &RunConfig, argv: &[String]) -> Result<()> {
    let started = Instant::now();
    if c.epsilons.is_empty() || c.rewards.is_empty() {
        return Err(LabError::Config("ablation grid is empty".into()));
    }
    let prepared = prepare(c)?;
    let shape = c.shape();
    let seed = c.seed();
    let base = c.paradigm_config();
    let mut cells = Vec::new();
    let mut timing = TimingObserver::default();
    for &eps in &c.epsilons {
        for &reward in &c.rewards {
            let cfg = pointrft_core::ParadigmConfig {
                a: reward.a,
                b: reward.b,
                epsilon_clip: eps,
                ..base.clone()
            };
            cfg.validate()?;
            let tag = format!("a={} b={} eps={}", reward.a, reward.b, eps);
            let run = runner::run_episodes(
                &prepared.checkpoint,
                &prepared.pool,
                shape,
                &cfg,
                seed,
                c.episodes,
                c.parallel,
                Some(tag),
            )?;
            let result = FewShotResult::from_accuracies(run.accuracies(), shape, seed, cfg)?;
            cells.push(SweepCell {
                reward,
                epsilon_clip: eps,
                result,
                first_episode_digest: run.outcomes[0].params_digest,
            });
            timing.absorb(run.timing);
        }
    }
    let rows: Vec<SweepRow> = cells
        .iter()
        .map(|cell| SweepRow {
            paradigm: base.kind.name().into(),
            a: cell.reward.a,
            b: cell.reward.b,
            epsilon: cell.epsilon_clip,
            budget: base.budget_fraction,
            n: shape.n_way,
            m: shape.m_shot,
            mean_acc: cell.result.mean_accuracy,
            std_acc: cell.result.std_accuracy,
            episodes: c.episodes,
            seed,
        })
        .collect();
    create_dir(&c.out_dir)?;
    tables::save_rows(&c.out_dir.join("sweep.csv"), &rows)?;
    records::write_json(&c.out_dir.join("sweep.json"), &cells)?;
    let bars: Vec<_> = rows.iter().map(SweepRow::bar).collect();
    let svg = render_chart("reward ablation", &bars)?;
    fs::write(c.out_dir.join("chart.svg"), svg).map_err(|e| LabError::io(c.out_dir.join("chart.svg"), e))?;
    print!("{}", Table::Sweep(rows).render_text());

    let n_points = prepared.pool.clouds.first().map_or(0, |p| p.len());
    let macs = runner::fine_tune_cost(&prepared.checkpoint, &base, shape, n_points);
    Telemetry {
        command: "ablate",
        argv,
        config: c,
        prepared: &prepared,
        results: cells.into_iter().map(|c| c.result).collect(),
        timing,
        macs,
        started,
    }
    .write()
}

pub fn report(a: &ReportArgs) -> Result<()> {
    let mut table: Option<Table> = None;
    for p in &a.inputs {
        let t = Table::load(p)?;
        match &mut table {
            None => table = Some(t),
            Some(acc) => acc.extend(t).map_err(|msg| LabError::Format { path: p.clone(), msg })?,
        }
    }
    let table = table.expect("clap requires at least one input");
    print!("{}", table.render_text());
    if let Some(out) = &a.out {
        ensure_parent(out)?;
        let f = fs::File::create(out).map_err(|e| LabError::io(out, e))?;
        table.write(std::io::BufWriter::new(f))?;
    }
    if let Some(path) = &a.chart {
        let svg = render_chart(&a.title, &table.bars())?;
        ensure_parent(path)?;
        fs::write(path, svg).map_err(|e| LabError::io(path, e))?;
    }
    Ok(())
}

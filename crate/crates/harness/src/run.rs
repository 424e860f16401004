//! Single runs: demonstrations, training or cloning, checkpoints, metrics
//! and evaluation, all under one output directory.
//!
//! Layout of a run directory:
//!
//! ```text
//! config.snapshot.json   resolved configuration (relaunchable)
//! demos.jsonl            demonstrations used
//! metrics.csv            one row per training iteration
//! policy.ckpt            final policy
//! ensemble/              final proximity ensemble (RL variants)
//! checkpoints/iter_N/    periodic policy and ensemble checkpoints
//! eval.csv               per-episode evaluation records
//! ```

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use grip_core::baselines::bc_train;
use grip_core::envs::{Action, ActionBound, ActionSpace, Environment, GridWorld, PointMaze, Step};
use grip_core::eval::{evaluate, EpisodeRecord, EvalReport};
use grip_core::experts::{generate_dataset, DemoDataset, EnvDescriptor};
use grip_core::ppo::{IterationMetrics, Policy, Trainer};
use grip_core::baselines::AlgoVariant;
use rand::Rng;

use crate::checkpoint::{load_policy, save_ensemble, save_policy};
use crate::config::ExperimentConfig;
use crate::dataset::{load_dataset, save_dataset};
use crate::error::{HarnessError, IoContext, Result};

pub const SNAPSHOT: &str = "config.snapshot.json";
pub const METRICS: &str = "metrics.csv";
pub const EVAL: &str = "eval.csv";
pub const POLICY: &str = "policy.ckpt";
pub const ENSEMBLE: &str = "ensemble";
pub const DEMOS: &str = "demos.jsonl";

/// Column order of `metrics.csv`; shared by every variant and never
/// reordered. New columns are only ever appended.
pub const METRICS_HEADER: [&str; 18] = [
    "iteration",
    "env_steps",
    "mean_episode_length",
    "success_rate",
    "proximity_loss_e",
    "proximity_loss_conf",
    "proximity_loss_unconf",
    "confident_fraction",
    "masked_fraction",
    "p_itr",
    "threshold",
    "anchor_count",
    "intermediate_count",
    "policy_loss",
    "value_loss",
    "entropy",
    "approx_kl",
    "clip_fraction",
];

pub const EVAL_HEADER: [&str; 4] = ["episode", "length", "success", "ooc_ratio"];

/// The environment a run trains and evaluates in.
#[derive(Clone, Debug)]
pub enum RunEnv {
    Grid(GridWorld),
    /// Agent actions are clipped per component to `clip` before stepping.
    Maze { maze: PointMaze, clip: Option<ActionBound> },
}

impl RunEnv {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(match &cfg.env {
            EnvDescriptor::Grid { .. } => RunEnv::Grid(cfg.env.grid()?),
            EnvDescriptor::Maze { .. } => RunEnv::Maze {
                maze: cfg.env.maze()?,
                clip: cfg.agent_bound.map(ActionBound::new).transpose()?,
            },
        })
    }
}

impl Environment for RunEnv {
    fn obs_dim(&self) -> usize {
        match self {
            RunEnv::Grid(g) => g.obs_dim(),
            RunEnv::Maze { maze, .. } => maze.obs_dim(),
        }
    }

    fn action_space(&self) -> ActionSpace {
        match self {
            RunEnv::Grid(g) => g.action_space(),
            RunEnv::Maze { maze, .. } => maze.action_space(),
        }
    }

    fn max_steps(&self) -> usize {
        match self {
            RunEnv::Grid(g) => g.max_steps(),
            RunEnv::Maze { maze, .. } => maze.max_steps(),
        }
    }

    fn steps(&self) -> usize {
        match self {
            RunEnv::Grid(g) => g.steps(),
            RunEnv::Maze { maze, .. } => maze.steps(),
        }
    }

    fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        match self {
            RunEnv::Grid(g) => g.reset(rng),
            RunEnv::Maze { maze, .. } => maze.reset(rng),
        }
    }

    fn step(&mut self, action: &Action) -> grip_core::Result<Step> {
        match (self, action) {
            (RunEnv::Grid(g), a) => g.step(a),
            (RunEnv::Maze { maze, clip: Some(b) }, Action::Continuous(a)) => {
                maze.step(&Action::Continuous(a.iter().map(|&x| b.clip(x)).collect()))
            }
            (RunEnv::Maze { maze, .. }, a) => maze.step(a),
        }
    }

    fn observation(&self) -> Vec<f64> {
        match self {
            RunEnv::Grid(g) => g.observation(),
            RunEnv::Maze { maze, .. } => maze.observation(),
        }
    }
}

fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

pub fn metrics_row(m: &IterationMetrics) -> [String; 18] {
    [
        m.iteration.to_string(),
        m.env_steps.to_string(),
        fmt_f64(m.mean_episode_length),
        fmt_f64(m.success_rate),
        fmt_f64(m.loss.expert),
        fmt_f64(m.loss.conf),
        fmt_f64(m.loss.unconf),
        fmt_f64(m.confident_fraction),
        fmt_f64(m.masked_fraction),
        fmt_f64(m.p_itr),
        fmt_f64(m.threshold),
        m.anchors.to_string(),
        m.intermediates.to_string(),
        fmt_f64(m.ppo.policy_loss),
        fmt_f64(m.ppo.value_loss),
        fmt_f64(m.ppo.entropy),
        fmt_f64(m.ppo.approx_kl),
        fmt_f64(m.ppo.clip_fraction),
    ]
}

/// Appends metric rows as training proceeds, flushing after each.
pub struct MetricsWriter {
    path: PathBuf,
    w: csv::Writer<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut w = csv::Writer::from_path(path).at(path)?;
        w.write_record(METRICS_HEADER).at(path)?;
        w.flush().at(path)?;
        Ok(Self { path: path.to_path_buf(), w })
    }

    pub fn push(&mut self, m: &IterationMetrics) -> Result<()> {
        self.w.write_record(metrics_row(m)).at(&self.path)?;
        self.w.flush().at(&self.path)
    }
}

/// Reads a metrics file as a header plus rows of raw fields.
pub fn read_metrics(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).at(path)?;
    let header = r.headers().at(path)?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()))
        .collect::<csv::Result<_>>()
        .at(path)?;
    Ok((header, rows))
}

pub fn write_eval(report: &EvalReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).at(path)?;
    w.write_record(EVAL_HEADER).at(path)?;
    for (i, e) in report.episodes.iter().enumerate() {
        w.write_record([i.to_string(), e.length.to_string(), e.success.to_string(), fmt_f64(e.ooc_ratio)]).at(path)?;
    }
    w.flush().at(path)
}

pub fn read_eval(path: &Path) -> Result<EvalReport> {
    let mut r = csv::Reader::from_path(path).at(path)?;
    let mut records = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.at(path)?;
        let parse_err = |message: String| HarnessError::Parse { path: path.to_path_buf(), line: i + 2, message };
        let field = |k: usize| rec.get(k).ok_or_else(|| parse_err(format!("missing column {}", EVAL_HEADER[k])));
        records.push(EpisodeRecord {
            length: field(1)?.parse().map_err(|e| parse_err(format!("length: {e}")))?,
            success: field(2)?.parse().map_err(|e| parse_err(format!("success: {e}")))?,
            ooc_ratio: field(3)?.parse().map_err(|e| parse_err(format!("ooc_ratio: {e}")))?,
        });
    }
    Ok(EvalReport::from_records(records)?)
}

/// Loads the configured dataset or generates a fresh one.
pub fn prepare_demos(cfg: &ExperimentConfig) -> Result<DemoDataset> {
    let demos = match &cfg.demos.path {
        Some(path) => load_dataset(path)?,
        None => generate_dataset(&cfg.env, cfg.expert_constraint, cfg.demo_count(), cfg.demo_seed(), &cfg.controller)?,
    };
    if demos.env != cfg.env || demos.constraint != cfg.expert_constraint {
        return Err(HarnessError::Config("dataset environment or constraint differs from the configuration".into()));
    }
    Ok(demos)
}

/// Outcome of one finished run.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub variant: AlgoVariant,
    pub seed: u64,
    pub report: EvalReport,
    pub metrics: Vec<IterationMetrics>,
    /// Expert-set MSE right after pretraining; NaN for BC.
    pub pretrain_mse: f64,
}

/// Trains `cfg.variant` and evaluates it, writing the full run layout into
/// `dir`.
pub fn run_variant(cfg: &ExperimentConfig, dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    fs::create_dir_all(dir).at(dir)?;
    let mut snapshot = cfg.clone();
    snapshot.output_dir = dir.to_path_buf();
    snapshot.save(&dir.join(SNAPSHOT))?;
    let demos = prepare_demos(cfg)?;
    save_dataset(&demos, &dir.join(DEMOS))?;
    let env = RunEnv::build(cfg)?;
    let mut metrics_out = MetricsWriter::create(&dir.join(METRICS))?;

    let (policy, metrics, pretrain_mse) = if cfg.variant.uses_rl() {
        let train = cfg.resolved_train()?;
        let mut trainer = Trainer::new(env.clone(), &demos, train.clone(), cfg.seed)?;
        let mut metrics = Vec::with_capacity(train.iterations);
        while trainer.iteration() < train.iterations {
            let m = trainer.iterate()?;
            metrics_out.push(&m)?;
            metrics.push(m);
            let done = trainer.iteration();
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < train.iterations {
                let ck = dir.join("checkpoints").join(format!("iter_{done}"));
                fs::create_dir_all(&ck).at(&ck)?;
                save_policy(trainer.policy(), &ck.join(POLICY))?;
                save_ensemble(trainer.ensemble(), &ck.join(ENSEMBLE))?;
            }
        }
        save_ensemble(trainer.ensemble(), &dir.join(ENSEMBLE))?;
        (trainer.policy().clone(), metrics, trainer.pretrain_mse())
    } else {
        let policy = bc_train(&demos, &cfg.bc, &cfg.train.policy, env.action_space(), cfg.seed)?;
        (policy, Vec::new(), f64::NAN)
    };
    save_policy(&policy, &dir.join(POLICY))?;
    let report = evaluate_policy(cfg, &policy)?;
    write_eval(&report, &dir.join(EVAL))?;
    Ok(RunSummary { dir: dir.to_path_buf(), variant: cfg.variant, seed: cfg.seed, report, metrics, pretrain_mse })
}

pub fn evaluate_policy(cfg: &ExperimentConfig, policy: &Policy) -> Result<EvalReport> {
    let mut env = RunEnv::build(cfg)?;
    Ok(evaluate(policy, &mut env, cfg.eval.episodes, cfg.eval_seed(), &cfg.expert_constraint)?)
}

/// Re-evaluates the stored policy of a finished run and rewrites `eval.csv`.
pub fn evaluate_run(dir: &Path) -> Result<EvalReport> {
    let snapshot = dir.join(SNAPSHOT);
    if !snapshot.exists() {
        return Err(HarnessError::MissingRun { path: dir.to_path_buf() });
    }
    let cfg = ExperimentConfig::load(&snapshot)?;
    let policy = load_policy(&dir.join(POLICY))?;
    let report = evaluate_policy(&cfg, &policy)?;
    write_eval(&report, &dir.join(EVAL))?;
    Ok(report)
}

//! Command-line front end.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use grip_core::baselines::AlgoVariant;
use grip_core::envs::ActionConstraint;
use grip_core::experts::generate_dataset;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::dataset::save_dataset;
use crate::error::{HarnessError, Result};
use crate::experiments::{masking_ablation, ooc_analysis, run_seeds, severity_sweep};
use crate::run::{evaluate_run, run_variant};

#[derive(Debug, Parser)]
#[command(name = "grip", version, about = "Goal-proximity reward interpolation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON experiment configuration; the grid preset when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<AlgoVariant>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate expert demonstrations into a JSON-lines file.
    GenDemos {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train and evaluate one variant, or several seeds of it.
    Train {
        #[command(flatten)]
        common: Common,
        /// Comma-separated seeds; overrides --seed and writes seed_<s>/ subdirectories.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Re-evaluate the policy stored in a run directory.
    Eval {
        /// Run directory.
        run: PathBuf,
    },
    /// Tabulate success and out-of-constraint ratios of evaluated runs.
    AnalyzeOoc {
        #[arg(long)]
        out: PathBuf,
        runs: Vec<PathBuf>,
    },
    /// Mean episode length per (expert bound, variant).
    SweepSeverity {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [0.7, 0.1, 0.05])]
        bounds: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [AlgoVariant::Grip, AlgoVariant::Proximity, AlgoVariant::Bc])]
        variants: Vec<AlgoVariant>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Annealed masking against always-trusted interpolation, paired by seed.
    AblateMasking {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [0, 1, 2, 3])]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

/// Error record printed on stderr when a command fails.
#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub error: &'static str,
    pub message: String,
}

impl From<&HarnessError> for ErrorRecord {
    fn from(e: &HarnessError) -> Self {
        Self { error: e.kind(), message: e.to_string() }
    }
}

fn resolve(common: &Common) -> Result<ExperimentConfig> {
    resolve_or(common, ExperimentConfig::grid())
}

fn resolve_or(common: &Common, preset: ExperimentConfig) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => preset,
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(variant) = common.variant {
        cfg.variant = variant;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs a parsed command; returns the lines to print on success.
pub fn execute(cli: Cli) -> Result<Vec<String>> {
    match cli.command {
        Command::GenDemos { common, count } => {
            let mut cfg = resolve(&common)?;
            if count.is_some() {
                cfg.demos.count = count;
            }
            let ds = generate_dataset(&cfg.env, cfg.expert_constraint, cfg.demo_count(), cfg.demo_seed(), &cfg.controller)?;
            let path = common.out.unwrap_or_else(|| PathBuf::from("demos.jsonl"));
            save_dataset(&ds, &path)?;
            Ok(vec![format!(
                "wrote {} trajectories (mean length {:.2}) to {}",
                ds.trajectories.len(),
                ds.mean_length(),
                path.display()
            )])
        }
        Command::Train { common, seeds, jobs } => {
            let cfg = resolve(&common)?;
            if seeds.is_empty() {
                let r = run_variant(&cfg, &cfg.output_dir)?;
                Ok(vec![report_line(&r.variant.to_string(), r.seed, &r.report)])
            } else {
                let runs = run_seeds(&cfg, &seeds, &cfg.output_dir, jobs)?;
                Ok(runs.iter().map(|r| report_line(&r.variant.to_string(), r.seed, &r.report)).collect())
            }
        }
        Command::Eval { run } => {
            let r = evaluate_run(&run)?;
            Ok(vec![format!(
                "{}: length {:.2}, success {:.3}, ooc {:.3}",
                run.display(),
                r.mean_length,
                r.success_rate,
                r.ooc_ratio
            )])
        }
        Command::AnalyzeOoc { out, runs } => {
            let rows = ooc_analysis(&runs, &out)?;
            Ok(rows
                .iter()
                .map(|r| format!("{} seed {}: success {:.3}, ooc {:.3}", r.variant, r.seed, r.success_rate, r.ooc_ratio))
                .collect())
        }
        Command::SweepSeverity { common, bounds, variants, jobs } => {
            let cfg = resolve_or(&common, ExperimentConfig::maze(0.1)?)?;
            if !matches!(cfg.expert_constraint, ActionConstraint::Bounded(_)) {
                return Err(HarnessError::Config("the severity sweep needs a maze configuration".into()));
            }
            let cells = severity_sweep(&cfg, &bounds, &variants, &cfg.output_dir, jobs)?;
            Ok(cells
                .iter()
                .map(|c| match &c.outcome {
                    Ok(r) => format!("b={} {}: length {:.2}, success {:.3}", c.bound, c.variant, r.report.mean_length, r.report.success_rate),
                    Err(e) => format!("b={} {}: failed: {e}", c.bound, c.variant),
                })
                .collect())
        }
        Command::AblateMasking { common, seeds, jobs } => {
            let cfg = resolve(&common)?;
            let pairs = masking_ablation(&cfg, &seeds, &cfg.output_dir, jobs)?;
            Ok(pairs
                .iter()
                .map(|p| {
                    format!(
                        "seed {}: masked success {:.3}, unmasked success {:.3}",
                        p.seed, p.masked.report.success_rate, p.unmasked.report.success_rate
                    )
                })
                .collect())
        }
    }
}

fn report_line(variant: &str, seed: u64, r: &grip_core::eval::EvalReport) -> String {
    format!("{variant} seed {seed}: length {:.2}, success {:.3}, ooc {:.3}", r.mean_length, r.success_rate, r.ooc_ratio)
}

#[cfg(test)]
mod tests {
    use std::fs;
    use std::path::Path;

    use super::*;
    use crate::dataset::load_dataset;
    use crate::run::{read_metrics, DEMOS, EVAL, METRICS, POLICY, SNAPSHOT};

    fn run(args: &[&str]) -> Result<Vec<String>> {
        let argv = std::iter::once("grip").chain(args.iter().copied());
        execute(Cli::try_parse_from(argv).expect("arguments parse"))
    }

    fn kind(args: &[&str]) -> &'static str {
        ErrorRecord::from(&run(args).unwrap_err()).error
    }

    fn tiny_grid(dir: &Path) -> String {
        let mut cfg = ExperimentConfig::grid();
        cfg.train.iterations = 3;
        cfg.train.rollout_size = 256;
        cfg.train.proximity.pretrain_min_batches = 20;
        cfg.bc.epochs = 5;
        cfg.eval.episodes = 3;
        let path = dir.join("tiny.json");
        cfg.save(&path).unwrap();
        path.to_str().unwrap().to_owned()
    }

    #[test]
    fn train_then_eval() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny_grid(tmp.path());
        let dir = tmp.path().join("run");
        let lines = run(&["train", "--config", &cfg, "--seed", "3", "--out", dir.to_str().unwrap()]).unwrap();
        assert!(lines[0].starts_with("grip seed 3: length"), "{lines:?}");
        for f in [SNAPSHOT, METRICS, EVAL, POLICY, DEMOS] {
            assert!(dir.join(f).is_file(), "missing {f}");
        }
        let (header, rows) = read_metrics(&dir.join(METRICS)).unwrap();
        assert_eq!(&header[..4], ["iteration", "env_steps", "mean_episode_length", "success_rate"]);
        assert_eq!(rows.len(), 3);
        let snapshot = ExperimentConfig::load(&dir.join(SNAPSHOT)).unwrap();
        assert_eq!((snapshot.seed, snapshot.output_dir), (3, dir.clone()));
        let eval = run(&["eval", dir.to_str().unwrap()]).unwrap();
        assert!(eval[0].ends_with(lines[0].split(": ").nth(1).unwrap()), "{eval:?} vs {lines:?}");
    }

    #[test]
    fn relaunch_from_snapshot_is_byte_identical() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny_grid(tmp.path());
        let a = tmp.path().join("a");
        run(&["train", "--config", &cfg, "--out", a.to_str().unwrap()]).unwrap();
        let b = tmp.path().join("b");
        run(&["train", "--config", a.join(SNAPSHOT).to_str().unwrap(), "--out", b.to_str().unwrap()]).unwrap();
        assert_eq!(fs::read(a.join(METRICS)).unwrap(), fs::read(b.join(METRICS)).unwrap());
        assert_eq!(fs::read(a.join(EVAL)).unwrap(), fs::read(b.join(EVAL)).unwrap());
    }

    #[test]
    fn cloned_seeds_stay_in_constraint() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny_grid(tmp.path());
        let out = tmp.path().join("bc");
        let lines = run(&["train", "--config", &cfg, "--variant", "bc", "--seeds", "0,1", "--out", out.to_str().unwrap()]).unwrap();
        assert_eq!(lines.len(), 2);
        assert!(out.join("summary.csv").is_file());
        let table = tmp.path().join("ooc.csv");
        let (r0, r1) = (out.join("seed_0"), out.join("seed_1"));
        let rows = run(&["analyze-ooc", "--out", table.to_str().unwrap(), r0.to_str().unwrap(), r1.to_str().unwrap()]).unwrap();
        assert!(rows.iter().all(|l| l.starts_with("bc seed") && l.ends_with("ooc 0.000")), "{rows:?}");
        assert_eq!(fs::read_to_string(&table).unwrap().lines().count(), 3);
    }

    #[test]
    fn gen_demos_round_trips() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("d.jsonl");
        let lines = run(&["gen-demos", "--count", "2", "--out", path.to_str().unwrap()]).unwrap();
        assert!(lines[0].starts_with("wrote 2 trajectories (mean length 14.00)"), "{lines:?}");
        assert_eq!(load_dataset(&path).unwrap().trajectories.len(), 2);
    }

    #[test]
    fn error_kinds() {
        let tmp = tempfile::tempdir().unwrap();
        let missing = tmp.path().join("nope.json");
        assert_eq!(kind(&["train", "--config", missing.to_str().unwrap()]), "io");
        let bad = tmp.path().join("bad.json");
        fs::write(&bad, "{\"env\": {\"kind\": \"grid\"}, \"bogus\": 1}").unwrap();
        assert_eq!(kind(&["train", "--config", bad.to_str().unwrap()]), "parse");
        assert_eq!(kind(&["eval", tmp.path().to_str().unwrap()]), "missing_run");
        let cfg = tiny_grid(tmp.path());
        assert_eq!(kind(&["sweep-severity", "--config", &cfg, "--bounds", "0.1"]), "config");
        let record = serde_json::to_value(ErrorRecord::from(&HarnessError::Config("x".into()))).unwrap();
        assert_eq!(record, serde_json::json!({"error": "config", "message": "invalid configuration: x"}));
    }
}

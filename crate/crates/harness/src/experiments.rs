//! Multi-run experiments: seed batches, the OOC-action table, the
//! constraint-severity sweep and the masking ablation.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use grip_core::baselines::AlgoVariant;
use grip_core::envs::{ActionBound, ActionConstraint};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, IoContext, Result};
use crate::run::{read_eval, run_variant, RunSummary, EVAL, SNAPSHOT};

/// Runs `jobs` closures on up to `parallelism` threads; results keep the
/// input order whatever the scheduling.
pub fn run_jobs<T: Send, F: Fn(usize) -> T + Sync>(jobs: usize, parallelism: usize, f: F) -> Vec<T> {
    let threads = parallelism.clamp(1, jobs.max(1));
    if threads == 1 {
        return (0..jobs).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..jobs).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs {
                    break;
                }
                let out = f(i);
                slots.lock().expect("job slot lock")[i] = Some(out);
            });
        }
    });
    slots.into_inner().expect("job slot lock").into_iter().map(|o| o.expect("every job ran")).collect()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs one configuration under several seeds in `out/seed_<s>/` and writes
/// `summary.csv` with per-seed rows and a mean/std aggregate.
pub fn run_seeds(base: &ExperimentConfig, seeds: &[u64], out: &Path, parallelism: usize) -> Result<Vec<RunSummary>> {
    fs::create_dir_all(out).at(out)?;
    let results = run_jobs(seeds.len(), parallelism, |i| {
        let mut cfg = base.clone();
        cfg.seed = seeds[i];
        run_variant(&cfg, &out.join(format!("seed_{}", seeds[i])))
    });
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;
    let path = out.join("summary.csv");
    let mut w = csv::Writer::from_path(&path).at(&path)?;
    w.write_record(["seed", "variant", "mean_episode_length", "success_rate", "ooc_ratio"]).at(&path)?;
    for r in &runs {
        w.write_record([
            r.seed.to_string(),
            r.variant.to_string(),
            r.report.mean_length.to_string(),
            r.report.success_rate.to_string(),
            r.report.ooc_ratio.to_string(),
        ])
        .at(&path)?;
    }
    for (label, pick) in [("mean", 0usize), ("std", 1)] {
        let col = |f: fn(&RunSummary) -> f64| {
            let (m, s) = mean_std(&runs.iter().map(f).collect::<Vec<_>>());
            [m, s][pick].to_string()
        };
        w.write_record([
            label.to_string(),
            base.variant.to_string(),
            col(|r| r.report.mean_length),
            col(|r| r.report.success_rate),
            col(|r| r.report.ooc_ratio),
        ])
        .at(&path)?;
    }
    w.flush().at(&path)?;
    Ok(runs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OocRow {
    pub variant: AlgoVariant,
    pub seed: u64,
    pub success_rate: f64,
    pub ooc_ratio: f64,
}

/// One row per evaluated run directory, read from its snapshot and
/// `eval.csv`; written to `table` as CSV.
pub fn ooc_analysis(runs: &[PathBuf], table: &Path) -> Result<Vec<OocRow>> {
    let mut rows = Vec::with_capacity(runs.len());
    for dir in runs {
        if !dir.join(SNAPSHOT).is_file() || !dir.join(EVAL).is_file() {
            return Err(HarnessError::MissingRun { path: dir.clone() });
        }
        let cfg = ExperimentConfig::load(&dir.join(SNAPSHOT))?;
        let report = read_eval(&dir.join(EVAL))?;
        rows.push(OocRow { variant: cfg.variant, seed: cfg.seed, success_rate: report.success_rate, ooc_ratio: report.ooc_ratio });
    }
    let mut w = csv::Writer::from_path(table).at(table)?;
    w.write_record(["variant", "seed", "success_rate", "ooc_ratio"]).at(table)?;
    for r in &rows {
        w.write_record([r.variant.to_string(), r.seed.to_string(), r.success_rate.to_string(), r.ooc_ratio.to_string()])
            .at(table)?;
    }
    w.flush().at(table)?;
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct SweepCell {
    pub bound: f64,
    pub variant: AlgoVariant,
    /// The run's evaluation, or the error message of a failed cell.
    pub outcome: std::result::Result<RunSummary, String>,
}

impl SweepCell {
    pub fn mean_length(&self) -> f64 {
        self.outcome.as_ref().map(|r| r.report.mean_length).unwrap_or(f64::NAN)
    }
}

/// Trains every variant against demonstrations regenerated for each expert
/// bound. Failed cells are recorded and the sweep continues. Writes
/// `sweep.csv` into `out`.
pub fn severity_sweep(
    base: &ExperimentConfig,
    bounds: &[f64],
    variants: &[AlgoVariant],
    out: &Path,
    parallelism: usize,
) -> Result<Vec<SweepCell>> {
    if bounds.is_empty() || variants.is_empty() {
        return Err(HarnessError::Config("a sweep needs at least one bound and one variant".into()));
    }
    let checked = bounds.iter().map(|&b| ActionBound::new(b)).collect::<grip_core::Result<Vec<_>>>()?;
    fs::create_dir_all(out).at(out)?;
    let cells: Vec<(ActionBound, AlgoVariant)> =
        checked.iter().flat_map(|&b| variants.iter().map(move |&v| (b, v))).collect();
    let results = run_jobs(cells.len(), parallelism, |i| {
        let (bound, variant) = cells[i];
        let mut cfg = base.clone();
        cfg.expert_constraint = ActionConstraint::Bounded(bound);
        cfg.variant = variant;
        cfg.demos.path = None;
        let dir = out.join(format!("b{}", bound.value())).join(variant.name());
        SweepCell { bound: bound.value(), variant, outcome: run_variant(&cfg, &dir).map_err(|e| e.to_string()) }
    });
    let path = out.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path).at(&path)?;
    w.write_record(["bound", "variant", "mean_episode_length", "success_rate", "status"]).at(&path)?;
    for c in &results {
        let (len, succ, status) = match &c.outcome {
            Ok(r) => (r.report.mean_length.to_string(), r.report.success_rate.to_string(), "ok".to_string()),
            Err(e) => (String::new(), String::new(), format!("failed: {e}")),
        };
        w.write_record([c.bound.to_string(), c.variant.to_string(), len, succ, status]).at(&path)?;
    }
    w.flush().at(&path)?;
    Ok(results)
}

#[derive(Clone, Debug)]
pub struct AblationPair {
    pub seed: u64,
    pub masked: RunSummary,
    pub unmasked: RunSummary,
}

/// GRIP with the annealed mask schedule against GRIP with interpolated
/// targets always trusted (`p = 0`), paired by seed under
/// `out/{masked,unmasked}/seed_<s>/`. Writes `ablation.csv`.
pub fn masking_ablation(base: &ExperimentConfig, seeds: &[u64], out: &Path, parallelism: usize) -> Result<Vec<AblationPair>> {
    if base.variant != AlgoVariant::Grip {
        return Err(HarnessError::Config("the masking ablation needs variant grip".into()));
    }
    fs::create_dir_all(out).at(out)?;
    let results = run_jobs(2 * seeds.len(), parallelism, |i| {
        let seed = seeds[i / 2];
        let mut cfg = base.clone();
        cfg.seed = seed;
        let arm = if i % 2 == 0 {
            cfg.train.confidence.constant_mask = None;
            "masked"
        } else {
            cfg.train.confidence.constant_mask = Some(0.0);
            "unmasked"
        };
        run_variant(&cfg, &out.join(arm).join(format!("seed_{seed}")))
    });
    let mut runs = results.into_iter();
    let mut pairs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let masked = runs.next().expect("masked arm")?;
        let unmasked = runs.next().expect("unmasked arm")?;
        pairs.push(AblationPair { seed, masked, unmasked });
    }
    let path = out.join("ablation.csv");
    let mut w = csv::Writer::from_path(&path).at(&path)?;
    w.write_record(["seed", "masked_success", "unmasked_success", "masked_length", "unmasked_length"]).at(&path)?;
    for p in &pairs {
        w.write_record([
            p.seed.to_string(),
            p.masked.report.success_rate.to_string(),
            p.unmasked.report.success_rate.to_string(),
            p.masked.report.mean_length.to_string(),
            p.unmasked.report.mean_length.to_string(),
        ])
        .at(&path)?;
    }
    w.flush().at(&path)?;
    Ok(pairs)
}

//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails. The grid and maze training checks run full
//! four-seed experiments and dominate the runtime.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use grip_core::baselines::AlgoVariant;
use grip_core::envs::{ActionConstraint, Environment};
use grip_core::experts::{generate_dataset, DemoDataset, EnvDescriptor};
use grip_core::grip::{annotate, build_batch, interpolate_target, MaskSchedule};
use grip_core::nnkit::{Activation, Mlp, MlpSpec, OutputSquash};
use grip_core::ppo::{Trainer, TrainConfig};
use grip_core::proximity::{expert_mse, pretrain, ExpertSet, PretrainOptions, ProximityEnsemble};
use grip_core::rng::seeded;
use grip_harness::run::{prepare_demos, run_variant, RunEnv, RunSummary, METRICS, SNAPSHOT};
use grip_harness::ExperimentConfig;
use rand::Rng;

const SEEDS: [u64; 4] = [0, 1, 2, 3];

struct Check {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Check {
    Check { pass, detail: detail.into() }
}

fn interpolation() -> Check {
    let mut ok = true;
    for t in 1..10 {
        ok &= (interpolate_target(3.0, 3.0, t, 10, 0.9).unwrap() - 0.729).abs() < 1e-9;
    }
    let mid = interpolate_target(10.0, 0.0, 5, 10, 0.95).unwrap();
    ok &= (mid - 0.95f64.powi(5)).abs() < 1e-9 && (mid - 0.77378).abs() < 1e-5;
    // Endpoint limits and constant endpoints hold exactly.
    for (rs, re) in [(10.0, 0.0), (3.5, 17.25), (0.0, 56.0)] {
        ok &= interpolate_target(rs, re, 0, 7, 0.95).unwrap() == 0.95f64.powf(rs);
        ok &= interpolate_target(rs, re, 7, 7, 0.95).unwrap() == 0.95f64.powf(re);
    }
    for t in 0..=9 {
        ok &= interpolate_target(4.25, 4.25, t, 9, 0.8).unwrap() == 0.8f64.powf(4.25);
    }
    check(ok, format!("midpoint {mid:.9}, constant 0.9^3 and endpoint identities"))
}

fn masking() -> Check {
    let grid = EnvDescriptor::open_grid(4);
    let demos = generate_dataset(&grid, ActionConstraint::Cardinal, 1, 0, &Default::default()).unwrap();
    let expert = ExpertSet::from_dataset(&demos, 0.95).unwrap();
    let len = 502;
    let states: Vec<Vec<f64>> = (0..len).map(|i| vec![i as f64]).collect();
    let mut var = vec![1.0; len];
    var[0] = 0.0;
    var[len - 1] = 0.0;
    let means: Vec<f64> = (0..len).map(|i| 0.1 + 0.8 * i as f64 / len as f64).collect();
    let notes = annotate(&means, &var, 0.5, 0.95, 50.0).unwrap();
    let horizon = 300;
    let mut ok = true;
    let mut parts = Vec::new();
    for (it, p) in [(0, 1.0), (horizon / 2, 0.5), (horizon, 0.0)] {
        let schedule = MaskSchedule::annealed(it, horizon);
        let rollouts = (0..25).map(|_| (states.as_slice(), notes.as_slice()));
        let (_, counts) = build_batch(&expert, rollouts, &schedule, 0.95, &mut seeded(it as u64)).unwrap();
        let n = counts.intermediates as f64;
        let frac = counts.masked_fraction();
        let sigma = (p * (1.0 - p) / n).sqrt();
        ok &= n >= 1e4 && schedule.p() == p && (frac - p).abs() <= 3.0 * sigma;
        parts.push(format!("it {it}: {frac:.4} (p {p}, n {n})"));
    }
    check(ok, parts.join(", "))
}

fn max_fd_error(spec: MlpSpec, x: &[f64], seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let u: Vec<f64> = (0..spec.output_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut mlp = Mlp::new(spec, &mut rng).unwrap();
    let analytic: Vec<f64> = mlp.gradient(x, &u, None, false).unwrap().iter().collect();
    let f = |m: &Mlp| -> f64 { m.predict(x).unwrap().iter().zip(&u).map(|(a, b)| a * b).sum() };
    let mut params = mlp.params_flat();
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let p0 = params[i];
        params[i] = p0 + 1e-5;
        mlp.set_params_flat(&params).unwrap();
        let up = f(&mlp);
        params[i] = p0 - 1e-5;
        mlp.set_params_flat(&params).unwrap();
        let down = f(&mlp);
        params[i] = p0;
        let numeric = (up - down) / 2e-5;
        worst = worst.max((analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-6));
    }
    worst
}

fn gradients() -> Check {
    let mut worst: f64 = 0.0;
    let mut seed = 0;
    for depth in 1..=3 {
        for act in [Activation::Relu, Activation::Tanh] {
            for squash in [OutputSquash::None, OutputSquash::Sigmoid] {
                seed += 1;
                let spec = MlpSpec::new(6, vec![16; depth], 2).with_activation(act).with_squash(squash);
                let x: Vec<f64> = (0..6).map(|i| (i as f64 * 0.7).sin()).collect();
                worst = worst.max(max_fd_error(spec, &x, seed));
            }
        }
    }
    // The shapes the presets train: actor, critic and proximity per environment.
    for preset in [ExperimentConfig::grid(), ExperimentConfig::maze(0.1).unwrap()] {
        let env = RunEnv::build(&preset).unwrap();
        let obs = env.observation();
        let t = &preset.train;
        let outs = match env.action_space() {
            grip_core::envs::ActionSpace::Discrete(n) => n,
            grip_core::envs::ActionSpace::Box(d) => d,
        };
        let n = env.obs_dim();
        for spec in [
            MlpSpec::new(n, t.policy.hidden.clone(), outs).with_activation(t.policy.activation),
            MlpSpec::new(n, t.policy.hidden.clone(), 1).with_activation(t.policy.activation),
            t.proximity.spec(n),
        ] {
            seed += 1;
            worst = worst.max(max_fd_error(spec, &obs, seed));
        }
    }
    check(worst < 1e-4, format!("max relative error {worst:.2e} over depths 1-3, relu/tanh and preset shapes"))
}

fn pretraining() -> Check {
    let mut ok = true;
    let mut parts = Vec::new();
    for preset in [ExperimentConfig::grid(), ExperimentConfig::maze(0.1).unwrap()] {
        let demos = prepare_demos(&preset).unwrap();
        let p = &preset.train.proximity;
        let expert = ExpertSet::from_dataset(&demos, p.delta).unwrap();
        let mut ens = ProximityEnsemble::new(p.spec(expert.states[0].len()), p.members, p.delta, 1).unwrap();
        pretrain(&mut ens, &expert, PretrainOptions::from(p), 2).unwrap();
        let mse = expert_mse(&ens, &expert).unwrap();
        let means: Vec<f64> = expert.states.iter().map(|s| ens.predict_mean(s).unwrap()).collect();
        let rho = spearman(&means, &expert.targets);
        ok &= mse < 1e-3 && rho > 0.9;
        parts.push(format!("{}: mse {mse:.2e}, spearman {rho:.4}", preset.env.id()));
    }
    check(ok, parts.join("; "))
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            out[k] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    out
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn grid_trainer(cfg: &ExperimentConfig, train: TrainConfig, demos: &DemoDataset) -> Trainer<RunEnv> {
    Trainer::new(RunEnv::build(cfg).unwrap(), demos, train, cfg.seed).unwrap()
}

fn telescoping() -> Check {
    let cfg = ExperimentConfig::grid();
    let demos = prepare_demos(&cfg).unwrap();
    let mut train = cfg.resolved_train().unwrap();
    train.rollout_size = 10_000;
    let mut trainer = grid_trainer(&cfg, train, &demos);
    let mut worst: f64 = 0.0;
    let mut trajectories = 0;
    for _ in 0..3 {
        trainer.iterate().unwrap();
        let ens = trainer.ensemble();
        let (buffer, episodes) = trainer.last_rollout().unwrap();
        let mut sums = vec![0.0; episodes.len()];
        for (t, r) in buffer.rewards.iter().enumerate() {
            sums[buffer.episode[t]] += r;
        }
        for (ep, s) in episodes.iter().zip(&sums) {
            let f0 = ens.predict_mean(&ep.states[0]).unwrap();
            let ft = ens.predict_mean(ep.states.last().unwrap()).unwrap();
            worst = worst.max((s - (ft - f0)).abs());
        }
        trajectories += episodes.len();
    }
    check(worst < 1e-9, format!("max deviation {worst:.1e} over {trajectories} trajectories in 3 batches of 1e4"))
}

fn variant_reduction() -> Check {
    let mut cfg = ExperimentConfig::grid();
    cfg.train.iterations = 10;
    let demos = prepare_demos(&cfg).unwrap();
    let mut grip = cfg.resolved_train().unwrap();
    grip.confidence.enabled = false;
    cfg.variant = AlgoVariant::Proximity;
    let prox = cfg.resolved_train().unwrap();
    let a = grid_trainer(&cfg, grip, &demos).train().unwrap();
    let b = grid_trainer(&cfg, prox, &demos).train().unwrap();
    let same = a.len() == b.len()
        && a.iter().zip(&b).all(|(x, y)| {
            x.loss.expert.to_bits() == y.loss.expert.to_bits()
                && x.loss.conf.to_bits() == y.loss.conf.to_bits()
                && x.loss.unconf.to_bits() == y.loss.unconf.to_bits()
        });
    check(same, format!("{} iterations compared bit for bit", a.len()))
}

fn reproducibility(root: &Path) -> Check {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, mut cfg) in [("grid", ExperimentConfig::grid()), ("maze", ExperimentConfig::maze(0.1).unwrap())] {
        cfg.train.iterations = 4;
        cfg.train.rollout_size = 1024;
        cfg.eval.episodes = 4;
        cfg.seed = 7;
        let first = root.join(format!("repro_{name}_a"));
        run_variant(&cfg, &first).unwrap();
        let snapshot = ExperimentConfig::load(&first.join(SNAPSHOT)).unwrap();
        let second = root.join(format!("repro_{name}_b"));
        run_variant(&snapshot, &second).unwrap();
        let a = fs::read(first.join(METRICS)).unwrap();
        let b = fs::read(second.join(METRICS)).unwrap();
        ok &= a == b && !a.is_empty();
        parts.push(format!("{name}: {} bytes {}", a.len(), if a == b { "identical" } else { "differ" }));
    }
    check(ok, parts.join(", "))
}

fn run(cfg: &ExperimentConfig, variant: AlgoVariant, seed: u64, dir: &Path) -> RunSummary {
    let mut c = cfg.clone();
    c.variant = variant;
    c.seed = seed;
    run_variant(&c, &dir.join(format!("{variant}_{seed}"))).unwrap()
}

struct GridRuns {
    grip: Vec<RunSummary>,
    prox: Vec<RunSummary>,
    bc: Vec<RunSummary>,
}

fn grid_runs(root: &Path) -> GridRuns {
    let cfg = ExperimentConfig::grid();
    let dir = root.join("grid");
    let each = |v| SEEDS.iter().map(|&s| run(&cfg, v, s, &dir)).collect();
    GridRuns { grip: each(AlgoVariant::Grip), prox: each(AlgoVariant::Proximity), bc: each(AlgoVariant::Bc) }
}

fn grid_shortcut(r: &GridRuns) -> Check {
    let mut passed = 0;
    let mut parts = Vec::new();
    for (i, seed) in SEEDS.iter().enumerate() {
        let (g, p, b) = (&r.grip[i].report, &r.prox[i].report, &r.bc[i].report);
        let ok = g.mean_length <= 9.0 && g.success_rate >= 0.95 && p.mean_length >= 13.0 && b.mean_length >= 13.0;
        passed += ok as usize;
        parts.push(format!(
            "seed {seed}: grip {:.1}/{:.2}, proximity {:.1}, bc {:.1}", g.mean_length, g.success_rate, p.mean_length, b.mean_length
        ));
    }
    check(passed >= 3, format!("{passed}/4 seeds; {}", parts.join("; ")))
}

fn ooc(r: &GridRuns) -> Check {
    let grip_ok = r.grip.iter().filter(|g| g.report.ooc_ratio >= 0.95 && g.report.success_rate >= 0.95).count();
    let bc_ok = r.bc.iter().filter(|b| b.report.ooc_ratio <= 0.05).count();
    let g: Vec<String> = r.grip.iter().map(|g| format!("{:.2}/{:.2}", g.report.ooc_ratio, g.report.success_rate)).collect();
    let b: Vec<String> = r.bc.iter().map(|b| format!("{:.2}", b.report.ooc_ratio)).collect();
    check(
        grip_ok >= 3 && bc_ok == r.bc.len(),
        format!("grip ooc/success [{}] ({grip_ok}/4 pass), bc ooc [{}]", g.join(", "), b.join(", ")),
    )
}

struct MazeRuns {
    grip: Vec<RunSummary>,
    prox: Vec<RunSummary>,
    unmasked: Vec<RunSummary>,
}

fn maze_runs(root: &Path) -> MazeRuns {
    let cfg = ExperimentConfig::maze(0.1).unwrap();
    let dir = root.join("maze");
    let mut unmasked_cfg = cfg.clone();
    unmasked_cfg.train.confidence.constant_mask = Some(0.0);
    MazeRuns {
        grip: SEEDS.iter().map(|&s| run(&cfg, AlgoVariant::Grip, s, &dir)).collect(),
        prox: SEEDS.iter().map(|&s| run(&cfg, AlgoVariant::Proximity, s, &dir)).collect(),
        unmasked: SEEDS.iter().map(|&s| run(&unmasked_cfg, AlgoVariant::Grip, s, &dir.join("unmasked"))).collect(),
    }
}

fn maze_improvement(r: &MazeRuns) -> Check {
    let mut passed = 0;
    let mut parts = Vec::new();
    for (i, seed) in SEEDS.iter().enumerate() {
        let (g, p) = (&r.grip[i].report, &r.prox[i].report);
        let ok = g.mean_length <= 0.9 * p.mean_length && g.success_rate >= 0.8 && p.success_rate >= 0.8;
        passed += ok as usize;
        parts.push(format!(
            "seed {seed}: grip {:.1}/{:.2} vs proximity {:.1}/{:.2}", g.mean_length, g.success_rate, p.mean_length, p.success_rate
        ));
    }
    check(passed >= 3, format!("{passed}/4 seeds; {}", parts.join("; ")))
}

fn masking_ablation(r: &MazeRuns) -> Check {
    let wins = r.grip.iter().zip(&r.unmasked).filter(|(m, u)| m.report.success_rate >= u.report.success_rate).count();
    let pairs: Vec<String> = r
        .grip
        .iter()
        .zip(&r.unmasked)
        .map(|(m, u)| format!("{:.2} vs {:.2}", m.report.success_rate, u.report.success_rate))
        .collect();
    check(wins >= 3, format!("{wins}/4 seeds masked >= unmasked; {}", pairs.join(", ")))
}

fn report(name: &str, started: Instant, c: Check, failures: &mut usize) {
    if !c.pass {
        *failures += 1;
    }
    println!("{} {name}: {} [{:.0}s]", if c.pass { "PASS" } else { "FAIL" }, c.detail, started.elapsed().as_secs_f64());
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let mut failures = 0;
    let t = Instant::now();
    report("interpolation targets", t, interpolation(), &mut failures);
    report("masking schedule", t, masking(), &mut failures);
    report("gradient correctness", t, gradients(), &mut failures);
    report("telescoping rewards", t, telescoping(), &mut failures);
    report("variant reduction", t, variant_reduction(), &mut failures);
    report("reproducibility", t, reproducibility(root), &mut failures);
    report("proximity pretraining fit", t, pretraining(), &mut failures);
    let grid = grid_runs(root);
    report("grid shortcut discovery", t, grid_shortcut(&grid), &mut failures);
    report("out-of-constraint behavior", t, ooc(&grid), &mut failures);
    let maze = maze_runs(root);
    report("maze relative improvement", t, maze_improvement(&maze), &mut failures);
    report("masking ablation direction", t, masking_ablation(&maze), &mut failures);
    println!("acceptance: {} of 11 criteria passed", 11 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

//! Goal-proximity ensemble: decayed expert targets, the expert and
//! zero-target squared losses, pretraining and mean/per-member prediction.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::experts::{DemoDataset, Trajectory};
use crate::nnkit::{sgd_step, Activation, Adam, Gradients, Mlp, MlpSpec, OutputSquash};
use crate::rng::{self, CoreRng};

/// Hyperparameters of the proximity function and its training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProximityConfig {
    pub members: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub dropout_rate: f64,
    /// Dropout active while fitting (pretraining and online updates).
    /// Predictions used for rewards and anchors never use dropout.
    pub loss_dropout: bool,
    /// Decay factor of the expert targets.
    pub delta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    /// Lower bound on minibatch updates per pretraining epoch, so tiny
    /// datasets (a single grid demo) still get fitted.
    pub pretrain_min_batches: usize,
    /// Minibatch updates per member in each training iteration.
    pub updates_per_iteration: usize,
}

impl Default for ProximityConfig {
    fn default() -> Self {
        Self {
            members: 5,
            hidden: vec![64, 64],
            activation: Activation::Relu,
            dropout_rate: 0.1,
            loss_dropout: false,
            delta: 0.95,
            learning_rate: 1e-3,
            batch_size: 32,
            pretrain_epochs: 2,
            pretrain_min_batches: 500,
            updates_per_iteration: 50,
        }
    }
}

impl ProximityConfig {
    pub fn spec(&self, obs_dim: usize) -> MlpSpec {
        MlpSpec::new(obs_dim, self.hidden.clone(), 1)
            .with_activation(self.activation)
            .with_dropout(self.dropout_rate)
            .with_squash(OutputSquash::Sigmoid)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.members >= 1, Config, "ensemble needs at least one member");
        ensure!(!self.hidden.is_empty(), Config, "proximity networks need at least one hidden layer");
        check_delta(self.delta)?;
        ensure!(self.learning_rate > 0.0, Config, "proximity learning rate must be positive");
        ensure!(self.batch_size >= 1, Config, "proximity batch size must be positive");
        Ok(())
    }
}

pub fn check_delta(delta: f64) -> Result<()> {
    ensure!(delta.is_finite() && delta > 0.0 && delta < 1.0, Config, "decay factor must lie in (0, 1), got {delta}");
    Ok(())
}

/// `M` independently initialized proximity networks sharing one spec.
#[derive(Clone, Debug, PartialEq)]
pub struct ProximityEnsemble {
    members: Vec<Mlp>,
    delta: f64,
    seeds: Vec<u64>,
}

/// Output of [`ProximityEnsemble::predict`].
#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    Mean(f64),
    PerMember(Vec<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredictMode {
    Mean,
    PerMember,
}

impl ProximityEnsemble {
    /// Member `k` is initialized from the stream derived from `(seed, k)`.
    pub fn new(spec: MlpSpec, members: usize, delta: f64, seed: u64) -> Result<Self> {
        ensure!(members >= 1, Config, "ensemble needs at least one member");
        check_delta(delta)?;
        let seeds: Vec<u64> = (0..members as u64).map(|k| rng::derive_seed(seed, k)).collect();
        let members = seeds.iter().map(|&s| Mlp::new(spec.clone(), &mut rng::seeded(s))).collect::<Result<_>>()?;
        Ok(Self { members, delta, seeds })
    }

    pub fn from_members(members: Vec<Mlp>, delta: f64, seeds: Vec<u64>) -> Result<Self> {
        ensure!(!members.is_empty(), Config, "ensemble needs at least one member");
        ensure!(seeds.len() == members.len(), ContractViolation, "one seed per member required");
        check_delta(delta)?;
        let spec = members[0].spec();
        ensure!(members.iter().all(|m| m.spec() == spec), ContractViolation, "ensemble members must share one architecture");
        Ok(Self { members, delta, seeds })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[Mlp] {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut [Mlp] {
        &mut self.members
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn spec(&self) -> &MlpSpec {
        self.members[0].spec()
    }

    /// Deterministic (dropout off) output of every member.
    pub fn member_outputs(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.members.iter().map(|m| Ok(m.predict(s)?[0])).collect()
    }

    /// Ensemble mean with dropout off; the value used for rewards.
    pub fn predict_mean(&self, s: &[f64]) -> Result<f64> {
        Ok(mean(&self.member_outputs(s)?))
    }

    pub fn predict<R: Rng + ?Sized>(&self, s: &[f64], mode: PredictMode, stochastic: bool, rng: &mut R) -> Result<Prediction> {
        let outputs: Vec<f64> =
            self.members.iter().map(|m| Ok(m.forward(s, stochastic, rng)?[0])).collect::<Result<_>>()?;
        Ok(match mode {
            PredictMode::Mean => Prediction::Mean(mean(&outputs)),
            PredictMode::PerMember => Prediction::PerMember(outputs),
        })
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Expert proximity targets `delta^(T - t)` for `t = 0..=T`.
pub fn expert_targets(traj: &Trajectory, delta: f64) -> Result<Vec<f64>> {
    check_delta(delta)?;
    ensure!(traj.success, ContractViolation, "expert targets need a goal-reaching trajectory");
    let horizon = traj.len();
    Ok((0..=horizon).map(|t| libm::pow(delta, (horizon - t) as f64)).collect())
}

/// Flattened expert states with their decayed targets.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertSet {
    pub states: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl ExpertSet {
    pub fn from_dataset(demos: &DemoDataset, delta: f64) -> Result<Self> {
        ensure!(!demos.trajectories.is_empty(), Config, "expert dataset is empty");
        let mut states = Vec::new();
        let mut targets = Vec::new();
        for traj in &demos.trajectories {
            targets.extend(expert_targets(traj, delta)?);
            states.extend(traj.states.iter().cloned());
        }
        Ok(Self { states, targets })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// A state paired with its regression target.
#[derive(Clone, Copy, Debug)]
pub struct Labeled<'a> {
    pub state: &'a [f64],
    pub target: f64,
}

/// Loss value (averaged over members) plus each member's gradient of its
/// own mean loss.
#[derive(Clone, Debug)]
pub struct EnsembleLoss {
    pub loss: f64,
    pub member_losses: Vec<f64>,
    pub grads: Vec<Gradients>,
}

/// Mean squared error of one member over `samples`; the gradient of that
/// mean times `weight` is added to `grads`.
pub(crate) fn member_mse<R: Rng + ?Sized>(
    member: &Mlp,
    samples: &[Labeled<'_>],
    stochastic: bool,
    rng: &mut R,
    weight: f64,
    grads: &mut Gradients,
) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let n = samples.len() as f64;
    let mut total = 0.0;
    for sample in samples {
        let trace = member.forward_traced(sample.state, stochastic, rng)?;
        let err = trace.output[0] - sample.target;
        total += err * err;
        member.backward(&trace, &[weight * 2.0 * err / n], grads)?;
    }
    Ok(total / n)
}

fn ensemble_mse<R: Rng + ?Sized>(
    ens: &ProximityEnsemble,
    samples: &[Labeled<'_>],
    stochastic: bool,
    rng: &mut R,
) -> Result<EnsembleLoss> {
    ensure!(!samples.is_empty(), ContractViolation, "loss batch is empty");
    let mut member_losses = Vec::with_capacity(ens.len());
    let mut grads = Vec::with_capacity(ens.len());
    for member in &ens.members {
        let mut g = Gradients::zeros(member.spec());
        member_losses.push(member_mse(member, samples, stochastic, rng, 1.0, &mut g)?);
        grads.push(g);
    }
    let loss = mean(&member_losses);
    if !loss.is_finite() {
        return Err(Error::NonFinite { stage: "proximity loss" });
    }
    Ok(EnsembleLoss { loss, member_losses, grads })
}

/// Expert supervision loss: squared error to the decayed targets.
pub fn expert_loss<R: Rng + ?Sized>(
    ens: &ProximityEnsemble,
    batch: &[Labeled<'_>],
    stochastic: bool,
    rng: &mut R,
) -> Result<EnsembleLoss> {
    ensemble_mse(ens, batch, stochastic, rng)
}

/// Online regularization loss: squared prediction on rollout states.
pub fn zero_loss<R: Rng + ?Sized>(
    ens: &ProximityEnsemble,
    states: &[&[f64]],
    stochastic: bool,
    rng: &mut R,
) -> Result<EnsembleLoss> {
    let samples: Vec<Labeled<'_>> = states.iter().map(|s| Labeled { state: s, target: 0.0 }).collect();
    ensemble_mse(ens, &samples, stochastic, rng)
}

/// Pretraining options; see [`ProximityConfig`] for the defaults.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PretrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub min_batches_per_epoch: usize,
    pub stochastic: bool,
}

impl From<&ProximityConfig> for PretrainOptions {
    fn from(cfg: &ProximityConfig) -> Self {
        Self {
            epochs: cfg.pretrain_epochs,
            batch_size: cfg.batch_size,
            learning_rate: cfg.learning_rate,
            min_batches_per_epoch: cfg.pretrain_min_batches,
            stochastic: cfg.loss_dropout,
        }
    }
}

/// Fits every member to the expert targets alone. Member `k` shuffles and
/// samples dropout from the stream derived from `(seed, k)`.
///
/// An epoch is one pass over the shuffled expert states, repeated until at
/// least `min_batches_per_epoch` minibatches were taken. Returns the final
/// deterministic mean squared error on the expert states.
pub fn pretrain(ens: &mut ProximityEnsemble, expert: &ExpertSet, opts: PretrainOptions, seed: u64) -> Result<f64> {
    ensure!(!expert.is_empty(), Config, "cannot pretrain on an empty expert set");
    ensure!(opts.batch_size >= 1, Config, "batch size must be positive");
    let n = expert.len();
    let passes_batches = n.div_ceil(opts.batch_size);
    let batches_per_epoch = passes_batches.max(opts.min_batches_per_epoch);
    for (k, member) in ens.members.iter_mut().enumerate() {
        let mut stream: CoreRng = rng::derived(seed, k as u64);
        let mut opt = Adam::for_mlp(member);
        let mut order: Vec<usize> = (0..n).collect();
        let mut cursor = n;
        for _ in 0..opts.epochs {
            for _ in 0..batches_per_epoch {
                let mut batch = Vec::with_capacity(opts.batch_size);
                while batch.len() < opts.batch_size.min(n) {
                    if cursor == n {
                        rng::shuffle(&mut order, &mut stream);
                        cursor = 0;
                    }
                    let i = order[cursor];
                    cursor += 1;
                    batch.push(Labeled { state: &expert.states[i], target: expert.targets[i] });
                }
                let mut g = Gradients::zeros(member.spec());
                let loss = member_mse(member, &batch, opts.stochastic, &mut stream, 1.0, &mut g)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite { stage: "proximity pretraining" });
                }
                sgd_step(member, &g, &mut opt, opts.learning_rate)?;
            }
        }
    }
    expert_mse(ens, expert)
}

/// Deterministic mean squared error of the ensemble mean on expert states.
pub fn expert_mse(ens: &ProximityEnsemble, expert: &ExpertSet) -> Result<f64> {
    let mut total = 0.0;
    for (s, t) in expert.states.iter().zip(&expert.targets) {
        let e = ens.predict_mean(s)? - t;
        total += e * e;
    }
    Ok(total / expert.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::ActionConstraint;
    use crate::experts::{generate_dataset, EnvDescriptor, MazeControllerConfig};
    use crate::nnkit::Layer;
    use crate::rng::seeded;

    fn constant_member(dim: usize, logit: f64) -> Mlp {
        let spec = MlpSpec::new(dim, vec![], 1).with_squash(OutputSquash::Sigmoid);
        Mlp::from_layers(spec, vec![Layer { in_dim: dim, out_dim: 1, weights: vec![0.0; dim], bias: vec![logit] }]).unwrap()
    }

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    fn traj(len: usize) -> Trajectory {
        Trajectory { states: (0..=len).map(|i| vec![i as f64]).collect(), actions: None, success: true, seed: 0 }
    }

    #[test]
    fn targets_decay_from_goal() {
        let t = expert_targets(&traj(20), 0.95).unwrap();
        assert_eq!(t[20], 1.0);
        assert!((t[10] - 0.598_736_939_238_378_1).abs() < 1e-12);
        assert!((t[0] - 0.358_485_922_408_541_9).abs() < 1e-12);
        assert!(t.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn targets_reject_bad_delta_and_failures() {
        assert!(matches!(expert_targets(&traj(3), 1.0), Err(Error::Config(_))));
        let mut failed = traj(3);
        failed.success = false;
        assert!(expert_targets(&failed, 0.9).is_err());
    }

    #[test]
    fn mean_of_identical_members() {
        let spec = MlpSpec::new(3, vec![4], 1).with_squash(OutputSquash::Sigmoid);
        let m = Mlp::new(spec, &mut seeded(5)).unwrap();
        let ens = ProximityEnsemble::from_members(vec![m.clone(), m.clone(), m.clone()], 0.9, vec![0, 1, 2]).unwrap();
        let s = [0.3, -0.1, 0.8];
        assert_eq!(ens.predict_mean(&s).unwrap(), m.predict(&s).unwrap()[0]);
    }

    #[test]
    fn two_member_mean() {
        let ens = ProximityEnsemble::from_members(vec![constant_member(1, logit(0.2)), constant_member(1, logit(0.6))], 0.9, vec![0, 1])
            .unwrap();
        assert!((ens.predict_mean(&[0.0]).unwrap() - 0.4).abs() < 1e-12);
        let Prediction::PerMember(v) = ens.predict(&[0.0], PredictMode::PerMember, false, &mut seeded(0)).unwrap() else {
            panic!("per-member prediction expected")
        };
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn fresh_ensemble_in_unit_interval() {
        let cfg = ProximityConfig::default();
        let ens = ProximityEnsemble::new(cfg.spec(6), 5, 0.95, 1).unwrap();
        let mut r = seeded(2);
        for _ in 0..100 {
            let s: Vec<f64> = (0..6).map(|_| r.gen_range(-5.0..5.0)).collect();
            let p = ens.predict_mean(&s).unwrap();
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn expert_loss_cases() {
        let ens = ProximityEnsemble::from_members(vec![constant_member(1, 0.0)], 0.9, vec![0]).unwrap();
        let s = [1.0];
        let l = expert_loss(&ens, &[Labeled { state: &s, target: 1.0 }], false, &mut seeded(0)).unwrap();
        assert!((l.loss - 0.25).abs() < 1e-15);
        let l0 = expert_loss(&ens, &[Labeled { state: &s, target: 0.5 }], false, &mut seeded(0)).unwrap();
        assert_eq!(l0.loss, 0.0);
        assert!(l0.grads[0].iter().all(|g| g == 0.0));
    }

    #[test]
    fn zero_loss_cases() {
        let a = constant_member(1, logit(0.1));
        let ens = ProximityEnsemble::from_members(vec![a], 0.9, vec![0]).unwrap();
        let (s1, s2) = ([0.0], [1.0]);
        let single = zero_loss(&ens, &[&s1], false, &mut seeded(0)).unwrap();
        let p = ens.predict_mean(&s1).unwrap();
        assert!((single.loss - p * p).abs() < 1e-15);
        // Input-dependent member: outputs 0.1 and 0.3.
        let spec = MlpSpec::new(1, vec![], 1).with_squash(OutputSquash::Sigmoid);
        let w = logit(0.3) - logit(0.1);
        let m = Mlp::from_layers(spec, vec![Layer { in_dim: 1, out_dim: 1, weights: vec![w], bias: vec![logit(0.1)] }]).unwrap();
        let ens = ProximityEnsemble::from_members(vec![m], 0.9, vec![0]).unwrap();
        let two = zero_loss(&ens, &[&s1, &s2], false, &mut seeded(0)).unwrap();
        assert!((two.loss - 0.05).abs() < 1e-12);
    }

    #[test]
    fn random_batch_matches_scalar_recomputation() {
        let cfg = ProximityConfig::default();
        let ens = ProximityEnsemble::new(cfg.spec(4), 3, 0.95, 8).unwrap();
        let mut r = seeded(3);
        let states: Vec<Vec<f64>> = (0..17).map(|_| (0..4).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
        let targets: Vec<f64> = (0..17).map(|_| r.gen_range(0.0..1.0)).collect();
        let batch: Vec<Labeled<'_>> = states.iter().zip(&targets).map(|(s, &t)| Labeled { state: s, target: t }).collect();
        let got = expert_loss(&ens, &batch, false, &mut seeded(0)).unwrap().loss;
        let mut oracle = 0.0;
        for m in ens.members() {
            let mut acc = 0.0;
            for (s, t) in states.iter().zip(&targets) {
                let d = m.predict(s).unwrap()[0] - t;
                acc += d * d;
            }
            oracle += acc / states.len() as f64;
        }
        oracle /= ens.len() as f64;
        assert!((got - oracle).abs() < 1e-12);
        let refs: Vec<&[f64]> = states.iter().map(|s| s.as_slice()).collect();
        let z = zero_loss(&ens, &refs, false, &mut seeded(0)).unwrap().loss;
        let zo = ens.members().iter().map(|m| refs.iter().map(|s| m.predict(s).unwrap()[0].powi(2)).sum::<f64>() / 17.0).sum::<f64>() / 3.0;
        assert!((z - zo).abs() < 1e-12);
    }

    fn grid_expert() -> ExpertSet {
        let ds = generate_dataset(&EnvDescriptor::open_grid(8), ActionConstraint::Cardinal, 1, 0, &MazeControllerConfig::default()).unwrap();
        ExpertSet::from_dataset(&ds, 0.95).unwrap()
    }

    #[test]
    fn zero_epochs_leave_parameters() {
        let expert = grid_expert();
        let cfg = ProximityConfig::default();
        let mut ens = ProximityEnsemble::new(cfg.spec(256), 2, 0.95, 1).unwrap();
        let before = ens.clone();
        let opts = PretrainOptions { epochs: 0, ..PretrainOptions::from(&cfg) };
        pretrain(&mut ens, &expert, opts, 3).unwrap();
        assert_eq!(ens, before);
    }

    #[test]
    fn pretraining_fits_the_grid_demo_deterministically() {
        let expert = grid_expert();
        let cfg = ProximityConfig::default();
        let mut a = ProximityEnsemble::new(cfg.spec(256), 5, 0.95, 1).unwrap();
        let mut b = a.clone();
        let mse = pretrain(&mut a, &expert, PretrainOptions::from(&cfg), 3).unwrap();
        pretrain(&mut b, &expert, PretrainOptions::from(&cfg), 3).unwrap();
        assert!(mse < 1e-3, "mse {mse}");
        assert_eq!(a, b);
    }
}

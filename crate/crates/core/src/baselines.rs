//! Comparison learners: behavioral cloning and the flag settings that turn
//! the training loop into the plain proximity learners.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::envs::{Action, ActionSpace};
use crate::error::{ensure, Error, Result};
use crate::experts::DemoDataset;
use crate::nnkit::{sgd_step, Adam, Gradients};
use crate::ppo::{Policy, PolicyConfig, TrainConfig};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgoVariant {
    Grip,
    /// Expert/zero-target proximity learning without confidence or dropout.
    Proximity,
    /// As `Proximity` but with dropout active while fitting.
    ProximityDrop,
    Bc,
}

impl AlgoVariant {
    pub const ALL: [AlgoVariant; 4] = [AlgoVariant::Grip, AlgoVariant::Proximity, AlgoVariant::ProximityDrop, AlgoVariant::Bc];

    pub fn name(self) -> &'static str {
        match self {
            AlgoVariant::Grip => "grip",
            AlgoVariant::Proximity => "proximity",
            AlgoVariant::ProximityDrop => "proximity_drop",
            AlgoVariant::Bc => "bc",
        }
    }

    pub fn uses_rl(self) -> bool {
        self != AlgoVariant::Bc
    }

    /// Sets the variant's feature flags on a training configuration.
    pub fn configure(self, cfg: &mut TrainConfig) -> Result<()> {
        match self {
            AlgoVariant::Grip => cfg.confidence.enabled = true,
            AlgoVariant::Proximity => {
                cfg.confidence.enabled = false;
                cfg.proximity.loss_dropout = false;
            }
            AlgoVariant::ProximityDrop => {
                cfg.confidence.enabled = false;
                cfg.proximity.loss_dropout = true;
                ensure!(cfg.proximity.dropout_rate > 0.0, Config, "proximity_drop needs a positive dropout rate");
            }
            AlgoVariant::Bc => {
                return Err(Error::Config("bc does not use the reinforcement learning loop".into()));
            }
        }
        Ok(())
    }
}

impl fmt::Display for AlgoVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AlgoVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(alloc::format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BcConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Lower bound on minibatch updates per epoch for tiny datasets.
    pub min_batches_per_epoch: usize,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self { epochs: 100, batch_size: 32, learning_rate: 1e-3, min_batches_per_epoch: 20 }
    }
}

/// Supervised fit of the actor to the demonstrated actions: cross-entropy
/// for discrete actions, squared error of the squashed mean otherwise.
pub fn bc_train(
    demos: &DemoDataset,
    cfg: &BcConfig,
    policy_cfg: &PolicyConfig,
    space: ActionSpace,
    seed: u64,
) -> Result<Policy> {
    ensure!(cfg.batch_size >= 1, Config, "batch size must be positive");
    let mut pairs: Vec<(&[f64], &Action)> = Vec::new();
    for traj in &demos.trajectories {
        let actions = traj
            .actions
            .as_ref()
            .ok_or_else(|| Error::Unsupported("behavioral cloning needs demonstrations with actions".into()))?;
        pairs.extend(traj.states.iter().map(Vec::as_slice).zip(actions));
    }
    ensure!(!pairs.is_empty(), Config, "demonstration set has no transitions");
    let obs_dim = pairs[0].0.len();
    let mut stream = rng::seeded(seed);
    let mut policy = Policy::new(obs_dim, space, policy_cfg, &mut stream)?;
    let mut opt = Adam::for_mlp(policy.actor());
    let n = pairs.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size).max(cfg.min_batches_per_epoch);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut chunk = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.epochs * batches_per_epoch {
        chunk.clear();
        while chunk.len() < cfg.batch_size.min(n) {
            if cursor == n {
                rng::shuffle(&mut order, &mut stream);
                cursor = 0;
            }
            chunk.push(order[cursor]);
            cursor += 1;
        }
        let inv = 1.0 / chunk.len() as f64;
        let (actor, _, _) = policy.parts_mut();
        let mut g = Gradients::zeros(actor.spec());
        let mut loss = 0.0;
        for &i in &chunk {
            let (obs, action) = pairs[i];
            let trace = actor.forward_traced(obs, false, &mut stream)?;
            let upstream: Vec<f64> = match (space, action) {
                (ActionSpace::Discrete(_), Action::Discrete(a)) => {
                    ensure!(*a < trace.output.len(), ContractViolation, "demonstrated action {a} out of range");
                    let max = trace.output.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = trace.output.iter().map(|l| libm::exp(l - max)).sum();
                    loss -= (trace.output[*a] - max - libm::log(z)) * inv;
                    trace
                        .output
                        .iter()
                        .enumerate()
                        .map(|(j, l)| (libm::exp(l - max) / z - if j == *a { 1.0 } else { 0.0 }) * inv)
                        .collect()
                }
                (ActionSpace::Box(d), Action::Continuous(a)) => {
                    ensure!(a.len() == d, ContractViolation, "demonstrated action has {} dims, expected {d}", a.len());
                    trace
                        .output
                        .iter()
                        .zip(a)
                        .map(|(m, target)| {
                            let y = libm::tanh(*m);
                            loss += (y - target) * (y - target) * inv;
                            2.0 * (y - target) * (1.0 - y * y) * inv
                        })
                        .collect()
                }
                _ => return Err(Error::Config("demonstrated actions do not match the action space".into())),
            };
            actor.backward(&trace, &upstream, &mut g)?;
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite { stage: "behavioral cloning" });
        }
        sgd_step(actor, &g, &mut opt, cfg.learning_rate)?;
    }
    Ok(policy)
}

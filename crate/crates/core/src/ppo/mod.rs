//! Clipped-surrogate policy optimization on proximity rewards, and the
//! outer training loop that interleaves it with proximity updates.

mod buffer;
mod policy;
mod trainer;
mod update;

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

pub use buffer::{collect_rollouts, collect_with_rewards, Episode, RolloutBuffer};
pub use policy::{Dist, Head, Policy, PolicyConfig, Sample, LOG_STD_MAX, LOG_STD_MIN};
pub use trainer::{IterationMetrics, TrainConfig, Trainer};
pub use update::{ppo_update, PolicyOptimizer, UpdateStats};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub learning_rate: f64,
    pub entropy_coef: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub clip: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            entropy_coef: 0.01,
            epochs: 4,
            minibatches: 4,
            clip: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            value_coef: 0.5,
            max_grad_norm: 0.5,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.clip > 0.0 && self.clip < 1.0, Config, "clip range must lie in (0, 1), got {}", self.clip);
        ensure!((0.0..=1.0).contains(&self.gamma), Config, "discount must lie in [0, 1]");
        ensure!((0.0..=1.0).contains(&self.gae_lambda), Config, "GAE lambda must lie in [0, 1]");
        ensure!(self.learning_rate > 0.0, Config, "policy learning rate must be positive");
        ensure!(self.minibatches >= 1, Config, "minibatch count must be positive");
        ensure!(self.max_grad_norm > 0.0, Config, "gradient-norm clip must be positive");
        Ok(())
    }
}

/// Generalized advantage estimation with `values` one longer than
/// `rewards`; `dones[t]` zeroes the bootstrap and cuts the recursion.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    ensure!(values.len() == n + 1 && dones.len() == n, ContractViolation, "gae inputs have misaligned lengths");
    let next: Vec<f64> = (0..n).map(|t| if dones[t] { 0.0 } else { values[t + 1] }).collect();
    Ok(gae_bootstrapped(rewards, &values[..n], &next, dones, gamma, lambda))
}

/// Backward recursion with an explicit next-state value per step; `cuts`
/// marks episode boundaries where the recursion restarts.
pub fn gae_bootstrapped(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    cuts: &[bool],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        if cuts[t] {
            running = 0.0;
        }
        let delta = rewards[t] + gamma * next_values[t] - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Zero mean, unit (population) standard deviation.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = libm::sqrt(var);
    for a in adv.iter_mut() {
        *a = if std > 1e-12 { (*a - mean) / std } else { *a - mean };
    }
}

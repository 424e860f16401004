use alloc::vec::Vec;

use rand::Rng;

use super::policy::Policy;
use crate::envs::{Action, Environment};
use crate::error::{ensure, Result};
use crate::proximity::ProximityEnsemble;

/// Rollout states of one episode. `first` is the buffer index of its first
/// transition; `complete` is false for the episode cut by the budget.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub states: Vec<Vec<f64>>,
    pub success: bool,
    pub complete: bool,
    pub first: usize,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.states.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// On-policy transitions. `cuts[t]` marks the last transition of an
/// episode (or of the buffer); `bootstrap[t]` is the value used for the
/// next state at a cut: zero after success, the critic estimate otherwise.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutBuffer {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub raw: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub cuts: Vec<bool>,
    pub bootstrap: Vec<f64>,
    pub episode: Vec<usize>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    /// Rewards from per-episode proximity means: `means[e][k]` is the
    /// ensemble mean at state `k` of episode `e`.
    pub fn relabel(&mut self, episodes: &[Episode], means: &[Vec<f64>]) -> Result<()> {
        ensure!(means.len() == episodes.len(), ContractViolation, "one mean vector per episode required");
        for (e, (ep, m)) in episodes.iter().zip(means).enumerate() {
            ensure!(m.len() == ep.states.len(), ContractViolation, "episode {e} has a mean vector of the wrong length");
        }
        for t in 0..self.len() {
            let e = self.episode[t];
            let k = t - episodes[e].first;
            self.rewards[t] = means[e][k + 1] - means[e][k];
        }
        Ok(())
    }

    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64) {
        let n = self.len();
        let next: Vec<f64> =
            (0..n).map(|t| if self.cuts[t] { self.bootstrap[t] } else { self.values[t + 1] }).collect();
        let (adv, ret) = super::gae_bootstrapped(&self.rewards, &self.values, &next, &self.cuts, gamma, lambda);
        self.advantages = adv;
        self.returns = ret;
    }
}

/// Steps `env` with sampled actions for exactly `budget` transitions,
/// starting a fresh episode first. Rewards are left at zero.
pub fn collect_rollouts<E: Environment, R: Rng + ?Sized>(
    policy: &Policy,
    env: &mut E,
    budget: usize,
    rng: &mut R,
) -> Result<(RolloutBuffer, Vec<Episode>)> {
    ensure!(policy.obs_dim() == env.obs_dim(), ContractViolation, "policy and environment observation sizes differ");
    let mut buf = RolloutBuffer::default();
    let mut episodes = Vec::new();
    if budget == 0 {
        return Ok((buf, episodes));
    }
    let mut obs = env.reset(rng);
    let mut current = Episode { states: alloc::vec![obs.clone()], success: false, complete: false, first: 0 };
    for t in 0..budget {
        let sample = policy.sample(&obs, rng)?;
        let step = env.step(&sample.action)?;
        buf.obs.push(core::mem::take(&mut obs));
        buf.actions.push(sample.action);
        buf.raw.push(sample.raw);
        buf.log_probs.push(sample.log_prob);
        buf.values.push(sample.value);
        buf.rewards.push(0.0);
        buf.episode.push(episodes.len());
        buf.dones.push(step.success);
        current.states.push(step.observation.clone());
        let last = t + 1 == budget;
        if step.done || last {
            buf.cuts.push(true);
            buf.bootstrap.push(if step.success { 0.0 } else { policy.value(&step.observation)? });
            current.success = step.success;
            current.complete = step.done;
            let finished = core::mem::replace(
                &mut current,
                Episode { states: Vec::new(), success: false, complete: false, first: t + 1 },
            );
            episodes.push(finished);
            if !last {
                obs = env.reset(rng);
                current.states.push(obs.clone());
            }
        } else {
            buf.cuts.push(false);
            buf.bootstrap.push(0.0);
            obs = step.observation;
        }
    }
    Ok((buf, episodes))
}

/// [`collect_rollouts`] with rewards filled from the ensemble mean.
pub fn collect_with_rewards<E: Environment, R: Rng + ?Sized>(
    policy: &Policy,
    env: &mut E,
    ens: &ProximityEnsemble,
    budget: usize,
    rng: &mut R,
) -> Result<(RolloutBuffer, Vec<Episode>)> {
    let (mut buf, episodes) = collect_rollouts(policy, env, budget, rng)?;
    let means: Vec<Vec<f64>> = episodes
        .iter()
        .map(|ep| ep.states.iter().map(|s| ens.predict_mean(s)).collect::<Result<Vec<f64>>>())
        .collect::<Result<_>>()?;
    buf.relabel(&episodes, &means)?;
    Ok((buf, episodes))
}

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{Action, ActionSpace};
use crate::error::{ensure, Error, Result};
use crate::nnkit::{Activation, Mlp, MlpSpec};
use crate::rng::standard_normal;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub init_log_std: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { hidden: vec![64, 64], activation: Activation::Tanh, init_log_std: -0.5 }
    }
}

/// Actor head parameters beyond the actor network.
#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    Categorical { actions: usize },
    /// Tanh-squashed Gaussian with a state-independent log-std.
    Gaussian { log_std: Vec<f64> },
}

/// Action distribution at one state.
#[derive(Clone, Debug, PartialEq)]
pub enum Dist {
    Categorical { log_probs: Vec<f64> },
    Gaussian { mean: Vec<f64>, log_std: Vec<f64> },
}

/// A sampled action with everything PPO needs to store. For Gaussian heads
/// `raw` holds the pre-squash sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub action: Action,
    pub raw: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
}

/// Actor-critic pair with separate networks.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    actor: Mlp,
    critic: Mlp,
    head: Head,
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + libm::log(logits.iter().map(|l| libm::exp(l - max)).sum::<f64>());
    logits.iter().map(|l| l - lse).collect()
}

/// `ln(1 - tanh(u)^2)`, stable for large `|u|`.
pub(crate) fn log_squash_jacobian(u: f64) -> f64 {
    let softplus = |x: f64| if x > 30.0 { x } else { libm::log1p(libm::exp(x)) };
    2.0 * (core::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

impl Policy {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, space: ActionSpace, cfg: &PolicyConfig, rng: &mut R) -> Result<Self> {
        let (out, head) = match space {
            ActionSpace::Discrete(n) => {
                ensure!(n >= 1, Config, "discrete action space is empty");
                (n, Head::Categorical { actions: n })
            }
            ActionSpace::Box(d) => {
                ensure!(d >= 1, Config, "continuous action space has no dimensions");
                ensure!(
                    (LOG_STD_MIN..=LOG_STD_MAX).contains(&cfg.init_log_std),
                    Config,
                    "initial log-std must lie in [{LOG_STD_MIN}, {LOG_STD_MAX}]"
                );
                (d, Head::Gaussian { log_std: vec![cfg.init_log_std; d] })
            }
        };
        let mut actor = Mlp::new(MlpSpec::new(obs_dim, cfg.hidden.clone(), out).with_activation(cfg.activation), rng)?;
        actor.scale_output_layer(0.01);
        let critic = Mlp::new(MlpSpec::new(obs_dim, cfg.hidden.clone(), 1).with_activation(cfg.activation), rng)?;
        Ok(Self { actor, critic, head })
    }

    pub fn from_parts(actor: Mlp, critic: Mlp, head: Head) -> Result<Self> {
        let in_dim = actor.spec().input_dim;
        ensure!(critic.spec().input_dim == in_dim, ContractViolation, "actor and critic input sizes differ");
        ensure!(critic.spec().output_dim == 1, ContractViolation, "critic must output a scalar");
        let expect = match &head {
            Head::Categorical { actions } => *actions,
            Head::Gaussian { log_std } => {
                ensure!(log_std.iter().all(|v| v.is_finite()), ContractViolation, "log-std must be finite");
                log_std.len()
            }
        };
        ensure!(actor.spec().output_dim == expect, ContractViolation, "actor output does not match the action head");
        Ok(Self { actor, critic, head })
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn critic(&self) -> &Mlp {
        &self.critic
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Mlp, &mut Mlp, &mut Head) {
        (&mut self.actor, &mut self.critic, &mut self.head)
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.spec().input_dim
    }

    pub fn action_space(&self) -> ActionSpace {
        match &self.head {
            Head::Categorical { actions } => ActionSpace::Discrete(*actions),
            Head::Gaussian { log_std } => ActionSpace::Box(log_std.len()),
        }
    }

    pub(crate) fn dist_from_output(&self, out: &[f64]) -> Dist {
        match &self.head {
            Head::Categorical { .. } => Dist::Categorical { log_probs: log_softmax(out) },
            Head::Gaussian { log_std } => Dist::Gaussian {
                mean: out.to_vec(),
                log_std: log_std.iter().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect(),
            },
        }
    }

    pub fn distribution(&self, obs: &[f64]) -> Result<Dist> {
        Ok(self.dist_from_output(&self.actor.predict(obs)?))
    }

    pub fn value(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.critic.predict(obs)?[0])
    }

    pub fn sample<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<Sample> {
        let dist = self.distribution(obs)?;
        let value = self.value(obs)?;
        match &dist {
            Dist::Categorical { log_probs } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut choice = log_probs.len() - 1;
                for (i, lp) in log_probs.iter().enumerate() {
                    acc += libm::exp(*lp);
                    if u < acc {
                        choice = i;
                        break;
                    }
                }
                Ok(Sample { action: Action::Discrete(choice), raw: Vec::new(), log_prob: log_probs[choice], value })
            }
            Dist::Gaussian { mean, log_std } => {
                let raw: Vec<f64> =
                    mean.iter().zip(log_std).map(|(m, ls)| m + libm::exp(*ls) * standard_normal(rng)).collect();
                let log_prob = dist.log_prob_raw(&raw)?;
                let action = Action::Continuous(raw.iter().map(|u| libm::tanh(*u)).collect());
                Ok(Sample { action, raw, log_prob, value })
            }
        }
    }

    /// Greedy action: argmax (first on ties) or the squashed mean.
    pub fn act_deterministic(&self, obs: &[f64]) -> Result<Action> {
        Ok(match self.distribution(obs)? {
            Dist::Categorical { log_probs } => {
                let mut best = 0;
                for (i, lp) in log_probs.iter().enumerate() {
                    if *lp > log_probs[best] {
                        best = i;
                    }
                }
                Action::Discrete(best)
            }
            Dist::Gaussian { mean, .. } => Action::Continuous(mean.iter().map(|m| libm::tanh(*m)).collect()),
        })
    }
}

impl Dist {
    /// Log-probability of a discrete index or of a pre-squash Gaussian
    /// sample, including the squash correction.
    pub fn log_prob(&self, action: &Action, raw: &[f64]) -> Result<f64> {
        match (self, action) {
            (Dist::Categorical { log_probs }, Action::Discrete(i)) => log_probs
                .get(*i)
                .copied()
                .ok_or_else(|| Error::ContractViolation(alloc::format!("action index {i} out of range"))),
            (Dist::Gaussian { .. }, Action::Continuous(_)) => self.log_prob_raw(raw),
            _ => Err(Error::ContractViolation("action kind does not match the policy head".into())),
        }
    }

    pub(crate) fn log_prob_raw(&self, raw: &[f64]) -> Result<f64> {
        let Dist::Gaussian { mean, log_std } = self else {
            return Err(Error::ContractViolation("raw samples only exist for Gaussian heads".into()));
        };
        ensure!(raw.len() == mean.len(), ContractViolation, "raw sample has {} dims, expected {}", raw.len(), mean.len());
        Ok(mean
            .iter()
            .zip(log_std)
            .zip(raw)
            .map(|((m, ls), u)| {
                let z = (u - m) / libm::exp(*ls);
                -0.5 * z * z - ls - HALF_LN_2PI - log_squash_jacobian(*u)
            })
            .sum())
    }

    /// Entropy of the categorical or of the unsquashed Gaussian.
    pub fn entropy(&self) -> f64 {
        match self {
            Dist::Categorical { log_probs } => -log_probs.iter().map(|lp| libm::exp(*lp) * lp).sum::<f64>(),
            Dist::Gaussian { log_std, .. } => log_std.iter().map(|ls| ls + 0.5 + HALF_LN_2PI).sum(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn categorical_sampling_frequencies() {
        let policy = Policy::new(3, ActionSpace::Discrete(4), &PolicyConfig::default(), &mut seeded(1)).unwrap();
        let obs = [0.2, -0.4, 1.0];
        let Dist::Categorical { log_probs } = policy.distribution(&obs).unwrap() else { panic!() };
        let mut counts = [0usize; 4];
        let mut r = seeded(2);
        for _ in 0..40_000 {
            let s = policy.sample(&obs, &mut r).unwrap();
            let Action::Discrete(i) = s.action else { panic!() };
            assert_eq!(s.log_prob, log_probs[i]);
            counts[i] += 1;
        }
        for (c, lp) in counts.iter().zip(&log_probs) {
            let p = lp.exp();
            let sigma = (p * (1.0 - p) / 40_000.0).sqrt();
            assert!((*c as f64 / 40_000.0 - p).abs() < 4.0 * sigma);
        }
    }

    #[test]
    fn gaussian_log_prob_matches_density() {
        let policy = Policy::new(2, ActionSpace::Box(2), &PolicyConfig::default(), &mut seeded(3)).unwrap();
        let obs = [0.5, -0.5];
        let mut r = seeded(4);
        for _ in 0..50 {
            let s = policy.sample(&obs, &mut r).unwrap();
            let Dist::Gaussian { mean, log_std } = policy.distribution(&obs).unwrap() else { panic!() };
            let Action::Continuous(a) = &s.action else { panic!() };
            // Density of the squashed action by change of variables.
            let mut density = 1.0;
            for i in 0..2 {
                let sd = log_std[i].exp();
                let u = a[i].atanh();
                let normal = (-0.5 * ((u - mean[i]) / sd).powi(2)).exp() / (sd * (2.0 * core::f64::consts::PI).sqrt());
                density *= normal / (1.0 - a[i] * a[i]);
            }
            assert!((s.log_prob.exp() - density).abs() < 1e-9 * density.max(1.0));
            assert!(a.iter().all(|x| x.abs() <= 1.0));
        }
    }

    #[test]
    fn jacobian_is_stable() {
        for u in [-40.0, -3.0, 0.0, 0.7, 25.0] {
            let direct = (1.0 - libm::tanh(u).powi(2)).ln();
            let stable = log_squash_jacobian(u);
            if direct.is_finite() {
                assert!((direct - stable).abs() < 1e-9);
            }
            assert!(stable.is_finite());
        }
    }

    #[test]
    fn deterministic_action_is_argmax() {
        let policy = Policy::new(2, ActionSpace::Discrete(3), &PolicyConfig::default(), &mut seeded(9)).unwrap();
        let obs = [1.0, 0.0];
        let Dist::Categorical { log_probs } = policy.distribution(&obs).unwrap() else { panic!() };
        let Action::Discrete(i) = policy.act_deterministic(&obs).unwrap() else { panic!() };
        assert!(log_probs.iter().all(|lp| *lp <= log_probs[i]));
    }

    #[test]
    fn mismatched_action_rejected() {
        let policy = Policy::new(2, ActionSpace::Discrete(3), &PolicyConfig::default(), &mut seeded(9)).unwrap();
        let d = policy.distribution(&[0.0, 0.0]).unwrap();
        assert!(d.log_prob(&Action::Continuous(vec![0.0]), &[0.0]).is_err());
        assert!(d.log_prob(&Action::Discrete(3), &[]).is_err());
    }
}

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::buffer::{collect_rollouts, Episode, RolloutBuffer};
use super::policy::{Policy, PolicyConfig};
use super::update::{ppo_update, PolicyOptimizer, UpdateStats};
use super::PpoConfig;
use crate::envs::Environment;
use crate::error::{ensure, Result};
use crate::experts::DemoDataset;
use crate::grip::{
    annotate, build_batch, expert_threshold, grip_terms, grip_update, population_variance, unconfident,
    ConfidenceAnnotation, ConfidenceConfig, ConfidenceMode, GripTerms, UpdateOptions,
};
use crate::nnkit::Adam;
use crate::proximity::{expert_mse, pretrain, ExpertSet, PretrainOptions, ProximityConfig, ProximityEnsemble};
use crate::rng::{self, CoreRng};

const POLICY_INIT: u64 = 0;
const ENSEMBLE_INIT: u64 = 1;
const PRETRAIN: u64 = 2;
const ROLLOUT: u64 = 3;
const PPO: u64 = 4;
const CONFIDENCE: u64 = 5;
const MASKS: u64 = 6;
const MEMBER_UPDATES: u64 = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Transitions collected per iteration.
    pub rollout_size: usize,
    pub ppo: PpoConfig,
    pub policy: PolicyConfig,
    pub proximity: ProximityConfig,
    pub confidence: ConfidenceConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 300,
            rollout_size: 10_000,
            ppo: PpoConfig::default(),
            policy: PolicyConfig::default(),
            proximity: ProximityConfig::default(),
            confidence: ConfidenceConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.rollout_size >= 1, Config, "rollout size must be positive");
        self.ppo.validate()?;
        self.proximity.validate()?;
        self.confidence.validate(self.proximity.members)
    }
}

/// One row of training diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub env_steps: usize,
    /// Over episodes completed in this iteration's rollouts; NaN if none.
    pub mean_episode_length: f64,
    pub success_rate: f64,
    /// Full-batch, dropout-off loss terms before the proximity update.
    pub loss: GripTerms,
    pub confident_fraction: f64,
    pub masked_fraction: f64,
    pub p_itr: f64,
    /// NaN when confidence estimation is off.
    pub threshold: f64,
    pub anchors: usize,
    pub intermediates: usize,
    pub ppo: UpdateStats,
}

/// The alternating proximity/policy training loop.
pub struct Trainer<E: Environment> {
    env: E,
    cfg: TrainConfig,
    seed: u64,
    policy: Policy,
    policy_opt: PolicyOptimizer,
    ensemble: ProximityEnsemble,
    member_opts: Vec<Adam>,
    member_rngs: Vec<CoreRng>,
    expert: ExpertSet,
    rollout_rng: CoreRng,
    ppo_rng: CoreRng,
    confidence_rng: CoreRng,
    rho_max: f64,
    iteration: usize,
    env_steps: usize,
    pretrain_mse: f64,
    last_rollout: Option<(RolloutBuffer, Vec<Episode>)>,
}

impl<E: Environment> Trainer<E> {
    /// Initializes the policy and the ensemble and pretrains the ensemble
    /// on the demonstrations.
    pub fn new(env: E, demos: &DemoDataset, cfg: TrainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let obs_dim = env.obs_dim();
        let demo_dim = demos.trajectories.first().and_then(|t| t.states.first()).map(Vec::len);
        ensure!(demo_dim == Some(obs_dim), Config, "demonstrations do not match the environment observation size");
        let expert = ExpertSet::from_dataset(demos, cfg.proximity.delta)?;
        let policy = Policy::new(obs_dim, env.action_space(), &cfg.policy, &mut rng::derived(seed, POLICY_INIT))?;
        let mut ensemble = ProximityEnsemble::new(
            cfg.proximity.spec(obs_dim),
            cfg.proximity.members,
            cfg.proximity.delta,
            rng::derive_seed(seed, ENSEMBLE_INIT),
        )?;
        let pretrain_mse = pretrain(
            &mut ensemble,
            &expert,
            PretrainOptions::from(&cfg.proximity),
            rng::derive_seed(seed, PRETRAIN),
        )?;
        let member_opts = ensemble.members().iter().map(Adam::for_mlp).collect();
        let update_seed = rng::derive_seed(seed, MEMBER_UPDATES);
        let member_rngs = (0..ensemble.len() as u64).map(|k| rng::derived(update_seed, k)).collect();
        let rho_max = 2.0 * env.max_steps() as f64;
        Ok(Self {
            policy_opt: PolicyOptimizer::new(&policy),
            env,
            seed,
            policy,
            ensemble,
            member_opts,
            member_rngs,
            expert,
            rollout_rng: rng::derived(seed, ROLLOUT),
            ppo_rng: rng::derived(seed, PPO),
            confidence_rng: rng::derived(seed, CONFIDENCE),
            rho_max,
            iteration: 0,
            env_steps: 0,
            pretrain_mse,
            last_rollout: None,
            cfg,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn ensemble(&self) -> &ProximityEnsemble {
        &self.ensemble
    }

    pub fn expert(&self) -> &ExpertSet {
        &self.expert
    }

    pub fn env(&self) -> &E {
        &self.env
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn pretrain_mse(&self) -> f64 {
        self.pretrain_mse
    }

    pub fn expert_mse(&self) -> Result<f64> {
        expert_mse(&self.ensemble, &self.expert)
    }

    /// Buffer and episodes of the most recent iteration, with the rewards
    /// that the policy update used.
    pub fn last_rollout(&self) -> Option<(&RolloutBuffer, &[Episode])> {
        self.last_rollout.as_ref().map(|(b, e)| (b, e.as_slice()))
    }

    /// Runs all remaining configured iterations.
    pub fn train(&mut self) -> Result<Vec<IterationMetrics>> {
        let mut out = Vec::new();
        while self.iteration < self.cfg.iterations {
            out.push(self.iterate()?);
        }
        Ok(out)
    }

    fn annotate_episodes(&mut self, episodes: &[Episode]) -> Result<(f64, Vec<Vec<ConfidenceAnnotation>>)> {
        let cc = &self.cfg.confidence;
        if !cc.enabled {
            return Ok((f64::NAN, episodes.iter().map(|e| unconfident(e.states.len())).collect()));
        }
        let threshold = expert_threshold(&self.ensemble, &self.expert.states, cc, &mut self.confidence_rng)?;
        let mut notes = Vec::with_capacity(episodes.len());
        for ep in episodes {
            let mut means = Vec::with_capacity(ep.states.len());
            let mut variances = Vec::with_capacity(ep.states.len());
            for s in &ep.states {
                let outputs = self.ensemble.member_outputs(s)?;
                means.push(outputs.iter().sum::<f64>() / outputs.len() as f64);
                variances.push(match cc.mode {
                    ConfidenceMode::Ensemble => population_variance(&outputs),
                    ConfidenceMode::McDropout => {
                        crate::grip::estimate_variance(&self.ensemble, s, cc, &mut self.confidence_rng)?
                    }
                });
            }
            notes.push(annotate(&means, &variances, threshold, self.ensemble.delta(), self.rho_max)?);
        }
        Ok((threshold, notes))
    }

    /// One outer iteration: collect, annotate, update the proximity
    /// ensemble, relabel rewards, update the policy.
    pub fn iterate(&mut self) -> Result<IterationMetrics> {
        let it = self.iteration;
        let (mut buffer, episodes) =
            collect_rollouts(&self.policy, &mut self.env, self.cfg.rollout_size, &mut self.rollout_rng)
                .map_err(|e| e.in_stage(it, "rollout collection"))?;
        let (threshold, notes) = self.annotate_episodes(&episodes).map_err(|e| e.in_stage(it, "confidence estimation"))?;
        let schedule = self.cfg.confidence.schedule(it, self.cfg.iterations).map_err(|e| e.in_stage(it, "mask schedule"))?;
        let mut mask_rng = rng::derived(rng::derive_seed(self.seed, MASKS), it as u64);
        let (batch, counts) = build_batch(
            &self.expert,
            episodes.iter().zip(&notes).map(|(e, n)| (e.states.as_slice(), n.as_slice())),
            &schedule,
            self.ensemble.delta(),
            &mut mask_rng,
        )
        .map_err(|e| e.in_stage(it, "loss assembly"))?;
        let loss = grip_terms(&self.ensemble, &batch).map_err(|e| e.in_stage(it, "proximity loss"))?;
        let opts = UpdateOptions {
            updates: self.cfg.proximity.updates_per_iteration,
            batch_size: self.cfg.proximity.batch_size,
            learning_rate: self.cfg.proximity.learning_rate,
            stochastic: self.cfg.proximity.loss_dropout,
        };
        grip_update(&mut self.ensemble, &mut self.member_opts, &batch, opts, &mut self.member_rngs)
            .map_err(|e| e.in_stage(it, "proximity update"))?;
        drop(batch);

        let means: Vec<Vec<f64>> = episodes
            .iter()
            .map(|ep| ep.states.iter().map(|s| self.ensemble.predict_mean(s)).collect::<Result<Vec<f64>>>())
            .collect::<Result<_>>()
            .map_err(|e| e.in_stage(it, "reward relabeling"))?;
        buffer.relabel(&episodes, &means).map_err(|e| e.in_stage(it, "reward relabeling"))?;
        buffer.compute_advantages(self.cfg.ppo.gamma, self.cfg.ppo.gae_lambda);
        let ppo = ppo_update(&mut self.policy, &mut self.policy_opt, &buffer, &self.cfg.ppo, &mut self.ppo_rng)
            .map_err(|e| e.in_stage(it, "policy update"))?;

        self.env_steps += buffer.len();
        let complete: Vec<&Episode> = episodes.iter().filter(|e| e.complete).collect();
        let (mean_episode_length, success_rate) = if complete.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let n = complete.len() as f64;
            (
                complete.iter().map(|e| e.len() as f64).sum::<f64>() / n,
                complete.iter().filter(|e| e.success).count() as f64 / n,
            )
        };
        self.iteration += 1;
        self.last_rollout = Some((buffer, episodes));
        Ok(IterationMetrics {
            iteration: it,
            env_steps: self.env_steps,
            mean_episode_length,
            success_rate,
            loss,
            confident_fraction: counts.confident_fraction(),
            masked_fraction: counts.masked_fraction(),
            p_itr: schedule.p(),
            threshold,
            anchors: counts.anchors,
            intermediates: counts.intermediates,
            ppo,
        })
    }
}

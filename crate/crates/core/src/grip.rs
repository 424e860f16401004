//! Confidence estimation, confident-segment interpolation with annealed
//! masking, the combined proximity loss and the proximity reward.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::nnkit::{sgd_step, Adam, Gradients};
use crate::proximity::{member_mse, mean, ExpertSet, Labeled, ProximityEnsemble};
use crate::rng::CoreRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceMode {
    /// Variance across the members' deterministic outputs.
    Ensemble,
    /// Variance across stochastic passes of the first member.
    McDropout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfidenceConfig {
    /// When off, every rollout state is unconfident and the loss reduces to
    /// the plain expert/zero-target objective.
    pub enabled: bool,
    pub mode: ConfidenceMode,
    pub mc_passes: usize,
    /// Nearest-rank percentile of expert variances used as threshold.
    pub percentile: f64,
    /// Iterations over which the mask probability decays from 1 to 0.
    /// `None` means the full iteration budget.
    pub anneal_horizon: Option<usize>,
    /// Fixed mask probability replacing the annealed schedule.
    pub constant_mask: Option<f64>,
}

impl Default for ConfidenceConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            mode: ConfidenceMode::Ensemble,
            mc_passes: 5,
            percentile: 95.0,
            anneal_horizon: None,
            constant_mask: None,
        }
    }
}

impl ConfidenceConfig {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }

    pub fn validate(&self, members: usize) -> Result<()> {
        ensure!(
            self.percentile > 0.0 && self.percentile <= 100.0,
            Config,
            "threshold percentile must lie in (0, 100], got {}",
            self.percentile
        );
        if let Some(p) = self.constant_mask {
            ensure!((0.0..=1.0).contains(&p), Config, "constant mask probability must lie in [0, 1], got {p}");
        }
        if self.enabled {
            match self.mode {
                ConfidenceMode::Ensemble => {
                    ensure!(members >= 2, Config, "ensemble confidence needs at least two members")
                }
                ConfidenceMode::McDropout => {
                    ensure!(self.mc_passes >= 2, Config, "MC-dropout confidence needs at least two passes")
                }
            }
        }
        Ok(())
    }

    pub fn schedule(&self, iteration: usize, total_iterations: usize) -> Result<MaskSchedule> {
        match self.constant_mask {
            Some(p) => MaskSchedule::constant(iteration, p),
            None => Ok(MaskSchedule::annealed(iteration, self.anneal_horizon.unwrap_or(total_iterations))),
        }
    }
}

/// Probability of masking an intermediate state at a given iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskSchedule {
    iteration: usize,
    horizon: usize,
    p: f64,
}

impl MaskSchedule {
    /// `p = max(0, 1 - iteration / horizon)`; a zero horizon never masks.
    pub fn annealed(iteration: usize, horizon: usize) -> Self {
        let p = if horizon == 0 { 0.0 } else { (1.0 - iteration as f64 / horizon as f64).max(0.0) };
        Self { iteration, horizon, p }
    }

    pub fn constant(iteration: usize, p: f64) -> Result<Self> {
        ensure!((0.0..=1.0).contains(&p), Config, "mask probability must lie in [0, 1], got {p}");
        Ok(Self { iteration, horizon: 0, p })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn p(&self) -> f64 {
        self.p
    }
}

pub fn population_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

pub fn estimate_variance<R: Rng + ?Sized>(
    ens: &ProximityEnsemble,
    s: &[f64],
    cfg: &ConfidenceConfig,
    rng: &mut R,
) -> Result<f64> {
    match cfg.mode {
        ConfidenceMode::Ensemble => {
            ensure!(ens.len() >= 2, Config, "ensemble confidence needs at least two members");
            Ok(population_variance(&ens.member_outputs(s)?))
        }
        ConfidenceMode::McDropout => {
            ensure!(cfg.mc_passes >= 2, Config, "MC-dropout confidence needs at least two passes");
            let member = &ens.members()[0];
            let passes: Vec<f64> =
                (0..cfg.mc_passes).map(|_| Ok(member.forward(s, true, rng)?[0])).collect::<Result<_>>()?;
            Ok(population_variance(&passes))
        }
    }
}

/// Nearest-rank percentile: the value at rank `ceil(q/100 * n)`.
pub fn nearest_rank(values: &[f64], q: f64) -> Result<f64> {
    ensure!(!values.is_empty(), Config, "percentile of an empty set");
    ensure!(q > 0.0 && q <= 100.0, Config, "percentile must lie in (0, 100], got {q}");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = libm::ceil(q / 100.0 * sorted.len() as f64) as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

pub fn expert_threshold<R: Rng + ?Sized>(
    ens: &ProximityEnsemble,
    expert_states: &[Vec<f64>],
    cfg: &ConfidenceConfig,
    rng: &mut R,
) -> Result<f64> {
    ensure!(!expert_states.is_empty(), Config, "expert set is empty");
    let variances: Vec<f64> =
        expert_states.iter().map(|s| estimate_variance(ens, s, cfg, rng)).collect::<Result<_>>()?;
    nearest_rank(&variances, cfg.percentile)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Role {
    Anchor { rho: f64 },
    Intermediate { target: f64, t_local: usize, t_sub: usize },
    Unconfident,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConfidenceAnnotation {
    pub variance: f64,
    pub confident: bool,
    pub role: Role,
}

impl ConfidenceAnnotation {
    pub fn interpolated_target(&self) -> Option<f64> {
        match self.role {
            Role::Intermediate { target, .. } => Some(target),
            _ => None,
        }
    }

    pub fn anchor_rho(&self) -> Option<f64> {
        match self.role {
            Role::Anchor { rho } => Some(rho),
            _ => None,
        }
    }
}

/// `log_delta(clamp(mean, delta^rho_max, 1))`.
pub fn anchor_rho(mean: f64, delta: f64, rho_max: f64) -> f64 {
    let floor = libm::pow(delta, rho_max);
    let clamped = if mean.is_nan() { floor } else { mean.clamp(floor, 1.0) };
    if clamped == 1.0 {
        0.0
    } else {
        libm::log(clamped) / libm::log(delta)
    }
}

/// `delta^(rho_start + (t_local / t_sub) (rho_end - rho_start))`. The end
/// points return `delta^rho_start` and `delta^rho_end` exactly.
pub fn interpolate_target(rho_start: f64, rho_end: f64, t_local: usize, t_sub: usize, delta: f64) -> Result<f64> {
    ensure!(rho_start.is_finite() && rho_end.is_finite(), ContractViolation, "interpolation anchors must be finite");
    ensure!(t_sub > 0 && t_local <= t_sub, ContractViolation, "local index {t_local} outside segment of length {t_sub}");
    ensure!(delta > 0.0 && delta < 1.0, Config, "decay factor must lie in (0, 1), got {delta}");
    let rho = if t_local == 0 {
        rho_start
    } else if t_local == t_sub {
        rho_end
    } else {
        rho_start + (t_local as f64 / t_sub as f64) * (rho_end - rho_start)
    };
    Ok(libm::pow(delta, rho))
}

/// Labels one trajectory from its per-state ensemble means and variances.
pub fn annotate(
    means: &[f64],
    variances: &[f64],
    threshold: f64,
    delta: f64,
    rho_max: f64,
) -> Result<Vec<ConfidenceAnnotation>> {
    ensure!(means.len() == variances.len(), ContractViolation, "means and variances differ in length");
    let mut out: Vec<ConfidenceAnnotation> = variances
        .iter()
        .zip(means)
        .map(|(&variance, &m)| {
            let confident = variance <= threshold;
            let role = if confident { Role::Anchor { rho: anchor_rho(m, delta, rho_max) } } else { Role::Unconfident };
            ConfidenceAnnotation { variance, confident, role }
        })
        .collect();
    let anchors: Vec<usize> = (0..out.len()).filter(|&i| out[i].confident).collect();
    for pair in anchors.windows(2) {
        let (i, j) = (pair[0], pair[1]);
        let (Some(rs), Some(re)) = (out[i].anchor_rho(), out[j].anchor_rho()) else { continue };
        for t in i + 1..j {
            let target = interpolate_target(rs, re, t - i, j - i, delta)?;
            out[t].role = Role::Intermediate { target, t_local: t - i, t_sub: j - i };
        }
    }
    Ok(out)
}

/// Every state unconfident; used when confidence estimation is off.
pub fn unconfident(len: usize) -> Vec<ConfidenceAnnotation> {
    alloc::vec![ConfidenceAnnotation { variance: f64::NAN, confident: false, role: Role::Unconfident }; len]
}

pub fn annotate_rollout<R: Rng + ?Sized>(
    states: &[Vec<f64>],
    ens: &ProximityEnsemble,
    threshold: f64,
    cfg: &ConfidenceConfig,
    rho_max: f64,
    rng: &mut R,
) -> Result<Vec<ConfidenceAnnotation>> {
    ensure!(states.len() >= 2, ContractViolation, "trajectory needs at least one transition");
    let means: Vec<f64> = states.iter().map(|s| ens.predict_mean(s)).collect::<Result<_>>()?;
    let variances: Vec<f64> = states.iter().map(|s| estimate_variance(ens, s, cfg, rng)).collect::<Result<_>>()?;
    annotate(&means, &variances, threshold, ens.delta(), rho_max)
}

/// Training sets for one proximity update.
#[derive(Clone, Debug, Default)]
pub struct GripBatch<'a> {
    pub expert: Vec<Labeled<'a>>,
    /// Anchors, unmasked intermediates (interpolated target) and masked
    /// intermediates (zero target).
    pub conf: Vec<Labeled<'a>>,
    pub unconf: Vec<&'a [f64]>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BatchCounts {
    pub anchors: usize,
    pub intermediates: usize,
    pub masked: usize,
    pub unconfident: usize,
}

impl BatchCounts {
    pub fn states(&self) -> usize {
        self.anchors + self.intermediates + self.unconfident
    }

    pub fn masked_fraction(&self) -> f64 {
        if self.intermediates == 0 {
            0.0
        } else {
            self.masked as f64 / self.intermediates as f64
        }
    }

    pub fn confident_fraction(&self) -> f64 {
        let n = self.states();
        if n == 0 {
            0.0
        } else {
            self.anchors as f64 / n as f64
        }
    }
}

/// Assembles the loss sets. Each intermediate draws its own mask from
/// `mask_rng` with probability `schedule.p()`.
pub fn build_batch<'a, 'b, R: Rng + ?Sized>(
    expert: &'a ExpertSet,
    rollouts: impl IntoIterator<Item = (&'a [Vec<f64>], &'b [ConfidenceAnnotation])>,
    schedule: &MaskSchedule,
    delta: f64,
    mask_rng: &mut R,
) -> Result<(GripBatch<'a>, BatchCounts)> {
    let mut batch = GripBatch {
        expert: expert.states.iter().zip(&expert.targets).map(|(s, &t)| Labeled { state: s, target: t }).collect(),
        ..GripBatch::default()
    };
    let mut counts = BatchCounts::default();
    for (states, notes) in rollouts {
        ensure!(states.len() == notes.len(), ContractViolation, "one annotation per rollout state required");
        for (s, note) in states.iter().zip(notes) {
            match note.role {
                Role::Anchor { rho } => {
                    counts.anchors += 1;
                    batch.conf.push(Labeled { state: s, target: libm::pow(delta, rho) });
                }
                Role::Intermediate { target, .. } => {
                    counts.intermediates += 1;
                    let masked = mask_rng.gen::<f64>() < schedule.p();
                    if masked {
                        counts.masked += 1;
                    }
                    batch.conf.push(Labeled { state: s, target: if masked { 0.0 } else { target } });
                }
                Role::Unconfident => {
                    counts.unconfident += 1;
                    batch.unconf.push(s);
                }
            }
        }
    }
    Ok((batch, counts))
}

/// Loss terms averaged over members.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GripTerms {
    pub expert: f64,
    pub conf: f64,
    pub unconf: f64,
}

impl GripTerms {
    pub fn total(&self) -> f64 {
        self.expert + self.conf + self.unconf
    }
}

#[derive(Clone, Debug)]
pub struct GripLoss {
    pub terms: GripTerms,
    pub total: f64,
    /// Per member, the gradient of its own three-term sum.
    pub grads: Vec<Gradients>,
}

fn zero_labeled<'a>(states: &[&'a [f64]]) -> Vec<Labeled<'a>> {
    states.iter().map(|s| Labeled { state: s, target: 0.0 }).collect()
}

/// Full-batch combined loss: each term is a mean over its own set, empty
/// sets contribute zero.
pub fn grip_loss<R: Rng + ?Sized>(
    ens: &ProximityEnsemble,
    batch: &GripBatch<'_>,
    stochastic: bool,
    rng: &mut R,
) -> Result<GripLoss> {
    let unconf = zero_labeled(&batch.unconf);
    let mut terms = GripTerms::default();
    let mut grads = Vec::with_capacity(ens.len());
    for member in ens.members() {
        let mut g = Gradients::zeros(member.spec());
        terms.expert += member_mse(member, &batch.expert, stochastic, rng, 1.0, &mut g)?;
        terms.conf += member_mse(member, &batch.conf, stochastic, rng, 1.0, &mut g)?;
        terms.unconf += member_mse(member, &unconf, stochastic, rng, 1.0, &mut g)?;
        grads.push(g);
    }
    let m = ens.len() as f64;
    terms = GripTerms { expert: terms.expert / m, conf: terms.conf / m, unconf: terms.unconf / m };
    let total = terms.total();
    if !total.is_finite() {
        return Err(Error::NonFinite { stage: "proximity loss" });
    }
    Ok(GripLoss { terms, total, grads })
}

/// Deterministic loss values only; no gradients.
pub fn grip_terms(ens: &ProximityEnsemble, batch: &GripBatch<'_>) -> Result<GripTerms> {
    let term = |samples: &mut dyn Iterator<Item = (&[f64], f64)>| -> Result<f64> {
        let mut per_member = alloc::vec![0.0; ens.len()];
        let mut n = 0usize;
        for (s, target) in samples {
            for (acc, out) in per_member.iter_mut().zip(ens.member_outputs(s)?) {
                *acc += (out - target) * (out - target);
            }
            n += 1;
        }
        Ok(if n == 0 { 0.0 } else { per_member.iter().map(|v| v / n as f64).sum::<f64>() / ens.len() as f64 })
    };
    let terms = GripTerms {
        expert: term(&mut batch.expert.iter().map(|l| (l.state, l.target)))?,
        conf: term(&mut batch.conf.iter().map(|l| (l.state, l.target)))?,
        unconf: term(&mut batch.unconf.iter().map(|s| (*s, 0.0)))?,
    };
    if !terms.total().is_finite() {
        return Err(Error::NonFinite { stage: "proximity loss" });
    }
    Ok(terms)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateOptions {
    pub updates: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Dropout active while computing the loss.
    pub stochastic: bool,
}

fn sample_with_replacement<T: Copy, R: Rng + ?Sized>(set: &[T], k: usize, rng: &mut R) -> Vec<T> {
    if set.is_empty() {
        return Vec::new();
    }
    (0..k).map(|_| set[rng.gen_range(0..set.len())]).collect()
}

/// Minibatch updates of every member. Member `k` draws its minibatches and
/// dropout masks from `rngs[k]`; each step samples `batch_size` states from
/// each non-empty set and follows the gradient of the three-term sum.
pub fn grip_update(
    ens: &mut ProximityEnsemble,
    opts: &mut [Adam],
    batch: &GripBatch<'_>,
    o: UpdateOptions,
    rngs: &mut [CoreRng],
) -> Result<()> {
    ensure!(opts.len() == ens.len() && rngs.len() == ens.len(), ContractViolation, "one optimizer and stream per member");
    let unconf = zero_labeled(&batch.unconf);
    for ((member, opt), rng) in ens.members_mut().iter_mut().zip(opts.iter_mut()).zip(rngs.iter_mut()) {
        for _ in 0..o.updates {
            let e = sample_with_replacement(&batch.expert, o.batch_size, rng);
            let c = sample_with_replacement(&batch.conf, o.batch_size, rng);
            let u = sample_with_replacement(&unconf, o.batch_size, rng);
            let mut g = Gradients::zeros(member.spec());
            let loss = member_mse(member, &e, o.stochastic, rng, 1.0, &mut g)?
                + member_mse(member, &c, o.stochastic, rng, 1.0, &mut g)?
                + member_mse(member, &u, o.stochastic, rng, 1.0, &mut g)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite { stage: "proximity update" });
            }
            sgd_step(member, &g, opt, o.learning_rate)?;
        }
    }
    Ok(())
}

/// Reduction in goal proximity, from ensemble-mean predictions.
pub fn proximity_reward(ens: &ProximityEnsemble, s: &[f64], s_next: &[f64]) -> Result<f64> {
    Ok(ens.predict_mean(s_next)? - ens.predict_mean(s)?)
}

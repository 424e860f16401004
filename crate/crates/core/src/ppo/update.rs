use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::buffer::RolloutBuffer;
use super::policy::{Dist, Head, Policy, LOG_STD_MAX, LOG_STD_MIN};
use super::{normalize_advantages, PpoConfig};
use crate::envs::Action;
use crate::error::{ensure, Error, Result};
use crate::nnkit::{Adam, Gradients};
use crate::rng;

/// Adam states for the actor, the critic and the Gaussian log-std.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOptimizer {
    pub actor: Adam,
    pub critic: Adam,
    pub log_std: Option<Adam>,
}

impl PolicyOptimizer {
    pub fn new(policy: &Policy) -> Self {
        let log_std = match policy.head() {
            Head::Gaussian { log_std } => Some(Adam::new(log_std.len())),
            Head::Categorical { .. } => None,
        };
        Self { actor: Adam::for_mlp(policy.actor()), critic: Adam::for_mlp(policy.critic()), log_std }
    }
}

/// Means over all minibatch steps of one update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// Gradients of log-prob and entropy with respect to the actor output and
/// the log-std.
struct HeadGrads {
    log_prob: f64,
    entropy: f64,
    dlp_out: Vec<f64>,
    dent_out: Vec<f64>,
    dlp_log_std: Vec<f64>,
    dent_log_std: Vec<f64>,
}

fn head_grads(dist: &Dist, action: &Action, raw: &[f64]) -> Result<HeadGrads> {
    let log_prob = dist.log_prob(action, raw)?;
    let entropy = dist.entropy();
    Ok(match dist {
        Dist::Categorical { log_probs } => {
            let Action::Discrete(a) = action else { unreachable!("checked by log_prob") };
            let p: Vec<f64> = log_probs.iter().map(|lp| libm::exp(*lp)).collect();
            let dlp_out = p.iter().enumerate().map(|(j, pj)| if j == *a { 1.0 - pj } else { -pj }).collect();
            let dent_out = p.iter().zip(log_probs).map(|(pj, lpj)| -pj * (lpj + entropy)).collect();
            HeadGrads { log_prob, entropy, dlp_out, dent_out, dlp_log_std: Vec::new(), dent_log_std: Vec::new() }
        }
        Dist::Gaussian { mean, log_std } => {
            let mut dlp_out = Vec::with_capacity(mean.len());
            let mut dlp_log_std = Vec::with_capacity(mean.len());
            for ((m, ls), u) in mean.iter().zip(log_std).zip(raw) {
                let var = libm::exp(2.0 * ls);
                dlp_out.push((u - m) / var);
                dlp_log_std.push((u - m) * (u - m) / var - 1.0);
            }
            HeadGrads {
                log_prob,
                entropy,
                dent_out: vec![0.0; mean.len()],
                dent_log_std: vec![1.0; mean.len()],
                dlp_out,
                dlp_log_std,
            }
        }
    })
}

/// Runs `cfg.epochs` passes of shuffled minibatches over the buffer,
/// minimizing the clipped surrogate, the value error and the negative
/// entropy bonus. Advantages are normalized over the whole buffer first.
pub fn ppo_update<R: Rng + ?Sized>(
    policy: &mut Policy,
    opt: &mut PolicyOptimizer,
    buffer: &RolloutBuffer,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    let n = buffer.len();
    ensure!(buffer.advantages.len() == n && buffer.returns.len() == n, ContractViolation, "buffer has no advantages");
    if n == 0 {
        return Ok(UpdateStats::default());
    }
    let mut adv = buffer.advantages.clone();
    normalize_advantages(&mut adv);
    let mb_size = n.div_ceil(cfg.minibatches);
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = UpdateStats::default();
    let mut steps = 0usize;
    for _ in 0..cfg.epochs {
        rng::shuffle(&mut order, rng);
        for mb in order.chunks(mb_size) {
            let s = minibatch_step(policy, opt, buffer, &adv, mb, cfg)?;
            stats.policy_loss += s.policy_loss;
            stats.value_loss += s.value_loss;
            stats.entropy += s.entropy;
            stats.clip_fraction += s.clip_fraction;
            stats.approx_kl += s.approx_kl;
            steps += 1;
        }
    }
    let k = steps.max(1) as f64;
    Ok(UpdateStats {
        policy_loss: stats.policy_loss / k,
        value_loss: stats.value_loss / k,
        entropy: stats.entropy / k,
        clip_fraction: stats.clip_fraction / k,
        approx_kl: stats.approx_kl / k,
    })
}

fn minibatch_step(
    policy: &mut Policy,
    opt: &mut PolicyOptimizer,
    buffer: &RolloutBuffer,
    adv: &[f64],
    mb: &[usize],
    cfg: &PpoConfig,
) -> Result<UpdateStats> {
    let inv = 1.0 / mb.len() as f64;
    let mut g_actor = Gradients::zeros(policy.actor().spec());
    let mut g_critic = Gradients::zeros(policy.critic().spec());
    let mut g_log_std = match policy.head() {
        Head::Gaussian { log_std } => vec![0.0; log_std.len()],
        Head::Categorical { .. } => Vec::new(),
    };
    let mut s = UpdateStats::default();
    let mut unused = rng::seeded(0);
    for &i in mb {
        let obs = &buffer.obs[i];
        let trace = policy.actor().forward_traced(obs, false, &mut unused)?;
        let dist = policy.dist_from_output(&trace.output);
        let h = head_grads(&dist, &buffer.actions[i], &buffer.raw[i])?;
        let ratio = libm::exp(h.log_prob - buffer.log_probs[i]);
        let a = adv[i];
        let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip);
        let (surr1, surr2) = (ratio * a, clipped * a);
        s.policy_loss -= surr1.min(surr2) * inv;
        s.entropy += h.entropy * inv;
        s.approx_kl += (buffer.log_probs[i] - h.log_prob) * inv;
        if (ratio - 1.0).abs() > cfg.clip {
            s.clip_fraction += inv;
        }
        // d(loss)/d(log_prob): only the unclipped branch carries gradient.
        let dlp = if surr1 <= surr2 { -a * ratio } else { 0.0 };
        let upstream: Vec<f64> =
            h.dlp_out.iter().zip(&h.dent_out).map(|(lp, en)| (dlp * lp - cfg.entropy_coef * en) * inv).collect();
        policy.actor().backward(&trace, &upstream, &mut g_actor)?;
        for (g, (lp, en)) in g_log_std.iter_mut().zip(h.dlp_log_std.iter().zip(&h.dent_log_std)) {
            *g += (dlp * lp - cfg.entropy_coef * en) * inv;
        }
        let ctrace = policy.critic().forward_traced(obs, false, &mut unused)?;
        let err = ctrace.output[0] - buffer.returns[i];
        s.value_loss += err * err * inv;
        policy.critic().backward(&ctrace, &[cfg.value_coef * 2.0 * err * inv], &mut g_critic)?;
    }
    let total = s.policy_loss + cfg.value_coef * s.value_loss - cfg.entropy_coef * s.entropy;
    if !total.is_finite() || !g_actor.is_finite() || !g_critic.is_finite() {
        return Err(Error::NonFinite { stage: "policy update" });
    }
    let norm = libm::sqrt(
        g_actor.squared_norm() + g_critic.squared_norm() + g_log_std.iter().map(|g| g * g).sum::<f64>(),
    );
    if norm > cfg.max_grad_norm {
        let f = cfg.max_grad_norm / norm;
        g_actor.scale(f);
        g_critic.scale(f);
        g_log_std.iter_mut().for_each(|g| *g *= f);
    }
    let (actor, critic, head) = policy.parts_mut();
    crate::nnkit::sgd_step(actor, &g_actor, &mut opt.actor, cfg.learning_rate)?;
    crate::nnkit::sgd_step(critic, &g_critic, &mut opt.critic, cfg.learning_rate)?;
    if let (Head::Gaussian { log_std }, Some(state)) = (head, opt.log_std.as_mut()) {
        state.step_slice(log_std, &g_log_std, cfg.learning_rate)?;
        log_std.iter_mut().for_each(|v| *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX));
    }
    Ok(s)
}

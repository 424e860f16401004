//! Deterministic-action evaluation with out-of-constraint action counts.

use alloc::vec::Vec;

use crate::envs::{is_expert_action, Action, ActionConstraint, Environment};
use crate::error::{ensure, Result};
use crate::ppo::Policy;
use crate::rng;

/// Anything that maps an observation to an action.
pub trait Actor {
    fn act(&self, obs: &[f64]) -> Result<Action>;
}

impl Actor for Policy {
    fn act(&self, obs: &[f64]) -> Result<Action> {
        self.act_deterministic(obs)
    }
}

/// Wraps a closure as an [`Actor`].
pub struct FnActor<F>(pub F);

impl<F: Fn(&[f64]) -> Result<Action>> Actor for FnActor<F> {
    fn act(&self, obs: &[f64]) -> Result<Action> {
        (self.0)(obs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeRecord {
    /// Failed episodes run to the step cap, so their length is the cap.
    pub length: usize,
    pub success: bool,
    /// Share of actions outside the expert constraint.
    pub ooc_ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub episodes: Vec<EpisodeRecord>,
    pub mean_length: f64,
    pub success_rate: f64,
    /// Per-episode ratios averaged over episodes.
    pub ooc_ratio: f64,
}

impl EvalReport {
    pub fn from_records(episodes: Vec<EpisodeRecord>) -> Result<Self> {
        ensure!(!episodes.is_empty(), ContractViolation, "evaluation needs at least one episode");
        let n = episodes.len() as f64;
        Ok(Self {
            mean_length: episodes.iter().map(|e| e.length as f64).sum::<f64>() / n,
            success_rate: episodes.iter().filter(|e| e.success).count() as f64 / n,
            ooc_ratio: episodes.iter().map(|e| e.ooc_ratio).sum::<f64>() / n,
            episodes,
        })
    }
}

/// Runs `episodes` deterministic-action episodes; resets draw from the
/// stream seeded by `seed`.
pub fn evaluate<A: Actor + ?Sized, E: Environment>(
    actor: &A,
    env: &mut E,
    episodes: usize,
    seed: u64,
    constraint: &ActionConstraint,
) -> Result<EvalReport> {
    ensure!(episodes >= 1, ContractViolation, "evaluation needs at least one episode");
    let mut stream = rng::seeded(seed);
    let mut records = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs = env.reset(&mut stream);
        let mut ooc = 0usize;
        let mut length = 0usize;
        let success = loop {
            let action = actor.act(&obs)?;
            if !is_expert_action(&action, constraint) {
                ooc += 1;
            }
            let step = env.step(&action)?;
            length += 1;
            obs = step.observation;
            if step.done {
                break step.success;
            }
        };
        records.push(EpisodeRecord { length, success, ooc_ratio: ooc as f64 / length as f64 });
    }
    EvalReport::from_records(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{ActionBound, GridAction, GridLayout, GridWorld, PointMaze};
    use crate::experts::bfs_plan;
    use alloc::vec;

    #[test]
    fn expert_replay_on_grid() {
        let layout = GridLayout::open(8).unwrap();
        let plan = bfs_plan(&layout, layout.start(), &GridAction::CARDINAL).unwrap();
        let mut env = GridWorld::new(layout);
        let step = core::cell::Cell::new(0usize);
        let actor = FnActor(|_: &[f64]| {
            let i = step.get();
            step.set((i + 1) % plan.len());
            Ok(Action::Discrete(plan[i].index()))
        });
        let report = evaluate(&actor, &mut env, 5, 0, &ActionConstraint::Cardinal).unwrap();
        assert_eq!(report.mean_length, 14.0);
        assert_eq!(report.success_rate, 1.0);
        assert_eq!(report.ooc_ratio, 0.0);
    }

    #[test]
    fn diagonal_policy_is_fully_ooc() {
        let mut env = GridWorld::new(GridLayout::open(8).unwrap());
        let actor = FnActor(|_: &[f64]| Ok(Action::Discrete(GridAction::SE.index())));
        let report = evaluate(&actor, &mut env, 3, 0, &ActionConstraint::Cardinal).unwrap();
        assert_eq!(report.ooc_ratio, 1.0);
        assert_eq!(report.mean_length, 7.0);
    }

    #[test]
    fn no_op_maze_policy_fails() {
        let mut env = PointMaze::medium();
        let actor = FnActor(|_: &[f64]| Ok(Action::Continuous(vec![0.0, 0.0])));
        let c = ActionConstraint::Bounded(ActionBound::new(0.1).unwrap());
        let report = evaluate(&actor, &mut env, 4, 1, &c).unwrap();
        assert_eq!(report.success_rate, 0.0);
        assert_eq!(report.mean_length, 400.0);
        let mean: f64 = report.episodes.iter().map(|e| e.length as f64).sum::<f64>() / 4.0;
        assert!((report.mean_length - mean).abs() < 1e-12);
    }
}

//! Desk-scale environments with a constrained expert action space inside a
//! larger agent action space.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

mod grid;
mod maze;

pub use grid::{GridAction, GridLayout, GridWorld, CELL_CATEGORIES};
pub use maze::{MazeLayout, MazeParams, PointMaze, MEDIUM_MAZE};

/// An action for either environment family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "size")]
pub enum ActionSpace {
    Discrete(usize),
    Box(usize),
}

/// Symmetric per-dimension clip bound `b` in `(0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ActionBound(f64);

impl ActionBound {
    pub const FULL: ActionBound = ActionBound(1.0);

    pub fn new(b: f64) -> Result<Self> {
        ensure!(b.is_finite() && b > 0.0 && b <= 1.0, Config, "action bound must lie in (0, 1], got {b}");
        Ok(Self(b))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn clip(self, a: f64) -> f64 {
        a.clamp(-self.0, self.0)
    }
}

impl TryFrom<f64> for ActionBound {
    type Error = crate::Error;
    fn try_from(b: f64) -> Result<Self> {
        Self::new(b)
    }
}

impl From<ActionBound> for f64 {
    fn from(b: ActionBound) -> f64 {
        b.0
    }
}

/// Which actions an actor may take: the expert's constrained space or the
/// agent's full one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "bound")]
pub enum ActionConstraint {
    /// Grid: the four cardinal moves.
    Cardinal,
    /// Grid: all eight moves.
    AllDirections,
    /// Continuous: every component within `[-b, b]`.
    Bounded(ActionBound),
}

impl ActionConstraint {
    pub fn describe(&self) -> alloc::string::String {
        match self {
            ActionConstraint::Cardinal => "cardinal".into(),
            ActionConstraint::AllDirections => "all8".into(),
            ActionConstraint::Bounded(b) => alloc::format!("box{}", b.value()),
        }
    }
}

/// True iff `action` lies in the expert space described by `constraint`.
///
/// Bounds are inclusive. An action of the wrong family is never expert-legal.
pub fn is_expert_action(action: &Action, constraint: &ActionConstraint) -> bool {
    match (action, constraint) {
        (Action::Discrete(i), ActionConstraint::Cardinal) => {
            GridAction::from_index(*i).map(|a| a.is_cardinal()).unwrap_or(false)
        }
        (Action::Discrete(i), ActionConstraint::AllDirections) => GridAction::from_index(*i).is_some(),
        (Action::Continuous(a), ActionConstraint::Bounded(b)) => a.iter().all(|x| x.abs() <= b.value()),
        _ => false,
    }
}

/// Outcome of a single environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub observation: Vec<f64>,
    pub done: bool,
    pub success: bool,
}

/// Common episodic interface used by rollouts, experts and evaluation.
pub trait Environment {
    fn obs_dim(&self) -> usize;
    fn action_space(&self) -> ActionSpace;
    fn max_steps(&self) -> usize;
    /// Steps taken in the current episode.
    fn steps(&self) -> usize;
    fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64>;
    fn step(&mut self, action: &Action) -> Result<Step>;
    fn observation(&self) -> Vec<f64>;
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn grid_expert_space_is_cardinal() {
        assert!(!is_expert_action(&Action::Discrete(GridAction::NE.index()), &ActionConstraint::Cardinal));
        assert!(is_expert_action(&Action::Discrete(GridAction::E.index()), &ActionConstraint::Cardinal));
        let expert = GridAction::ALL.iter().filter(|a| a.is_cardinal()).count();
        assert_eq!((expert, GridAction::ALL.len()), (4, 8));
    }

    #[test]
    fn box_bound_is_inclusive() {
        let b = ActionConstraint::Bounded(ActionBound::new(0.1).unwrap());
        assert!(is_expert_action(&Action::Continuous(vec![0.05, -0.1]), &b));
        assert!(!is_expert_action(&Action::Continuous(vec![0.2, 0.0]), &b));
    }

    #[test]
    fn bound_domain() {
        assert!(ActionBound::new(0.0).is_err());
        assert!(ActionBound::new(1.5).is_err());
        assert!(ActionBound::new(1.0).is_ok());
    }
}

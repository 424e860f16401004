//! Constrained expert demonstrations: shortest cardinal paths in the grid
//! and a clipped waypoint-following controller in the maze.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::envs::{Action, ActionConstraint, Environment, GridAction, GridLayout, GridWorld, MazeLayout, MazeParams, PointMaze};
use crate::error::{ensure, Error, Result};
use crate::rng;

mod controller;
mod planner;

pub use controller::{maze_expert_attempt, maze_expert_rollout, MazeControllerConfig};
pub use planner::bfs_plan;

/// Which environment a dataset or run refers to. `layout` holds an ASCII
/// map overriding the built-in one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum EnvDescriptor {
    Grid {
        size: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        layout: Option<String>,
    },
    Maze {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        layout: Option<String>,
        #[serde(default)]
        params: MazeParams,
    },
}

impl EnvDescriptor {
    pub fn open_grid(size: usize) -> Self {
        EnvDescriptor::Grid { size, layout: None }
    }

    pub fn medium_maze() -> Self {
        EnvDescriptor::Maze { layout: None, params: MazeParams::default() }
    }

    pub fn id(&self) -> &'static str {
        match self {
            EnvDescriptor::Grid { .. } => "grid",
            EnvDescriptor::Maze { .. } => "maze",
        }
    }

    pub fn grid(&self) -> Result<GridWorld> {
        match self {
            EnvDescriptor::Grid { size, layout: None } => Ok(GridWorld::new(GridLayout::open(*size)?)),
            EnvDescriptor::Grid { size, layout: Some(map) } => {
                let layout = GridLayout::parse(map)?;
                ensure!(layout.size() == *size, Config, "grid layout is {0}x{0}, descriptor says {size}", layout.size());
                Ok(GridWorld::new(layout))
            }
            EnvDescriptor::Maze { .. } => Err(Error::Config("descriptor is a maze, not a grid".into())),
        }
    }

    pub fn maze(&self) -> Result<PointMaze> {
        match self {
            EnvDescriptor::Maze { layout, params } => {
                let layout = match layout {
                    Some(map) => MazeLayout::parse(map)?,
                    None => MazeLayout::medium(),
                };
                Ok(PointMaze::new(layout, *params))
            }
            EnvDescriptor::Grid { .. } => Err(Error::Config("descriptor is a grid, not a maze".into())),
        }
    }
}

/// One episode: `states[0..=T]`, optionally `actions[0..T]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Option<Vec<Action>>,
    pub success: bool,
    pub seed: u64,
}

impl Trajectory {
    /// Number of transitions `T`.
    pub fn len(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.states.is_empty(), ContractViolation, "trajectory has no states");
        if let Some(actions) = &self.actions {
            ensure!(
                actions.len() + 1 == self.states.len(),
                ContractViolation,
                "trajectory has {} states but {} actions",
                self.states.len(),
                actions.len()
            );
        }
        Ok(())
    }
}

/// A set of expert trajectories sharing one environment and constraint.
#[derive(Clone, Debug, PartialEq)]
pub struct DemoDataset {
    pub env: EnvDescriptor,
    pub constraint: ActionConstraint,
    pub seed: u64,
    pub trajectories: Vec<Trajectory>,
}

impl DemoDataset {
    pub fn all_states(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.trajectories.iter().flat_map(|t| t.states.iter())
    }

    pub fn mean_length(&self) -> f64 {
        if self.trajectories.is_empty() {
            return 0.0;
        }
        self.trajectories.iter().map(|t| t.len() as f64).sum::<f64>() / self.trajectories.len() as f64
    }
}

/// Default demonstration counts: one grid demo, one hundred maze demos.
pub fn default_demo_count(env: &EnvDescriptor) -> usize {
    match env {
        EnvDescriptor::Grid { .. } => 1,
        EnvDescriptor::Maze { .. } => 100,
    }
}

/// Records the grid episode produced by following `plan` from the start.
pub fn grid_demo(env: &mut GridWorld, plan: &[GridAction], seed: u64) -> Result<Trajectory> {
    let mut states = alloc::vec![env.reset_to_start()];
    let mut actions = Vec::with_capacity(plan.len());
    let mut success = false;
    for &a in plan {
        let step = env.grid_step(a)?;
        states.push(step.observation);
        actions.push(Action::Discrete(a.index()));
        success = step.success;
        if step.done {
            break;
        }
    }
    Ok(Trajectory { states, actions: Some(actions), success, seed })
}

/// Generates `count` successful expert trajectories. Trajectory `i` draws
/// from the stream derived from `(seed, i)`, so output does not depend on
/// generation order.
pub fn generate_dataset(
    env: &EnvDescriptor,
    constraint: ActionConstraint,
    count: usize,
    seed: u64,
    controller: &MazeControllerConfig,
) -> Result<DemoDataset> {
    ensure!(count >= 1, Config, "demo count must be at least 1");
    let mut trajectories = Vec::with_capacity(count);
    match env {
        EnvDescriptor::Grid { .. } => {
            let actions: &[GridAction] = match constraint {
                ActionConstraint::Cardinal => &GridAction::CARDINAL,
                ActionConstraint::AllDirections => &GridAction::ALL,
                ActionConstraint::Bounded(_) => {
                    return Err(Error::Config("grid demos need a cardinal or all8 constraint".into()))
                }
            };
            let mut world = env.grid()?;
            let plan = bfs_plan(world.layout(), world.layout().start(), actions)?;
            for i in 0..count {
                let traj = grid_demo(&mut world, &plan, rng::derive_seed(seed, i as u64))?;
                ensure!(traj.success, Planning, "grid plan did not reach the goal");
                trajectories.push(traj);
            }
        }
        EnvDescriptor::Maze { .. } => {
            let ActionConstraint::Bounded(bound) = constraint else {
                return Err(Error::Config("maze demos need a bounded constraint".into()));
            };
            let mut maze = env.maze()?;
            for i in 0..count {
                let traj_seed = rng::derive_seed(seed, i as u64);
                let traj = maze_expert_rollout(&mut maze, bound, controller, traj_seed).map_err(|e| match e {
                    Error::Generation { attempts, .. } => Error::Generation { seed: traj_seed, index: i, attempts },
                    other => other,
                })?;
                trajectories.push(traj);
            }
        }
    }
    Ok(DemoDataset { env: env.clone(), constraint, seed, trajectories })
}

/// Replays `actions` from a reset and checks the trajectory reproduces.
/// Used to audit datasets loaded from disk.
pub fn replay_matches<E: Environment>(env: &mut E, traj: &Trajectory) -> Result<bool> {
    let Some(actions) = &traj.actions else {
        return Err(Error::Unsupported("replay needs recorded actions".into()));
    };
    let mut stream = rng::seeded(traj.seed);
    let first = env.reset(&mut stream);
    if first != traj.states[0] {
        return Ok(false);
    }
    for (a, expected) in actions.iter().zip(&traj.states[1..]) {
        if env.step(a)?.observation != *expected {
            return Ok(false);
        }
    }
    Ok(true)
}

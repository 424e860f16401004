use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::envs::{Action, ActionBound, Environment, MazeLayout, PointMaze};
use crate::error::{ensure, Error, Result};
use crate::rng;

/// Waypoint-following PD controller for maze demonstrations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MazeControllerConfig {
    pub kp: f64,
    pub kd: f64,
    /// Advance to the next waypoint once this close (in cells).
    pub switch_radius: f64,
    /// Skip ahead to the farthest waypoint in straight-line view.
    pub line_of_sight: bool,
    /// Half-width of the corridor a line-of-sight segment must clear.
    pub sight_margin: f64,
    pub retry_budget: usize,
}

impl Default for MazeControllerConfig {
    fn default() -> Self {
        Self { kp: 1.0, kd: 0.4, switch_radius: 0.4, line_of_sight: true, sight_margin: 0.3, retry_budget: 20 }
    }
}

fn segment_clear(layout: &MazeLayout, from: [f64; 2], to: [f64; 2], margin: f64) -> bool {
    const SAMPLES: usize = 50;
    (0..SAMPLES).all(|i| {
        let s = i as f64 / (SAMPLES - 1) as f64;
        let p = [from[0] + (to[0] - from[0]) * s, from[1] + (to[1] - from[1]) * s];
        [(-margin, -margin), (-margin, margin), (margin, -margin), (margin, margin)]
            .iter()
            .all(|&(dx, dy)| !layout.is_wall_at(p[0] + dx, p[1] + dy))
    })
}

/// One controller episode from a fresh reset drawn from `rng`. The returned
/// trajectory may be unsuccessful.
pub fn maze_expert_attempt<R: Rng + ?Sized>(
    maze: &mut PointMaze,
    bound: ActionBound,
    cfg: &MazeControllerConfig,
    rng: &mut R,
) -> Result<Trajectory> {
    let first = maze.reset(rng);
    let pos = maze.position();
    let start_cell = (libm::floor(pos[1]) as usize, libm::floor(pos[0]) as usize);
    let waypoints: Vec<[f64; 2]> = maze.layout().cell_path(start_cell)?.into_iter().map(MazeLayout::cell_center).collect();
    let mut current = 0;
    let mut states = alloc::vec![first];
    let mut actions = Vec::new();
    let success = loop {
        let pos = maze.position();
        if cfg.line_of_sight {
            while current + 1 < waypoints.len()
                && segment_clear(maze.layout(), pos, waypoints[current + 1], cfg.sight_margin)
            {
                current += 1;
            }
        }
        let target = waypoints[current];
        let vel = maze.velocity();
        let accel = [
            bound.clip(cfg.kp * (target[0] - pos[0]) - cfg.kd * vel[0]),
            bound.clip(cfg.kp * (target[1] - pos[1]) - cfg.kd * vel[1]),
        ];
        let step = maze.maze_step(accel)?;
        states.push(step.observation);
        actions.push(Action::Continuous(accel.to_vec()));
        let pos = maze.position();
        if current + 1 < waypoints.len() && libm::hypot(pos[0] - target[0], pos[1] - target[1]) < cfg.switch_radius {
            current += 1;
        }
        if step.done {
            break step.success;
        }
    };
    Ok(Trajectory { states, actions: Some(actions), success, seed: 0 })
}

/// Successful controller episode. Attempt `k` resets from the stream
/// derived from `(seed, k)`; that derived seed is recorded on the trajectory
/// so it can be replayed.
pub fn maze_expert_rollout(
    maze: &mut PointMaze,
    bound: ActionBound,
    cfg: &MazeControllerConfig,
    seed: u64,
) -> Result<Trajectory> {
    ensure!(cfg.retry_budget >= 1, Config, "retry budget must be at least 1");
    for attempt in 0..cfg.retry_budget {
        let attempt_seed = rng::derive_seed(seed, attempt as u64);
        let mut stream = rng::seeded(attempt_seed);
        let mut traj = maze_expert_attempt(maze, bound, cfg, &mut stream)?;
        if traj.success {
            traj.seed = attempt_seed;
            return Ok(traj);
        }
    }
    Err(Error::Generation { seed, index: 0, attempts: cfg.retry_budget })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::MazeParams;
    use crate::rng::seeded;

    fn mean_len(b: f64, n: u64) -> f64 {
        let mut maze = PointMaze::medium();
        let bound = ActionBound::new(b).unwrap();
        let cfg = MazeControllerConfig::default();
        (0..n).map(|s| maze_expert_rollout(&mut maze, bound, &cfg, s).unwrap().len() as f64).sum::<f64>() / n as f64
    }

    #[test]
    fn constrained_expert_is_slower_on_the_same_start() {
        let cfg = MazeControllerConfig::default();
        let mut maze = PointMaze::medium();
        for seed in 0..5 {
            let fast = maze_expert_attempt(&mut maze, ActionBound::FULL, &cfg, &mut seeded(seed)).unwrap();
            let slow = maze_expert_attempt(&mut maze, ActionBound::new(0.1).unwrap(), &cfg, &mut seeded(seed)).unwrap();
            assert_eq!(fast.states[0], slow.states[0]);
            assert!(fast.success && slow.success);
            assert!(slow.len() > fast.len(), "{} vs {}", slow.len(), fast.len());
        }
    }

    #[test]
    fn actions_respect_the_clip() {
        let mut maze = PointMaze::medium();
        let b = ActionBound::new(0.1).unwrap();
        let traj = maze_expert_rollout(&mut maze, b, &MazeControllerConfig::default(), 9).unwrap();
        for a in traj.actions.unwrap() {
            let Action::Continuous(v) = a else { panic!("continuous action expected") };
            assert!(v.iter().all(|x| x.abs() <= 0.1));
        }
    }

    #[test]
    fn corridor_progress_is_monotone() {
        let layout = MazeLayout::parse("##########\n#S......G#\n##########\n").unwrap();
        let params = MazeParams { start_jitter: 0.0, ..MazeParams::default() };
        let mut maze = PointMaze::new(layout, params);
        let traj = maze_expert_attempt(&mut maze, ActionBound::new(0.1).unwrap(), &MazeControllerConfig::default(), &mut seeded(0)).unwrap();
        assert!(traj.success);
        let xs: Vec<f64> = traj.states.iter().map(|s| s[0]).collect();
        assert!(xs.windows(2).all(|w| w[1] >= w[0]), "x must not decrease along the corridor");
    }

    #[test]
    fn harsher_bounds_give_longer_demos() {
        let lens: Vec<f64> = [0.7, 0.1, 0.05].iter().map(|&b| mean_len(b, 8)).collect();
        assert!(lens[0] < lens[1] && lens[1] < lens[2], "{lens:?}");
    }

    #[test]
    fn exhausted_budget_names_the_seed() {
        let params = MazeParams { max_steps: 5, ..MazeParams::default() };
        let mut maze = PointMaze::new(MazeLayout::medium(), params);
        let cfg = MazeControllerConfig { retry_budget: 3, ..MazeControllerConfig::default() };
        let err = maze_expert_rollout(&mut maze, ActionBound::new(0.1).unwrap(), &cfg, 42).unwrap_err();
        assert_eq!(err, Error::Generation { seed: 42, index: 0, attempts: 3 });
    }
}

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Action, ActionSpace, Environment, Step};
use crate::error::{ensure, Error, Result};

/// Embedded 8x8 occupancy map with a bend between the start region (top
/// left) and the goal (bottom right).
pub const MEDIUM_MAZE: &str = "\
########
#S..#..#
#S..#..#
#...#..#
#......#
###..###
#.....G#
########
";

/// Occupancy grid for the point-mass maze. Cell `(r, c)` covers
/// `x in [c, c+1)`, `y in [r, r+1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MazeLayout {
    rows: usize,
    cols: usize,
    walls: Vec<bool>,
    start_cells: Vec<(usize, usize)>,
    goal_cell: (usize, usize),
}

impl MazeLayout {
    pub fn medium() -> Self {
        Self::parse(MEDIUM_MAZE).expect("embedded maze map is valid")
    }

    /// Parses `#` wall, `.` free, `S` start-region cell (one or more), `G`
    /// goal. Every free cell must reach the goal through 4-connected free
    /// cells.
    pub fn parse(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
        ensure!(!lines.is_empty(), Config, "maze map is empty");
        let rows = lines.len();
        let cols = lines[0].chars().count();
        let mut walls = vec![false; rows * cols];
        let mut start_cells = Vec::new();
        let mut goal = None;
        for (r, line) in lines.iter().enumerate() {
            ensure!(line.chars().count() == cols, Config, "maze map row {} has wrong width", r + 1);
            for (c, ch) in line.chars().enumerate() {
                match ch {
                    '#' => walls[r * cols + c] = true,
                    '.' => {}
                    'S' => start_cells.push((r, c)),
                    'G' => {
                        ensure!(goal.is_none(), Config, "maze map has more than one goal cell");
                        goal = Some((r, c));
                    }
                    other => return Err(Error::Config(alloc::format!("unknown map character {other:?}"))),
                }
            }
        }
        ensure!(!start_cells.is_empty(), Config, "maze map has no start cell");
        let goal_cell = goal.ok_or_else(|| Error::Config("maze map has no goal cell".into()))?;
        let layout = Self { rows, cols, walls, start_cells, goal_cell };
        let parents = layout.bfs_from(goal_cell);
        for r in 0..rows {
            for c in 0..cols {
                if !layout.walls[r * cols + c] && parents[r * cols + c].is_none() && (r, c) != goal_cell {
                    return Err(Error::Config(alloc::format!("maze cell ({r}, {c}) cannot reach the goal")));
                }
            }
        }
        Ok(layout)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn start_cells(&self) -> &[(usize, usize)] {
        &self.start_cells
    }

    pub fn goal_cell(&self) -> (usize, usize) {
        self.goal_cell
    }

    pub fn is_wall_cell(&self, r: isize, c: isize) -> bool {
        r < 0 || c < 0 || r >= self.rows as isize || c >= self.cols as isize || self.walls[r as usize * self.cols + c as usize]
    }

    /// Whether the point `(x, y)` lies in a wall cell or outside the map.
    pub fn is_wall_at(&self, x: f64, y: f64) -> bool {
        self.is_wall_cell(libm::floor(y) as isize, libm::floor(x) as isize)
    }

    /// `(x, y)` of a cell center.
    pub fn cell_center(cell: (usize, usize)) -> [f64; 2] {
        [cell.1 as f64 + 0.5, cell.0 as f64 + 0.5]
    }

    /// BFS parents over 4-connected free cells from `root`.
    fn bfs_from(&self, root: (usize, usize)) -> Vec<Option<(usize, usize)>> {
        let mut parent = vec![None; self.rows * self.cols];
        let mut seen = vec![false; self.rows * self.cols];
        seen[root.0 * self.cols + root.1] = true;
        let mut queue = VecDeque::from([root]);
        while let Some((r, c)) = queue.pop_front() {
            for (dr, dc) in [(-1isize, 0isize), (1, 0), (0, 1), (0, -1)] {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if self.is_wall_cell(nr, nc) {
                    continue;
                }
                let idx = nr as usize * self.cols + nc as usize;
                if !seen[idx] {
                    seen[idx] = true;
                    parent[idx] = Some((r, c));
                    queue.push_back((nr as usize, nc as usize));
                }
            }
        }
        parent
    }

    /// Shortest 4-connected cell path from `from` to the goal, excluding
    /// `from` itself.
    pub fn cell_path(&self, from: (usize, usize)) -> Result<Vec<(usize, usize)>> {
        let parents = self.bfs_from(self.goal_cell);
        let mut path = Vec::new();
        let mut cur = from;
        while cur != self.goal_cell {
            cur = parents[cur.0 * self.cols + cur.1]
                .ok_or_else(|| Error::Planning(alloc::format!("maze cell {from:?} cannot reach the goal")))?;
            path.push(cur);
        }
        Ok(path)
    }
}

/// Physical constants of the point mass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MazeParams {
    pub dt: f64,
    pub v_max: f64,
    pub goal_radius: f64,
    pub max_steps: usize,
    /// Start positions are jittered uniformly by up to this much per axis
    /// around the chosen start-cell center.
    pub start_jitter: f64,
}

impl Default for MazeParams {
    fn default() -> Self {
        Self { dt: 0.1, v_max: 5.0, goal_radius: 0.5, max_steps: 400, start_jitter: 0.25 }
    }
}

/// Double-integrator point mass in a walled maze, driven by per-axis
/// accelerations in `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct PointMaze {
    layout: MazeLayout,
    params: MazeParams,
    pos: [f64; 2],
    vel: [f64; 2],
    goal: [f64; 2],
    steps: usize,
    done: bool,
}

/// Distance kept from a wall face after a blocked move.
const WALL_MARGIN: f64 = 1e-6;

impl PointMaze {
    pub fn new(layout: MazeLayout, params: MazeParams) -> Self {
        let goal = MazeLayout::cell_center(layout.goal_cell);
        let pos = MazeLayout::cell_center(layout.start_cells[0]);
        Self { layout, params, pos, vel: [0.0; 2], goal, steps: 0, done: false }
    }

    pub fn medium() -> Self {
        Self::new(MazeLayout::medium(), MazeParams::default())
    }

    pub fn layout(&self) -> &MazeLayout {
        &self.layout
    }

    pub fn params(&self) -> &MazeParams {
        &self.params
    }

    pub fn position(&self) -> [f64; 2] {
        self.pos
    }

    pub fn velocity(&self) -> [f64; 2] {
        self.vel
    }

    pub fn goal(&self) -> [f64; 2] {
        self.goal
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Places the mass at an arbitrary free position (scenario setup).
    pub fn set_state(&mut self, pos: [f64; 2], vel: [f64; 2]) -> Result<()> {
        ensure!(!self.layout.is_wall_at(pos[0], pos[1]), ContractViolation, "position {pos:?} is not free space");
        self.pos = pos;
        self.vel = vel;
        self.steps = 0;
        self.done = false;
        Ok(())
    }

    pub fn maze_step(&mut self, accel: [f64; 2]) -> Result<Step> {
        ensure!(!self.done, ContractViolation, "step called on a finished maze episode");
        ensure!(
            accel.iter().all(|a| a.is_finite() && a.abs() <= 1.0),
            ContractViolation,
            "acceleration {accel:?} outside [-1, 1]"
        );
        let dt = self.params.dt;
        self.vel[0] += accel[0] * dt;
        self.vel[1] += accel[1] * dt;
        let speed = libm::hypot(self.vel[0], self.vel[1]);
        if speed > self.params.v_max {
            let s = self.params.v_max / speed;
            self.vel[0] *= s;
            self.vel[1] *= s;
        }
        for axis in 0..2 {
            let mut next = self.pos;
            next[axis] += self.vel[axis] * dt;
            if self.layout.is_wall_at(next[0], next[1]) {
                // Stop at the face of the blocking cell.
                let face = if self.vel[axis] > 0.0 {
                    libm::floor(next[axis]) - WALL_MARGIN
                } else {
                    libm::floor(next[axis]) + 1.0
                };
                let mut clamped = self.pos;
                clamped[axis] = face;
                if !self.layout.is_wall_at(clamped[0], clamped[1]) {
                    self.pos = clamped;
                }
                self.vel[axis] = 0.0;
            } else {
                self.pos = next;
            }
        }
        self.steps += 1;
        let dist = libm::hypot(self.pos[0] - self.goal[0], self.pos[1] - self.goal[1]);
        let success = dist < self.params.goal_radius;
        self.done = success || self.steps >= self.params.max_steps;
        Ok(Step { observation: self.observation(), done: self.done, success })
    }
}

impl Environment for PointMaze {
    fn obs_dim(&self) -> usize {
        6
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Box(2)
    }

    fn max_steps(&self) -> usize {
        self.params.max_steps
    }

    fn steps(&self) -> usize {
        self.steps
    }

    /// Uniform start cell from the layout's start set, jittered position,
    /// zero velocity.
    fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        let cell = self.layout.start_cells[rng.gen_range(0..self.layout.start_cells.len())];
        let center = MazeLayout::cell_center(cell);
        let j = self.params.start_jitter;
        let (jx, jy) = if j > 0.0 { (rng.gen_range(-j..=j), rng.gen_range(-j..=j)) } else { (0.0, 0.0) };
        self.pos = [center[0] + jx, center[1] + jy];
        self.vel = [0.0; 2];
        self.steps = 0;
        self.done = false;
        self.observation()
    }

    fn step(&mut self, action: &Action) -> Result<Step> {
        match action {
            Action::Continuous(a) if a.len() == 2 => self.maze_step([a[0], a[1]]),
            _ => Err(Error::ContractViolation("maze takes a 2-dimensional continuous action".into())),
        }
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1], self.goal[0], self.goal[1]]
    }
}

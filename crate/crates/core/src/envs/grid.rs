use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{Action, ActionSpace, Environment, Step};
use crate::error::{ensure, Error, Result};

/// One-hot categories per cell, in observation order.
pub const CELL_CATEGORIES: usize = 4;
const WALL: usize = 0;
const EMPTY: usize = 1;
const AGENT: usize = 2;
const GOAL: usize = 3;

/// The eight grid moves in their fixed enumeration order. Rows grow
/// southward, columns grow eastward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GridAction {
    N,
    S,
    E,
    W,
    NE,
    NW,
    SE,
    SW,
}

impl GridAction {
    pub const ALL: [GridAction; 8] = [
        GridAction::N,
        GridAction::S,
        GridAction::E,
        GridAction::W,
        GridAction::NE,
        GridAction::NW,
        GridAction::SE,
        GridAction::SW,
    ];
    pub const CARDINAL: [GridAction; 4] = [GridAction::N, GridAction::S, GridAction::E, GridAction::W];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn is_cardinal(self) -> bool {
        self.index() < 4
    }

    /// `(d_row, d_col)`.
    pub fn delta(self) -> (isize, isize) {
        match self {
            GridAction::N => (-1, 0),
            GridAction::S => (1, 0),
            GridAction::E => (0, 1),
            GridAction::W => (0, -1),
            GridAction::NE => (-1, 1),
            GridAction::NW => (-1, -1),
            GridAction::SE => (1, 1),
            GridAction::SW => (1, -1),
        }
    }
}

/// Fixed square layout: walls, start and goal cells.
#[derive(Clone, Debug, PartialEq)]
pub struct GridLayout {
    size: usize,
    walls: Vec<bool>,
    start: (usize, usize),
    goal: (usize, usize),
}

impl GridLayout {
    /// Open `size x size` grid, start top-left, goal bottom-right.
    pub fn open(size: usize) -> Result<Self> {
        ensure!(size >= 2, Config, "grid size must be at least 2, got {size}");
        Ok(Self { size, walls: vec![false; size * size], start: (0, 0), goal: (size - 1, size - 1) })
    }

    /// Parses an ASCII map: `#` wall, `.` free, `S` start, `G` goal.
    /// Rejects non-square maps and maps where some free cell cannot reach
    /// the goal with eight-direction moves.
    pub fn parse(text: &str) -> Result<Self> {
        let rows: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
        let size = rows.len();
        ensure!(size >= 2, Config, "grid map needs at least 2 rows");
        let mut walls = vec![false; size * size];
        let (mut start, mut goal) = (None, None);
        for (r, row) in rows.iter().enumerate() {
            ensure!(row.chars().count() == size, Config, "grid map row {} has wrong width (map must be square)", r + 1);
            for (c, ch) in row.chars().enumerate() {
                match ch {
                    '#' => walls[r * size + c] = true,
                    '.' => {}
                    'S' => {
                        ensure!(start.is_none(), Config, "grid map has more than one start cell");
                        start = Some((r, c));
                    }
                    'G' => {
                        ensure!(goal.is_none(), Config, "grid map has more than one goal cell");
                        goal = Some((r, c));
                    }
                    other => return Err(Error::Config(alloc::format!("unknown map character {other:?}"))),
                }
            }
        }
        let start = start.ok_or_else(|| Error::Config("grid map has no start cell".into()))?;
        let goal = goal.ok_or_else(|| Error::Config("grid map has no goal cell".into()))?;
        let layout = Self { size, walls, start, goal };
        layout.validate_reachability()?;
        Ok(layout)
    }

    fn validate_reachability(&self) -> Result<()> {
        let dist = self.distances_to_goal(&GridAction::ALL);
        for r in 0..self.size {
            for c in 0..self.size {
                if !self.is_wall(r as isize, c as isize) && dist[r * self.size + c].is_none() {
                    return Err(Error::Config(alloc::format!("cell ({r}, {c}) cannot reach the goal")));
                }
            }
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn start(&self) -> (usize, usize) {
        self.start
    }

    pub fn goal(&self) -> (usize, usize) {
        self.goal
    }

    /// Out-of-bounds cells count as walls.
    pub fn is_wall(&self, r: isize, c: isize) -> bool {
        let n = self.size as isize;
        r < 0 || c < 0 || r >= n || c >= n || self.walls[r as usize * self.size + c as usize]
    }

    /// Target of `action` from `cell`, or `None` if blocked.
    pub fn target(&self, cell: (usize, usize), action: GridAction) -> Option<(usize, usize)> {
        let (dr, dc) = action.delta();
        let (r, c) = (cell.0 as isize + dr, cell.1 as isize + dc);
        (!self.is_wall(r, c)).then_some((r as usize, c as usize))
    }

    /// Shortest move counts to the goal under `actions`, per cell (row-major).
    /// Every action set used here is closed under reversal, so a forward BFS
    /// from the goal gives distances to it.
    pub fn distances_to_goal(&self, actions: &[GridAction]) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.size * self.size];
        let mut queue = VecDeque::new();
        dist[self.goal.0 * self.size + self.goal.1] = Some(0);
        queue.push_back(self.goal);
        while let Some(cell) = queue.pop_front() {
            let d = dist[cell.0 * self.size + cell.1].unwrap_or(0);
            for &a in actions {
                if let Some(next) = self.target(cell, a) {
                    let slot = &mut dist[next.0 * self.size + next.1];
                    if slot.is_none() {
                        *slot = Some(d + 1);
                        queue.push_back(next);
                    }
                }
            }
        }
        dist
    }

    /// Default episode cap `4 (N - 1)`.
    pub fn default_max_steps(&self) -> usize {
        4 * (self.size - 1)
    }

    /// One-hot observation with the agent at `agent`. The agent standing on
    /// the goal is encoded as an agent cell.
    pub fn encode(&self, agent: (usize, usize)) -> Vec<f64> {
        let mut obs = vec![0.0; CELL_CATEGORIES * self.size * self.size];
        for r in 0..self.size {
            for c in 0..self.size {
                let category = if (r, c) == agent {
                    AGENT
                } else if (r, c) == self.goal {
                    GOAL
                } else if self.walls[r * self.size + c] {
                    WALL
                } else {
                    EMPTY
                };
                obs[(r * self.size + c) * CELL_CATEGORIES + category] = 1.0;
            }
        }
        obs
    }
}

/// Grid navigation episode. The start cell is fixed, so resets are
/// deterministic.
#[derive(Clone, Debug)]
pub struct GridWorld {
    layout: GridLayout,
    agent: (usize, usize),
    steps: usize,
    max_steps: usize,
    done: bool,
}

impl GridWorld {
    pub fn new(layout: GridLayout) -> Self {
        let max_steps = layout.default_max_steps();
        Self { agent: layout.start, layout, steps: 0, max_steps, done: false }
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn layout(&self) -> &GridLayout {
        &self.layout
    }

    pub fn agent(&self) -> (usize, usize) {
        self.agent
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Moves the agent to an arbitrary free cell (scenario setup).
    pub fn place_agent(&mut self, cell: (usize, usize)) -> Result<()> {
        ensure!(
            !self.layout.is_wall(cell.0 as isize, cell.1 as isize),
            ContractViolation,
            "cannot place the agent on a wall or outside the grid"
        );
        self.agent = cell;
        Ok(())
    }

    pub fn reset_to_start(&mut self) -> Vec<f64> {
        self.agent = self.layout.start;
        self.steps = 0;
        self.done = false;
        self.observation()
    }

    pub fn grid_step(&mut self, action: GridAction) -> Result<Step> {
        ensure!(!self.done, ContractViolation, "step called on a finished grid episode");
        if let Some(next) = self.layout.target(self.agent, action) {
            self.agent = next;
        }
        self.steps += 1;
        let success = self.agent == self.layout.goal;
        self.done = success || self.steps >= self.max_steps;
        Ok(Step { observation: self.observation(), done: self.done, success })
    }
}

impl Environment for GridWorld {
    fn obs_dim(&self) -> usize {
        CELL_CATEGORIES * self.layout.size * self.layout.size
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(GridAction::ALL.len())
    }

    fn max_steps(&self) -> usize {
        self.max_steps
    }

    fn steps(&self) -> usize {
        self.steps
    }

    fn reset<R: Rng + ?Sized>(&mut self, _rng: &mut R) -> Vec<f64> {
        self.reset_to_start()
    }

    fn step(&mut self, action: &Action) -> Result<Step> {
        match action {
            Action::Discrete(i) => {
                let a = GridAction::from_index(*i)
                    .ok_or_else(|| Error::ContractViolation(alloc::format!("grid action index {i} out of range")))?;
                self.grid_step(a)
            }
            Action::Continuous(_) => Err(Error::ContractViolation("grid world takes discrete actions".into())),
        }
    }

    fn observation(&self) -> Vec<f64> {
        self.layout.encode(self.agent)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn open8() -> GridWorld {
        GridWorld::new(GridLayout::open(8).unwrap())
    }

    #[test]
    fn east_moves_one_cell() {
        let mut env = open8();
        let step = env.grid_step(GridAction::E).unwrap();
        assert_eq!(env.agent(), (0, 1));
        assert!(!step.done);
    }

    #[test]
    fn out_of_bounds_is_noop() {
        let mut env = open8();
        env.grid_step(GridAction::NW).unwrap();
        assert_eq!(env.agent(), (0, 0));
    }

    #[test]
    fn diagonal_into_goal_succeeds() {
        let mut env = open8();
        env.place_agent((6, 6)).unwrap();
        let step = env.grid_step(GridAction::SE).unwrap();
        assert!(step.done && step.success);
        assert!(env.grid_step(GridAction::N).is_err());
    }

    #[test]
    fn episode_cap() {
        let mut env = open8();
        assert_eq!(env.max_steps, 28);
        let mut last = None;
        for _ in 0..28 {
            last = Some(env.grid_step(GridAction::N).unwrap());
        }
        let last = last.unwrap();
        assert!(last.done && !last.success);
    }

    #[test]
    fn reset_is_deterministic() {
        let mut env = open8();
        let a = env.reset(&mut seeded(1));
        env.grid_step(GridAction::SE).unwrap();
        let b = env.reset(&mut seeded(99));
        assert_eq!(a, b);
    }

    #[test]
    fn observation_is_one_hot() {
        let env = open8();
        let obs = env.observation();
        assert_eq!(obs.len(), 4 * 64);
        for cell in obs.chunks(4) {
            assert_eq!(cell.iter().sum::<f64>(), 1.0);
        }
        let agents = obs.chunks(4).filter(|c| c[AGENT] == 1.0).count();
        let goals = obs.chunks(4).filter(|c| c[GOAL] == 1.0).count();
        assert_eq!((agents, goals), (1, 1));
    }

    #[test]
    fn walls_block_and_parse() {
        let layout = GridLayout::parse("S.#\n..#\n..G\n").unwrap();
        let mut env = GridWorld::new(layout);
        env.grid_step(GridAction::E).unwrap();
        env.grid_step(GridAction::E).unwrap();
        assert_eq!(env.agent(), (0, 1));
    }

    #[test]
    fn unreachable_map_rejected() {
        assert!(GridLayout::parse("S.#\n###\n#.G\n").is_err());
        assert!(GridLayout::parse("S..\n...\n").is_err());
    }
}

//! Run configuration. Every field has a default, unknown keys are rejected,
//! and a snapshot of the resolved configuration is written beside each run.

use std::fs;
use std::path::{Path, PathBuf};

use grip_core::baselines::{AlgoVariant, BcConfig};
use grip_core::envs::{ActionBound, ActionConstraint};
use grip_core::experts::{default_demo_count, EnvDescriptor, MazeControllerConfig};
use grip_core::nnkit::Activation;
use grip_core::ppo::TrainConfig;
use grip_core::rng;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, IoContext, Result};

/// Stream used to derive the evaluation seed from the run seed.
const EVAL_STREAM: u64 = 0xE7A1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemoConfig {
    /// Trajectories to generate; the environment default when absent.
    pub count: Option<usize>,
    /// Load this dataset instead of generating one.
    pub path: Option<PathBuf>,
    /// Generation seed; the run seed when absent.
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes: usize,
    /// Seed of the evaluation reset stream; derived from the run seed when
    /// absent.
    pub seed: Option<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { episodes: 160, seed: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub env: EnvDescriptor,
    /// Action space of the demonstrator.
    pub expert_constraint: ActionConstraint,
    /// Per-component clip applied to the agent's maze actions; `None` leaves
    /// the full `[-1, 1]` range.
    pub agent_bound: Option<f64>,
    pub variant: AlgoVariant,
    pub seed: u64,
    pub demos: DemoConfig,
    pub controller: MazeControllerConfig,
    pub train: TrainConfig,
    pub bc: BcConfig,
    pub eval: EvalConfig,
    /// Write intermediate checkpoints every this many iterations (0: final only).
    pub checkpoint_every: usize,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::grid()
    }
}

impl ExperimentConfig {
    /// Open 8x8 grid with one cardinal demonstration; the agent moves in all
    /// eight directions.
    pub fn grid() -> Self {
        let mut train = TrainConfig::default();
        train.iterations = 150;
        train.rollout_size = 2048;
        train.ppo.gamma = 0.95;
        train.policy.activation = Activation::Relu;
        train.proximity.activation = Activation::Relu;
        train.proximity.pretrain_epochs = 2;
        // Masks must fade before the policy's entropy collapses, or states
        // off the demonstrated path settle as low-proximity anchors.
        train.confidence.anneal_horizon = Some(40);
        Self {
            env: EnvDescriptor::open_grid(8),
            expert_constraint: ActionConstraint::Cardinal,
            agent_bound: None,
            variant: AlgoVariant::Grip,
            seed: 0,
            demos: DemoConfig::default(),
            controller: MazeControllerConfig::default(),
            train,
            bc: BcConfig::default(),
            eval: EvalConfig::default(),
            checkpoint_every: 0,
            output_dir: PathBuf::from("runs/grid"),
        }
    }

    /// Medium point-mass maze with experts clipped to `[-b, b]` per axis.
    pub fn maze(b: f64) -> Result<Self> {
        let bound = ActionBound::new(b)?;
        let mut train = TrainConfig::default();
        train.iterations = 100;
        train.rollout_size = 4096;
        train.ppo.gamma = 0.95;
        train.policy.activation = Activation::Tanh;
        train.proximity.activation = Activation::Tanh;
        train.proximity.pretrain_epochs = 10;
        // Holds the expert fit against the much larger rollout pools.
        train.proximity.updates_per_iteration = 200;
        Ok(Self {
            env: EnvDescriptor::medium_maze(),
            expert_constraint: ActionConstraint::Bounded(bound),
            train,
            output_dir: PathBuf::from("runs/maze"),
            ..Self::grid()
        })
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| HarnessError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        Self::from_json(&text, path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).at(path)
    }

    pub fn demo_count(&self) -> usize {
        self.demos.count.unwrap_or_else(|| default_demo_count(&self.env))
    }

    pub fn demo_seed(&self) -> u64 {
        self.demos.seed.unwrap_or(self.seed)
    }

    pub fn eval_seed(&self) -> u64 {
        self.eval.seed.unwrap_or_else(|| rng::derive_seed(self.seed, EVAL_STREAM))
    }

    /// Training configuration with the variant's flags applied.
    pub fn resolved_train(&self) -> Result<TrainConfig> {
        let mut t = self.train.clone();
        if self.variant.uses_rl() {
            self.variant.configure(&mut t)?;
        }
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let config = |msg: String| Err(HarnessError::Config(msg));
        match (&self.env, self.expert_constraint) {
            (EnvDescriptor::Grid { .. }, ActionConstraint::Bounded(_)) => {
                return config("grid experts need a cardinal or all8 constraint".into())
            }
            (EnvDescriptor::Maze { .. }, ActionConstraint::Cardinal | ActionConstraint::AllDirections) => {
                return config("maze experts need a bounded constraint".into())
            }
            _ => {}
        }
        if let Some(b) = self.agent_bound {
            if !matches!(self.env, EnvDescriptor::Maze { .. }) {
                return config("agent_bound only applies to the maze".into());
            }
            ActionBound::new(b)?;
        }
        if self.eval.episodes == 0 {
            return config("eval.episodes must be positive".into());
        }
        if self.demos.count == Some(0) {
            return config("demos.count must be positive".into());
        }
        self.resolved_train()?.validate()?;
        Ok(())
    }
}

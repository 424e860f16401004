//! JSON-lines demonstration files: a header record, then one trajectory per
//! line. Floats are written in shortest round-trip form, so a saved dataset
//! loads back bit-identical.

use std::fs;
use std::io::Write;
use std::path::Path;

use grip_core::envs::{Action, ActionConstraint};
use grip_core::experts::{DemoDataset, EnvDescriptor, Trajectory};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, IoContext, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema_version: u32,
    env: EnvDescriptor,
    constraint: ActionConstraint,
    seed: u64,
    count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    states: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    actions: Option<Vec<Action>>,
    success: bool,
    length: usize,
    seed: u64,
}

pub fn to_jsonl(ds: &DemoDataset) -> String {
    let header = Header {
        schema_version: SCHEMA_VERSION,
        env: ds.env.clone(),
        constraint: ds.constraint,
        seed: ds.seed,
        count: ds.trajectories.len(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for t in &ds.trajectories {
        let rec = Record {
            states: t.states.clone(),
            actions: t.actions.clone(),
            success: t.success,
            length: t.len(),
            seed: t.seed,
        };
        out.push_str(&serde_json::to_string(&rec).expect("trajectory serializes"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl(text: &str, path: &Path) -> Result<DemoDataset> {
    let err = |line: usize, message: String| HarnessError::Parse { path: path.to_path_buf(), line, message };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, first) = lines.next().ok_or_else(|| err(1, "missing header line".into()))?;
    let header: Header = serde_json::from_str(first).map_err(|e| err(1, e.to_string()))?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(err(1, format!("unsupported schema version {}", header.schema_version)));
    }
    let mut trajectories = Vec::with_capacity(header.count);
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(line).map_err(|e| err(n, e.to_string()))?;
        let traj = Trajectory { states: rec.states, actions: rec.actions, success: rec.success, seed: rec.seed };
        traj.validate().map_err(|e| err(n, e.to_string()))?;
        if traj.len() != rec.length {
            return Err(err(n, format!("length {} does not match {} states", rec.length, traj.states.len())));
        }
        trajectories.push(traj);
    }
    if trajectories.len() != header.count {
        return Err(err(1, format!("header announces {} trajectories, found {}", header.count, trajectories.len())));
    }
    Ok(DemoDataset { env: header.env, constraint: header.constraint, seed: header.seed, trajectories })
}

pub fn save_dataset(ds: &DemoDataset, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path).at(path)?;
    f.write_all(to_jsonl(ds).as_bytes()).at(path)
}

pub fn load_dataset(path: &Path) -> Result<DemoDataset> {
    let text = fs::read_to_string(path).at(path)?;
    from_jsonl(&text, path)
}

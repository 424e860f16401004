//! Binary parameter checkpoints.
//!
//! Layout: the 8 bytes `GRIPCKPT`, a little-endian `u32` format version, a
//! little-endian `u64` header length, the UTF-8 JSON header, then every
//! parameter as a little-endian `f64`. Network parameters are stored layer by
//! layer, row-major weights (`out_dim` rows of `in_dim`) followed by biases.

use std::fs;
use std::path::{Path, PathBuf};

use grip_core::nnkit::{Layer, Mlp, MlpSpec};
use grip_core::ppo::{Head, Policy};
use grip_core::proximity::ProximityEnsemble;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, IoContext, Result};

pub const MAGIC: &[u8; 8] = b"GRIPCKPT";
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

fn bad(path: &Path, message: impl Into<String>) -> HarnessError {
    HarnessError::Checkpoint { path: path.to_path_buf(), message: message.into() }
}

pub fn encode<H: Serialize>(header: &H, params: &[f64]) -> Vec<u8> {
    let json = serde_json::to_vec(header).expect("checkpoint header serializes");
    let mut out = Vec::with_capacity(20 + json.len() + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode<H: DeserializeOwned>(bytes: &[u8], path: &Path) -> Result<(H, Vec<f64>)> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad(path, "missing magic bytes"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(path, format!("unsupported format version {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[20..];
    if body.len() < len {
        return Err(bad(path, "header runs past end of file"));
    }
    let header = serde_json::from_slice(&body[..len]).map_err(|e| bad(path, e.to_string()))?;
    let payload = &body[len..];
    if !payload.len().is_multiple_of(8) {
        return Err(bad(path, "payload is not a whole number of f64 values"));
    }
    let params = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((header, params))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).at(path)
}

fn read_file<H: DeserializeOwned>(path: &Path) -> Result<(H, Vec<f64>)> {
    let bytes = fs::read(path).at(path)?;
    decode(&bytes, path)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkHeader {
    spec: MlpSpec,
    layers: Vec<(usize, usize)>,
    seed: Option<u64>,
    params: usize,
}

fn build_mlp(spec: MlpSpec, flat: &[f64], path: &Path) -> Result<Mlp> {
    let layers = spec.layer_dims().into_iter().map(|(i, o)| Layer::zeros(i, o)).collect();
    let mut mlp = Mlp::from_layers(spec, layers).map_err(|e| bad(path, e.to_string()))?;
    mlp.set_params_flat(flat).map_err(|e| bad(path, e.to_string()))?;
    Ok(mlp)
}

pub fn save_mlp(mlp: &Mlp, seed: Option<u64>, path: &Path) -> Result<()> {
    let spec = mlp.spec().clone();
    let header = NetworkHeader { layers: spec.layer_dims(), params: spec.num_params(), spec, seed };
    write_file(path, &encode(&header, &mlp.params_flat()))
}

pub fn load_mlp(path: &Path) -> Result<(Mlp, Option<u64>)> {
    let (h, params): (NetworkHeader, _) = read_file(path)?;
    if h.layers != h.spec.layer_dims() || h.params != params.len() {
        return Err(bad(path, "layer shapes disagree with the stored parameters"));
    }
    Ok((build_mlp(h.spec, &params, path)?, h.seed))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum HeadHeader {
    Categorical { actions: usize },
    Gaussian { dims: usize },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyHeader {
    actor: MlpSpec,
    critic: MlpSpec,
    head: HeadHeader,
    params: usize,
}

/// Actor parameters, then critic parameters, then the log-std vector of a
/// Gaussian head.
pub fn save_policy(policy: &Policy, path: &Path) -> Result<()> {
    let mut params = policy.actor().params_flat();
    params.extend(policy.critic().params_flat());
    let head = match policy.head() {
        Head::Categorical { actions } => HeadHeader::Categorical { actions: *actions },
        Head::Gaussian { log_std } => {
            params.extend_from_slice(log_std);
            HeadHeader::Gaussian { dims: log_std.len() }
        }
    };
    let header = PolicyHeader {
        actor: policy.actor().spec().clone(),
        critic: policy.critic().spec().clone(),
        head,
        params: params.len(),
    };
    write_file(path, &encode(&header, &params))
}

pub fn load_policy(path: &Path) -> Result<Policy> {
    let (h, params): (PolicyHeader, Vec<f64>) = read_file(path)?;
    let na = h.actor.num_params();
    let nc = h.critic.num_params();
    let extra = match h.head {
        HeadHeader::Categorical { .. } => 0,
        HeadHeader::Gaussian { dims } => dims,
    };
    if params.len() != na + nc + extra || h.params != params.len() {
        return Err(bad(path, "parameter count disagrees with the header"));
    }
    let actor = build_mlp(h.actor, &params[..na], path)?;
    let critic = build_mlp(h.critic, &params[na..na + nc], path)?;
    let head = match h.head {
        HeadHeader::Categorical { actions } => Head::Categorical { actions },
        HeadHeader::Gaussian { .. } => Head::Gaussian { log_std: params[na + nc..].to_vec() },
    };
    Policy::from_parts(actor, critic, head).map_err(|e| bad(path, e.to_string()))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    delta: f64,
    members: usize,
    spec: MlpSpec,
    seeds: Vec<u64>,
    files: Vec<String>,
}

/// Writes `manifest.json` plus one network checkpoint per member into `dir`.
pub fn save_ensemble(ens: &ProximityEnsemble, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    let files: Vec<String> = (0..ens.len()).map(|k| format!("member_{k}.ckpt")).collect();
    for ((m, seed), file) in ens.members().iter().zip(ens.seeds()).zip(&files) {
        save_mlp(m, Some(*seed), &dir.join(file))?;
    }
    let manifest = Manifest {
        delta: ens.delta(),
        members: ens.len(),
        spec: ens.spec().clone(),
        seeds: ens.seeds().to_vec(),
        files,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).at(&path)
}

pub fn load_ensemble(dir: &Path) -> Result<ProximityEnsemble> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).at(&path)?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| bad(&path, e.to_string()))?;
    if m.files.len() != m.members || m.seeds.len() != m.members {
        return Err(bad(&path, "member count disagrees with the file list"));
    }
    let mut members = Vec::with_capacity(m.members);
    for file in &m.files {
        let member_path: PathBuf = dir.join(file);
        let (mlp, _) = load_mlp(&member_path)?;
        if mlp.spec() != &m.spec {
            return Err(bad(&member_path, "member architecture differs from the manifest"));
        }
        members.push(mlp);
    }
    Ok(ProximityEnsemble::from_members(members, m.delta, m.seeds)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use grip_core::envs::ActionSpace;
    use grip_core::nnkit::{Activation, OutputSquash};
    use grip_core::ppo::PolicyConfig;
    use grip_core::rng::seeded;

    fn net() -> Mlp {
        let spec = MlpSpec::new(3, vec![4, 5], 2).with_activation(Activation::Tanh).with_dropout(0.1).with_squash(OutputSquash::Sigmoid);
        Mlp::new(spec, &mut seeded(4)).unwrap()
    }

    #[test]
    fn mlp_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let m = net();
        save_mlp(&m, Some(7), &path).unwrap();
        let (back, seed) = load_mlp(&path).unwrap();
        assert_eq!(seed, Some(7));
        assert!(m.params_flat().iter().zip(back.params_flat()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back, m);
    }

    #[test]
    fn byte_layout() {
        let m = net();
        let bytes = encode(&"h", &m.params_flat());
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), FORMAT_VERSION);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 3);
        let first = f64::from_le_bytes(bytes[23..31].try_into().unwrap());
        assert_eq!(first, m.layers()[0].weights[0]);
        assert_eq!(bytes.len(), 23 + 8 * m.spec().num_params());
    }

    #[test]
    fn corrupt_files_rejected() {
        let p = Path::new("x.ckpt");
        assert!(decode::<String>(b"nope", p).is_err());
        let mut bytes = encode(&"h", &[1.0, 2.0]);
        bytes.pop();
        assert!(decode::<String>(&bytes, p).is_err());
    }

    #[test]
    fn policies_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for space in [ActionSpace::Discrete(8), ActionSpace::Box(2)] {
            let p = Policy::new(6, space, &PolicyConfig::default(), &mut seeded(1)).unwrap();
            let path = dir.path().join("policy.ckpt");
            save_policy(&p, &path).unwrap();
            assert_eq!(load_policy(&path).unwrap(), p);
        }
    }

    #[test]
    fn ensemble_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = MlpSpec::new(4, vec![8], 1).with_squash(OutputSquash::Sigmoid);
        let ens = ProximityEnsemble::new(spec, 3, 0.95, 11).unwrap();
        save_ensemble(&ens, dir.path()).unwrap();
        let back = load_ensemble(dir.path()).unwrap();
        assert_eq!(back.seeds(), ens.seeds());
        assert_eq!(back.members(), ens.members());
        assert_eq!(back.delta(), 0.95);
    }
}

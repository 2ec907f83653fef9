//! Versioned JSON checkpoint: topology descriptor, flat parameter vectors and
//! normalizer state.
//!
//! ```json
//! {
//!   "format": "genbench-checkpoint",
//!   "version": 1,
//!   "topology": {"kind": "mlp", "width": 64, "obs_dim": 2, "act_dim": 1},
//!   "policy_params": [...],
//!   "value_params": [...],
//!   "normalizer": {"count": 2048, "mean": [...], "m2": [...], "clip": 10.0}
//! }
//! ```
//!
//! Parameters are written as `f64` with shortest round-trip formatting, so a
//! save/load cycle is bit-exact for both `f32` and `f64` agents.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Agent, GaussianPolicy, RunningNormalizer, Topology, ValueNet};
use crate::error::{BenchError, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "genbench-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizerRecord {
    pub count: u64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
    pub clip: f64,
}

/// On-disk checkpoint record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub topology: Topology,
    pub policy_params: Vec<f64>,
    pub value_params: Vec<f64>,
    pub normalizer: NormalizerRecord,
}

fn to_f64s<T: Scalar>(xs: &[T]) -> Vec<f64> {
    xs.iter().map(|x| x.as_f64()).collect()
}

fn from_f64s<T: Scalar>(xs: &[f64]) -> Vec<T> {
    xs.iter().map(|&x| T::lit(x)).collect()
}

impl Checkpoint {
    pub fn from_agent<T: Scalar>(agent: &Agent<T>) -> Self {
        let (count, mean, m2, clip) = agent.normalizer.to_parts();
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            topology: agent.topology(),
            policy_params: to_f64s(agent.policy.params()),
            value_params: to_f64s(agent.value.params()),
            normalizer: NormalizerRecord {
                count,
                mean: to_f64s(mean),
                m2: to_f64s(m2),
                clip: clip.as_f64(),
            },
        }
    }

    pub fn into_agent<T: Scalar>(self) -> Result<Agent<T>> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(BenchError::Checkpoint(format!("unexpected format `{}`", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(BenchError::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let topo = self.topology;
        if self.normalizer.mean.len() != topo.obs_dim || self.normalizer.m2.len() != topo.obs_dim {
            return Err(BenchError::Checkpoint("normalizer dimension mismatch".into()));
        }
        Ok(Agent {
            policy: GaussianPolicy::from_params(topo, from_f64s(&self.policy_params))?,
            value: ValueNet::from_params(topo.width, topo.obs_dim, from_f64s(&self.value_params))?,
            normalizer: RunningNormalizer::from_parts(
                self.normalizer.count,
                from_f64s(&self.normalizer.mean),
                from_f64s(&self.normalizer.m2),
                T::lit(self.normalizer.clip),
            ),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| BenchError::Checkpoint(e.to_string()))
    }
}

pub fn save_checkpoint<T: Scalar>(agent: &Agent<T>, path: &Path) -> Result<()> {
    let text = Checkpoint::from_agent(agent).to_json();
    fs::write(path, text)
        .map_err(|e| BenchError::Checkpoint(format!("writing {}: {e}", path.display())))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Agent<T>> {
    let text = fs::read_to_string(path)
        .map_err(|e| BenchError::Checkpoint(format!("reading {}: {e}", path.display())))?;
    Checkpoint::from_json(&text)?.into_agent()
}

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::checkpoint::{load_json, save_json, CHECKPOINT_SCHEMA};
use crate::nn::{Checkpoint, GaussianPolicy, Mlp, Normalizer, HEAD_LINEAR};
use crate::trainers::iql::InSampleAudit;
use crate::trainers::TrainHistory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Bc,
    Iql,
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentKind::Bc => "bc",
            AgentKind::Iql => "iql",
        })
    }
}

impl FromStr for AgentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bc" => Ok(AgentKind::Bc),
            "iql" => Ok(AgentKind::Iql),
            other => Err(Error::Config(format!("unknown agent kind `{other}`"))),
        }
    }
}

/// A trained agent: the policy plus, for IQL, its critics.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentBundle {
    pub kind: AgentKind,
    pub policy: GaussianPolicy,
    pub q: Option<Mlp>,
    pub target_q: Option<Mlp>,
    pub v: Option<Mlp>,
    pub obs_norm: Normalizer,
    pub history: TrainHistory,
    pub audit: Option<InSampleAudit>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    kind: AgentKind,
    obs_norm: Normalizer,
    networks: BTreeMap<String, Checkpoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    audit: Option<InSampleAudit>,
}

impl AgentBundle {
    /// Deterministic action (squashed policy mean).
    pub fn act(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.policy.act(obs)
    }

    /// Writes the bundle manifest; the loss history is not part of it (see
    /// [`TrainHistory::save_csv`]).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut networks = BTreeMap::new();
        networks.insert("policy".to_string(), self.policy.to_checkpoint());
        for (name, net) in [("q", &self.q), ("target_q", &self.target_q), ("v", &self.v)] {
            if let Some(m) = net {
                networks.insert(name.to_string(), Checkpoint::from_mlp(m, HEAD_LINEAR));
            }
        }
        let manifest = Manifest {
            schema_version: CHECKPOINT_SCHEMA,
            kind: self.kind,
            obs_norm: self.obs_norm.clone(),
            networks,
            audit: self.audit.clone(),
        };
        save_json(&manifest, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Manifest = load_json(path)?;
        if m.schema_version != CHECKPOINT_SCHEMA {
            return Err(Error::Schema(format!("agent bundle schema {}", m.schema_version)));
        }
        let policy = GaussianPolicy::from_checkpoint(
            m.networks.get("policy").ok_or_else(|| Error::Schema("bundle lacks a policy network".into()))?,
        )?;
        let critic = |name: &str| m.networks.get(name).map(|c| c.to_mlp(HEAD_LINEAR)).transpose();
        let bundle = Self {
            kind: m.kind,
            q: critic("q")?,
            target_q: critic("target_q")?,
            v: critic("v")?,
            policy,
            obs_norm: m.obs_norm,
            history: TrainHistory::default(),
            audit: m.audit,
        };
        if bundle.kind == AgentKind::Iql && (bundle.q.is_none() || bundle.v.is_none() || bundle.target_q.is_none()) {
            return Err(Error::Schema("IQL bundle lacks critic networks".into()));
        }
        Ok(bundle)
    }
}

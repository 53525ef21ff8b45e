use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::gaussian::GaussianPolicy;
use crate::nn::mlp::{Activation, Mlp, MlpArch};
use crate::nn::normalizer::Normalizer;

pub const CHECKPOINT_SCHEMA: u32 = 1;

pub const HEAD_LINEAR: &str = "linear";
pub const HEAD_TANH_GAUSSIAN: &str = "tanh_gaussian";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchDescriptor {
    pub dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub head: String,
}

/// A single network: architecture descriptor plus flat weights.
///
/// `extra` carries model-specific blocks such as normalization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub arch: ArchDescriptor,
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl Checkpoint {
    pub fn from_mlp(m: &Mlp, head: &str) -> Self {
        Self {
            schema_version: CHECKPOINT_SCHEMA,
            arch: ArchDescriptor { dims: m.arch().dims.clone(), activations: m.arch().activations.clone(), head: head.into() },
            weights: m.params().to_vec(),
            extra: BTreeMap::new(),
        }
    }

    pub fn check(&self, head: &str) -> Result<()> {
        if self.schema_version != CHECKPOINT_SCHEMA {
            return Err(Error::Schema(format!("checkpoint schema {} (expected {CHECKPOINT_SCHEMA})", self.schema_version)));
        }
        if self.arch.head != head {
            return Err(Error::ArchMismatch(format!("head `{}` where `{head}` was expected", self.arch.head)));
        }
        Ok(())
    }

    fn mlp_arch(&self) -> MlpArch {
        MlpArch { dims: self.arch.dims.clone(), activations: self.arch.activations.clone() }
    }

    pub fn to_mlp(&self, head: &str) -> Result<Mlp> {
        self.check(head)?;
        Mlp::from_params(self.mlp_arch(), self.weights.clone()).map_err(|e| match e {
            Error::DimMismatch { expected, got } => Error::ArchMismatch(format!("{got} weights for an architecture with {expected}")),
            other => other,
        })
    }

    /// Like [`Checkpoint::to_mlp`] but also requires an exact architecture.
    pub fn to_mlp_with(&self, head: &str, expected: &MlpArch) -> Result<Mlp> {
        let m = self.to_mlp(head)?;
        if m.arch() != expected {
            return Err(Error::ArchMismatch(format!("stored {:?}, expected {:?}", m.arch(), expected)));
        }
        Ok(m)
    }

    pub fn with_extra<T: Serialize>(mut self, key: &str, value: &T) -> Self {
        self.extra.insert(key.into(), serde_json::to_value(value).expect("serializable"));
        self
    }

    pub fn extra<T: DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self.extra.get(key).ok_or_else(|| Error::Schema(format!("checkpoint lacks `{key}` block")))?;
        Ok(serde_json::from_value(v.clone())?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_json(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        load_json(path)
    }
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

impl GaussianPolicy {
    /// Trunk weights followed by the log-std vector.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::from_mlp(&self.net, HEAD_TANH_GAUSSIAN);
        c.weights.extend_from_slice(&self.log_std);
        c.with_extra("normalizer", &self.normalizer)
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.check(HEAD_TANH_GAUSSIAN)?;
        let arch = c.mlp_arch();
        arch.validate()?;
        let n = arch.n_params();
        let act_dim = arch.output_dim();
        if c.weights.len() != n + act_dim {
            return Err(Error::ArchMismatch(format!("{} weights, expected {}", c.weights.len(), n + act_dim)));
        }
        let net = Mlp::from_params(arch, c.weights[..n].to_vec())?;
        let normalizer: Normalizer = c.extra("normalizer")?;
        if normalizer.dim() != net.arch().input_dim() {
            return Err(Error::ArchMismatch("normalizer width differs from policy input".into()));
        }
        Ok(Self { net, log_std: c.weights[n..].to_vec(), normalizer })
    }
}

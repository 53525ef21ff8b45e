use ndarray::Axis;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::TransitionArrays;
use crate::error::{Error, Result};
use crate::nn::gaussian::unsquash_batch;
use crate::nn::{minibatches, Adam, CosineSchedule, GaussianPolicy, Normalizer};
use crate::trainers::bundle::{AgentBundle, AgentKind};
use crate::trainers::{check_finite, TrainHistory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BcConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub cosine: bool,
    pub seed: u64,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self { hidden: vec![256, 256], lr: 3e-4, epochs: 200, batch_size: 512, cosine: false, seed: 0 }
    }
}

impl BcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) || self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::Config(format!("invalid BC config {self:?}")));
        }
        Ok(())
    }
}

/// Gaussian NLL regression of logged actions.
pub fn train_bc(data: &TransitionArrays, cfg: &BcConfig) -> Result<AgentBundle> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let norm = Normalizer::fit(data.obs.view())?;
    let mut policy = GaussianPolicy::new(data.obs.ncols(), data.actions.ncols(), &cfg.hidden, norm.clone(), &mut rng)?;
    let targets = unsquash_batch(data.actions.view());
    let mut adam_net = Adam::new(policy.net.params().len());
    let mut adam_std = Adam::new(policy.log_std.len());
    let steps = (data.len().div_ceil(cfg.batch_size) * cfg.epochs) as u64;
    let schedule = if cfg.cosine { CosineSchedule::new(cfg.lr, steps) } else { CosineSchedule::constant(cfg.lr) };
    let mut history = TrainHistory::new(&["nll"]);
    rng.set_stream(1);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for idx in minibatches(data.len(), cfg.batch_size, &mut rng) {
            let obs = data.obs.select(Axis(0), &idx);
            let u = targets.select(Axis(0), &idx);
            let g = policy.weighted_nll(obs.view(), u.view(), None)?;
            check_finite(epoch, "BC loss", g.loss)?;
            total += g.loss * idx.len() as f64;
            let lr = schedule.lr(adam_net.t);
            adam_net.step(policy.net.params_mut(), &g.net, lr);
            adam_std.step(&mut policy.log_std, &g.log_std, lr);
            policy.clamp_log_std();
        }
        history.push(vec![total / data.len() as f64]);
    }
    Ok(AgentBundle { kind: AgentKind::Bc, policy, q: None, target_q: None, v: None, obs_norm: norm, history, audit: None })
}

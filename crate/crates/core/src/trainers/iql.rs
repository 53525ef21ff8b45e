//! Implicit Q-learning.
//!
//! Per minibatch: expectile regression of `V(s)` onto target-Q values, a
//! TD update of `Q(s, a)` bootstrapping through `V(s')`, an
//! advantage-weighted likelihood step for the policy, then a soft update of
//! the target Q. Every network evaluation uses dataset actions only.

use std::cell::Cell;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::TransitionArrays;
use crate::error::{Error, Result};
use crate::nn::gaussian::{unsquash_batch, NllGrads};
use crate::nn::mlp::concat_cols;
use crate::nn::{minibatches, soft_update, Activation, Adam, CosineSchedule, GaussianPolicy, Mlp, MlpArch, Normalizer};
use crate::trainers::bundle::{AgentBundle, AgentKind};
use crate::trainers::{check_finite, expectile_grad, expectile_loss, TrainHistory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IqlConfig {
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub tau: f64,
    pub beta: f64,
    pub soft_update: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub cosine: bool,
    pub weight_clip: f64,
    pub seed: u64,
}

impl Default for IqlConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            gamma: 0.9,
            tau: 0.9,
            beta: 5.0,
            soft_update: 0.05,
            batch_size: 512,
            epochs: 2000,
            lr: 3e-4,
            cosine: true,
            weight_clip: 100.0,
            seed: 0,
        }
    }
}

impl IqlConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tau > 0.0
            && self.tau < 1.0
            && self.beta >= 0.0
            && (0.0..=1.0).contains(&self.gamma)
            && (0.0..=1.0).contains(&self.soft_update)
            && self.batch_size > 0
            && self.lr > 0.0
            && self.weight_clip > 0.0
            && !self.hidden.is_empty()
            && !self.hidden.contains(&0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid IQL config {self:?}")))
        }
    }
}

/// A minibatch in network-ready form.
#[derive(Debug, Clone)]
pub struct Batch {
    /// Raw observations (the policy normalizes internally).
    pub obs: Array2<f64>,
    /// Normalized observations and next observations for Q and V.
    pub s: Array2<f64>,
    pub s_next: Array2<f64>,
    pub actions: Array2<f64>,
    /// Pre-squash action targets for the policy likelihood.
    pub u: Array2<f64>,
    pub rewards: Array1<f64>,
    pub dones: Array1<f64>,
}

impl Batch {
    pub fn from_rows(data: &TransitionArrays, norm: &Normalizer, idx: &[usize]) -> Result<Self> {
        let obs = data.obs.select(Axis(0), idx);
        let actions = data.actions.select(Axis(0), idx);
        Ok(Self {
            s: norm.apply(obs.view())?,
            s_next: norm.apply(data.next_obs.select(Axis(0), idx).view())?,
            u: unsquash_batch(actions.view()),
            obs,
            actions,
            rewards: data.rewards.select(Axis(0), idx),
            dones: data.dones.select(Axis(0), idx),
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Counts action-conditioned network evaluations during training and how
/// many of them received actions other than the minibatch's own.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InSampleAudit {
    pub q_evaluations: u64,
    pub policy_evaluations: u64,
    pub foreign_action_evaluations: u64,
}

#[derive(Debug, Default)]
struct AuditCells {
    q: Cell<u64>,
    pi: Cell<u64>,
    foreign: Cell<u64>,
}

impl AuditCells {
    fn record(&self, counter: &Cell<u64>, batch: &Batch, used: ArrayView2<f64>) {
        counter.set(counter.get() + 1);
        if used != batch.actions.view() {
            self.foreign.set(self.foreign.get() + 1);
        }
    }

    fn snapshot(&self) -> InSampleAudit {
        InSampleAudit { q_evaluations: self.q.get(), policy_evaluations: self.pi.get(), foreign_action_evaluations: self.foreign.get() }
    }
}

/// Losses from one minibatch step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub v: f64,
    pub q: f64,
    pub policy: f64,
    pub mean_weight: f64,
}

#[derive(Debug)]
pub struct IqlTrainer {
    pub cfg: IqlConfig,
    pub norm: Normalizer,
    pub q: Mlp,
    pub target_q: Mlp,
    pub v: Mlp,
    pub policy: GaussianPolicy,
    adam_q: Adam,
    adam_v: Adam,
    adam_pi: Adam,
    adam_std: Adam,
    audit: AuditCells,
}

fn column(x: Array2<f64>) -> Array1<f64> {
    x.index_axis_move(Axis(1), 0)
}

impl IqlTrainer {
    pub fn new(obs_dim: usize, act_dim: usize, norm: Normalizer, cfg: IqlConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let q = Mlp::init(MlpArch::new(obs_dim + act_dim, &cfg.hidden, 1, Activation::Relu), 3e-3, &mut rng)?;
        let v = Mlp::init(MlpArch::new(obs_dim, &cfg.hidden, 1, Activation::Relu), 3e-3, &mut rng)?;
        let policy = GaussianPolicy::new(obs_dim, act_dim, &cfg.hidden, norm.clone(), &mut rng)?;
        Ok(Self {
            adam_q: Adam::new(q.params().len()),
            adam_v: Adam::new(v.params().len()),
            adam_pi: Adam::new(policy.net.params().len()),
            adam_std: Adam::new(act_dim),
            target_q: q.clone(),
            q,
            v,
            policy,
            norm,
            cfg,
            audit: AuditCells::default(),
        })
    }

    pub fn audit(&self) -> InSampleAudit {
        self.audit.snapshot()
    }

    fn eval_target_q(&self, b: &Batch) -> Result<Array1<f64>> {
        self.audit.record(&self.audit.q, b, b.actions.view());
        Ok(column(self.target_q.forward(concat_cols(b.s.view(), b.actions.view()).view())?))
    }

    /// Expectile loss of `V(s)` against target-Q values and its gradient.
    pub fn value_loss_grads(&self, b: &Batch) -> Result<(f64, Vec<f64>)> {
        let qt = self.eval_target_q(b)?;
        self.value_loss_grads_with(b, &qt)
    }

    fn value_loss_grads_with(&self, b: &Batch, qt: &Array1<f64>) -> Result<(f64, Vec<f64>)> {
        let cache = self.v.forward_cached(b.s.view())?;
        let n = b.len() as f64;
        let mut loss = 0.0;
        let mut dv = Array2::zeros((b.len(), 1));
        for i in 0..b.len() {
            let u = qt[i] - cache.output[[i, 0]];
            loss += expectile_loss(u, self.cfg.tau) / n;
            dv[[i, 0]] = -expectile_grad(u, self.cfg.tau) / n;
        }
        let mut g = vec![0.0; self.v.params().len()];
        self.v.backward_into(&cache, dv.view(), &mut g);
        Ok((loss, g))
    }

    pub fn value_update(&mut self, b: &Batch, lr: f64) -> Result<f64> {
        let qt = self.eval_target_q(b)?;
        self.value_update_with(b, &qt, lr)
    }

    fn value_update_with(&mut self, b: &Batch, qt: &Array1<f64>, lr: f64) -> Result<f64> {
        let (loss, g) = self.value_loss_grads_with(b, qt)?;
        self.adam_v.step(self.v.params_mut(), &g, lr);
        Ok(loss)
    }

    /// Bootstrapped targets `r + gamma (1 - done) V(s')`.
    pub fn q_targets(&self, b: &Batch) -> Result<Array1<f64>> {
        let v_next = column(self.v.forward(b.s_next.view())?);
        let mut y = b.rewards.clone();
        for i in 0..b.len() {
            if b.dones[i] == 0.0 {
                y[i] += self.cfg.gamma * v_next[i];
            }
        }
        Ok(y)
    }

    pub fn q_loss_grads(&self, b: &Batch) -> Result<(f64, Vec<f64>)> {
        let y = self.q_targets(b)?;
        self.audit.record(&self.audit.q, b, b.actions.view());
        let cache = self.q.forward_cached(concat_cols(b.s.view(), b.actions.view()).view())?;
        let n = b.len() as f64;
        let mut loss = 0.0;
        let mut dq = Array2::zeros((b.len(), 1));
        for i in 0..b.len() {
            let r = cache.output[[i, 0]] - y[i];
            loss += r * r / n;
            dq[[i, 0]] = 2.0 * r / n;
        }
        let mut g = vec![0.0; self.q.params().len()];
        self.q.backward_into(&cache, dq.view(), &mut g);
        Ok((loss, g))
    }

    pub fn q_update(&mut self, b: &Batch, lr: f64) -> Result<f64> {
        let (loss, g) = self.q_loss_grads(b)?;
        self.adam_q.step(self.q.params_mut(), &g, lr);
        Ok(loss)
    }

    /// Advantages `Q_target(s, a) - V(s)` and clipped weights `exp(beta adv)`.
    pub fn advantage_weights(&self, b: &Batch) -> Result<(Array1<f64>, Array1<f64>)> {
        let qt = self.eval_target_q(b)?;
        self.advantage_weights_with(b, qt)
    }

    fn advantage_weights_with(&self, b: &Batch, qt: Array1<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        let v = column(self.v.forward(b.s.view())?);
        let adv = qt - v;
        let w = adv.mapv(|a| (self.cfg.beta * a).exp().min(self.cfg.weight_clip));
        Ok((adv, w))
    }

    pub fn policy_loss_grads(&self, b: &Batch) -> Result<(NllGrads, f64)> {
        let qt = self.eval_target_q(b)?;
        self.policy_loss_grads_with(b, qt)
    }

    fn policy_loss_grads_with(&self, b: &Batch, qt: Array1<f64>) -> Result<(NllGrads, f64)> {
        let (_, w) = self.advantage_weights_with(b, qt)?;
        self.audit.record(&self.audit.pi, b, b.actions.view());
        let g = self.policy.weighted_nll(b.obs.view(), b.u.view(), Some(w.as_slice().expect("contiguous")))?;
        Ok((g, w.mean().unwrap_or(0.0)))
    }

    pub fn policy_update(&mut self, b: &Batch, lr: f64) -> Result<(f64, f64)> {
        let qt = self.eval_target_q(b)?;
        self.policy_update_with(b, qt, lr)
    }

    fn policy_update_with(&mut self, b: &Batch, qt: Array1<f64>, lr: f64) -> Result<(f64, f64)> {
        let (g, mean_w) = self.policy_loss_grads_with(b, qt)?;
        self.adam_pi.step(self.policy.net.params_mut(), &g.net, lr);
        self.adam_std.step(&mut self.policy.log_std, &g.log_std, lr);
        self.policy.clamp_log_std();
        Ok((g.loss, mean_w))
    }

    pub fn soft_update_target(&mut self) {
        soft_update(self.target_q.params_mut(), self.q.params(), self.cfg.soft_update);
    }

    /// V, Q and policy updates then the target soft update. The target-Q
    /// values are shared by the V and policy steps (the target only moves
    /// at the end).
    pub fn step(&mut self, b: &Batch, lr: f64) -> Result<StepLosses> {
        let qt = self.eval_target_q(b)?;
        let v = self.value_update_with(b, &qt, lr)?;
        let q = self.q_update(b, lr)?;
        let (policy, mean_weight) = self.policy_update_with(b, qt, lr)?;
        self.soft_update_target();
        Ok(StepLosses { v, q, policy, mean_weight })
    }

    pub fn into_bundle(self, history: TrainHistory) -> AgentBundle {
        let audit = self.audit.snapshot();
        AgentBundle {
            kind: AgentKind::Iql,
            policy: self.policy,
            q: Some(self.q),
            target_q: Some(self.target_q),
            v: Some(self.v),
            obs_norm: self.norm,
            history,
            audit: Some(audit),
        }
    }
}

pub fn train_iql(data: &TransitionArrays, cfg: &IqlConfig) -> Result<AgentBundle> {
    train_iql_with(data, cfg, |_, _| {})
}

/// [`train_iql`] with a per-epoch callback `(epoch, [v, q, policy, weight])`.
pub fn train_iql_with(data: &TransitionArrays, cfg: &IqlConfig, mut on_epoch: impl FnMut(usize, &[f64])) -> Result<AgentBundle> {
    if data.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    let norm = Normalizer::fit(data.obs.view())?;
    let mut trainer = IqlTrainer::new(data.obs.ncols(), data.actions.ncols(), norm.clone(), cfg.clone())?;
    let steps = (data.len().div_ceil(cfg.batch_size) * cfg.epochs) as u64;
    let schedule = if cfg.cosine { CosineSchedule::new(cfg.lr, steps) } else { CosineSchedule::constant(cfg.lr) };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut history = TrainHistory::new(&["v_loss", "q_loss", "policy_loss", "mean_weight"]);
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let mut sums = [0.0; 4];
        for idx in minibatches(data.len(), cfg.batch_size, &mut rng) {
            let b = Batch::from_rows(data, &norm, &idx)?;
            let l = trainer.step(&b, schedule.lr(step))?;
            step += 1;
            check_finite(epoch, "IQL value loss", l.v)?;
            check_finite(epoch, "IQL Q loss", l.q)?;
            check_finite(epoch, "IQL policy loss", l.policy)?;
            let n = b.len() as f64;
            for (s, v) in sums.iter_mut().zip([l.v, l.q, l.policy, l.mean_weight]) {
                *s += v * n;
            }
        }
        let row: Vec<f64> = sums.iter().map(|s| s / data.len() as f64).collect();
        on_epoch(epoch, &row);
        history.push(row);
    }
    Ok(trainer.into_bundle(history))
}

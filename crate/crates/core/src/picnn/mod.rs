//! Learned cost models `c(s, a)`: an action-convex PICNN and a plain MLP
//! baseline of the same size.

pub mod net;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::TransitionArrays;
use crate::error::{Error, Result};
use crate::nn::checkpoint::ArchDescriptor;
use crate::nn::{minibatches, Activation, Adam, Checkpoint, CosineSchedule, Mlp, MlpArch, Normalizer};

pub use net::{Picnn, PicnnArch};

pub const HEAD_PICNN: &str = "picnn";
pub const HEAD_COST_NN: &str = "cost_nn";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostVariant {
    Picnn,
    Plain,
}

impl fmt::Display for CostVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CostVariant::Picnn => "picnn",
            CostVariant::Plain => "nn",
        })
    }
}

impl FromStr for CostVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "picnn" | "cost-picnn" => Ok(CostVariant::Picnn),
            "nn" | "plain" | "cost-nn" => Ok(CostVariant::Plain),
            other => Err(Error::Config(format!("unknown cost model variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CostNet {
    Picnn(Picnn),
    Plain(Mlp),
}

/// A trained (or freshly initialized) cost model with its input and target
/// scaling. Inputs are raw observations and `[-1, 1]` actions; outputs are
/// in raw cost units.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    pub net: CostNet,
    pub obs_norm: Normalizer,
    pub act_norm: Normalizer,
    /// Network output times this equals the cost.
    pub target_scale: f64,
}

/// Plain-MLP layout matching the PICNN size: two softplus hidden layers.
pub fn plain_arch(state_dim: usize, action_dim: usize, hidden: usize) -> MlpArch {
    MlpArch::new(state_dim + action_dim, &[hidden, hidden], 1, Activation::Softplus)
}

impl CostModel {
    pub fn new(variant: CostVariant, hidden: usize, obs_norm: Normalizer, act_norm: Normalizer, target_scale: f64, seed: u64) -> Result<Self> {
        if !(target_scale.is_finite() && target_scale > 0.0) {
            return Err(Error::Domain(format!("target scale {target_scale}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ds, da) = (obs_norm.dim(), act_norm.dim());
        let net = match variant {
            CostVariant::Picnn => CostNet::Picnn(Picnn::init(PicnnArch { state_dim: ds, action_dim: da, hidden }, &mut rng)),
            CostVariant::Plain => CostNet::Plain(Mlp::init(plain_arch(ds, da, hidden), 1.0 / (hidden as f64).sqrt(), &mut rng)?),
        };
        Ok(Self { net, obs_norm, act_norm, target_scale })
    }

    pub fn variant(&self) -> CostVariant {
        match self.net {
            CostNet::Picnn(_) => CostVariant::Picnn,
            CostNet::Plain(_) => CostVariant::Plain,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.obs_norm.dim()
    }

    pub fn action_dim(&self) -> usize {
        self.act_norm.dim()
    }

    fn params_mut(&mut self) -> &mut [f64] {
        match &mut self.net {
            CostNet::Picnn(p) => p.params_mut(),
            CostNet::Plain(m) => m.params_mut(),
        }
    }

    fn n_params(&self) -> usize {
        match &self.net {
            CostNet::Picnn(p) => p.params().len(),
            CostNet::Plain(m) => m.params().len(),
        }
    }

    /// Network output (scaled target units) on normalized inputs.
    fn raw_forward<'v>(&self, s: ArrayView2<'v, f64>, a: ArrayView2<'v, f64>) -> Result<Array1<f64>> {
        match &self.net {
            CostNet::Picnn(p) => p.forward(s, a),
            CostNet::Plain(m) => Ok(m.forward(concatenate(Axis(1), &[s, a]).expect("rows").view())?.column(0).to_owned()),
        }
    }

    /// Loss gradient accumulation for `sum(dy * output)`; returns action grads.
    fn raw_backward<'v>(&self, s: ArrayView2<'v, f64>, a: ArrayView2<'v, f64>, dy: ArrayView1<f64>, grads: &mut [f64]) -> Result<Array2<f64>> {
        match &self.net {
            CostNet::Picnn(p) => {
                let c = p.forward_cached(s, a)?;
                Ok(p.backward_into(&c, dy, grads))
            }
            CostNet::Plain(m) => {
                let x = concatenate(Axis(1), &[s, a]).expect("rows");
                let c = m.forward_cached(x.view())?;
                let dx = m.backward_into(&c, dy.insert_axis(Axis(1)), grads);
                Ok(dx.slice(s![.., s.ncols()..]).to_owned())
            }
        }
    }

    /// One MSE pass on normalized inputs: accumulates parameter gradients of
    /// the mean squared error into `grads` and returns the loss.
    fn mse_grads<'v>(&self, s: ArrayView2<'v, f64>, a: ArrayView2<'v, f64>, y: ArrayView1<f64>, grads: &mut [f64]) -> Result<f64> {
        let n = y.len() as f64;
        let scale = |pred: ArrayView1<f64>| {
            let resid = &pred - &y;
            (resid.mapv(|r| r * r).sum() / n, resid * (2.0 / n))
        };
        match &self.net {
            CostNet::Picnn(p) => {
                let c = p.forward_cached(s, a)?;
                let (loss, dy) = scale(c.output.view());
                p.backward_into(&c, dy.view(), grads);
                Ok(loss)
            }
            CostNet::Plain(m) => {
                let x = concatenate(Axis(1), &[s, a]).expect("rows");
                let c = m.forward_cached(x.view())?;
                let (loss, dy) = scale(c.output.column(0));
                m.backward_into(&c, dy.view().insert_axis(Axis(1)), grads);
                Ok(loss)
            }
        }
    }

    pub fn cost_batch(&self, obs: ArrayView2<f64>, act: ArrayView2<f64>) -> Result<Array1<f64>> {
        let s = self.obs_norm.apply(obs)?;
        let a = self.act_norm.apply(act)?;
        Ok(self.raw_forward(s.view(), a.view())? * self.target_scale)
    }

    fn check_point(&self, s: &[f64], a: &[f64]) -> Result<()> {
        if s.len() != self.state_dim() {
            return Err(Error::DimMismatch { expected: self.state_dim(), got: s.len() });
        }
        if a.len() != self.action_dim() {
            return Err(Error::DimMismatch { expected: self.action_dim(), got: a.len() });
        }
        Ok(())
    }

    pub fn cost(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        self.check_point(s, a)?;
        let sv = ArrayView2::from_shape((1, s.len()), s).expect("row");
        let av = ArrayView2::from_shape((1, a.len()), a).expect("row");
        Ok(self.cost_batch(sv, av)?[0])
    }

    /// Exact gradient of the cost with respect to the (unnormalized) action.
    pub fn action_grad(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        self.check_point(s, a)?;
        let sn = Array2::from_shape_vec((1, s.len()), self.obs_norm.apply_one(s)).expect("row");
        let an = Array2::from_shape_vec((1, a.len()), self.act_norm.apply_one(a)).expect("row");
        let mut scratch = vec![0.0; self.n_params()];
        let g = self.raw_backward(sn.view(), an.view(), Array1::ones(1).view(), &mut scratch)?;
        Ok(g.row(0).iter().zip(&self.act_norm.std).map(|(g, sd)| g * self.target_scale / sd).collect())
    }

    /// Cost, action gradient and action Hessian. Exact for the PICNN; for
    /// the plain variant the Hessian is a central difference of the exact
    /// gradient (step 1e-5), symmetrized.
    pub fn value_grad_hessian(&self, s: &[f64], a: &[f64]) -> Result<(f64, Vec<f64>, Array2<f64>)> {
        self.check_point(s, a)?;
        match &self.net {
            CostNet::Picnn(p) => {
                let sn = self.obs_norm.apply_one(s);
                let an = self.act_norm.apply_one(a);
                let (v, g, h) = p.value_grad_hessian(&sn, &an)?;
                let sd = &self.act_norm.std;
                let k = self.target_scale;
                let grad = g.iter().zip(sd).map(|(g, s)| g * k / s).collect();
                let hess = Array2::from_shape_fn(h.dim(), |(i, j)| h[[i, j]] * k / (sd[i] * sd[j]));
                Ok((v * k, grad, hess))
            }
            CostNet::Plain(_) => {
                let step = 1e-5;
                let n = a.len();
                let mut h = Array2::zeros((n, n));
                for j in 0..n {
                    let mut ap = a.to_vec();
                    let mut am = a.to_vec();
                    ap[j] += step;
                    am[j] -= step;
                    let (gp, gm) = (self.action_grad(s, &ap)?, self.action_grad(s, &am)?);
                    for i in 0..n {
                        h[[i, j]] = (gp[i] - gm[i]) / (2.0 * step);
                    }
                }
                let h = (&h + &h.t()) * 0.5;
                Ok((self.cost(s, a)?, self.action_grad(s, a)?, h))
            }
        }
    }

    /// Smallest z-path weight (PICNN) or `+inf` for the plain variant.
    pub fn net_min_convex_weight(&self) -> f64 {
        match &self.net {
            CostNet::Picnn(p) => p.min_convex_weight(),
            CostNet::Plain(_) => f64::INFINITY,
        }
    }

    pub fn action_hessian(&self, s: &[f64], a: &[f64]) -> Result<Array2<f64>> {
        Ok(self.value_grad_hessian(s, a)?.2)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let base = match &self.net {
            CostNet::Picnn(p) => {
                let a = p.arch();
                Checkpoint {
                    schema_version: crate::nn::checkpoint::CHECKPOINT_SCHEMA,
                    arch: ArchDescriptor {
                        dims: vec![a.state_dim, a.action_dim, a.hidden],
                        activations: vec![Activation::Softplus, Activation::Softplus, Activation::Identity],
                        head: HEAD_PICNN.into(),
                    },
                    weights: p.params().to_vec(),
                    extra: Default::default(),
                }
            }
            CostNet::Plain(m) => Checkpoint::from_mlp(m, HEAD_COST_NN),
        };
        base.with_extra("obs_norm", &self.obs_norm)
            .with_extra("act_norm", &self.act_norm)
            .with_extra("target_scale", &self.target_scale)
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let net = match c.arch.head.as_str() {
            HEAD_PICNN => {
                c.check(HEAD_PICNN)?;
                let d = &c.arch.dims;
                if d.len() != 3 {
                    return Err(Error::ArchMismatch(format!("PICNN descriptor dims {d:?}")));
                }
                CostNet::Picnn(Picnn::from_params(PicnnArch { state_dim: d[0], action_dim: d[1], hidden: d[2] }, c.weights.clone())?)
            }
            HEAD_COST_NN => CostNet::Plain(c.to_mlp(HEAD_COST_NN)?),
            other => return Err(Error::ArchMismatch(format!("head `{other}` is not a cost model"))),
        };
        let model = Self {
            net,
            obs_norm: c.extra("obs_norm")?,
            act_norm: c.extra("act_norm")?,
            target_scale: c.extra("target_scale")?,
        };
        let expect_in = model.state_dim() + model.action_dim();
        let got_in = match &model.net {
            CostNet::Picnn(p) => p.arch().state_dim + p.arch().action_dim,
            CostNet::Plain(m) => m.arch().input_dim(),
        };
        if expect_in != got_in {
            return Err(Error::ArchMismatch("normalizer widths differ from network inputs".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostTrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub cosine: bool,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for CostTrainConfig {
    fn default() -> Self {
        Self { hidden: 64, epochs: 1000, batch_size: 512, lr: 1e-3, cosine: false, test_fraction: 0.2, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitMetrics {
    pub mse: f64,
    pub mae: f64,
    pub r2: f64,
}

impl FitMetrics {
    pub fn compute(pred: ArrayView1<f64>, target: ArrayView1<f64>) -> Self {
        let n = target.len().max(1) as f64;
        let mean = target.sum() / n;
        let (mut se, mut ae, mut tot) = (0.0, 0.0, 0.0);
        for (p, t) in pred.iter().zip(target) {
            se += (p - t) * (p - t);
            ae += (p - t).abs();
            tot += (t - mean) * (t - mean);
        }
        Self { mse: se / n, mae: ae / n, r2: if tot > 0.0 { 1.0 - se / tot } else { f64::NAN } }
    }
}

#[derive(Debug, Clone)]
pub struct CostFit {
    pub model: CostModel,
    /// Mean minibatch loss (scaled target units) per epoch.
    pub history: Vec<f64>,
    pub train: FitMetrics,
    pub test: FitMetrics,
}

/// Supervised triples for cost-model training.
#[derive(Debug, Clone)]
pub struct CostData {
    pub obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub targets: Array1<f64>,
}

impl CostData {
    /// Each transition labelled with the cost realized after its action.
    pub fn from_transitions(t: &TransitionArrays) -> Self {
        Self { obs: t.obs.clone(), actions: t.actions.clone(), targets: t.costs.clone() }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn select(&self, idx: &[usize]) -> Self {
        Self {
            obs: self.obs.select(Axis(0), idx),
            actions: self.actions.select(Axis(0), idx),
            targets: self.targets.select(Axis(0), idx),
        }
    }

    /// Seeded random split into (train, test).
    pub fn split(&self, test_fraction: f64, seed: u64) -> (Self, Self) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let idx: Vec<usize> = minibatches(self.len(), self.len(), &mut rng).concat();
        let n_test = ((self.len() as f64) * test_fraction).round() as usize;
        let (test, train) = idx.split_at(n_test.min(self.len()));
        (self.select(train), self.select(test))
    }
}

/// Minibatch MSE regression of a fresh cost model on `data`.
pub fn train_cost_model(data: &CostData, variant: CostVariant, cfg: &CostTrainConfig) -> Result<CostFit> {
    if data.is_empty() {
        return Err(Error::Empty("cost dataset"));
    }
    if !(0.0..1.0).contains(&cfg.test_fraction) || cfg.batch_size == 0 || cfg.hidden == 0 {
        return Err(Error::Config(format!("invalid cost training config {cfg:?}")));
    }
    let (train, test) = data.split(cfg.test_fraction, cfg.seed);
    let obs_norm = Normalizer::fit(train.obs.view())?;
    let act_norm = Normalizer::fit(train.actions.view())?;
    let max_target = train.targets.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let target_scale = if max_target > 0.0 { max_target } else { 1.0 };
    let mut model = CostModel::new(variant, cfg.hidden, obs_norm, act_norm, target_scale, cfg.seed)?;

    let s_all = model.obs_norm.apply(train.obs.view())?;
    let a_all = model.act_norm.apply(train.actions.view())?;
    let y_all = &train.targets / target_scale;
    let mut adam = Adam::new(model.n_params());
    let batches_per_epoch = train.len().div_ceil(cfg.batch_size) as u64;
    let schedule = if cfg.cosine {
        CosineSchedule::new(cfg.lr, batches_per_epoch * cfg.epochs as u64)
    } else {
        CosineSchedule::constant(cfg.lr)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut grads = vec![0.0; model.n_params()];
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for idx in minibatches(train.len(), cfg.batch_size, &mut rng) {
            let s = s_all.select(Axis(0), &idx);
            let a = a_all.select(Axis(0), &idx);
            let y = y_all.select(Axis(0), &idx);
            grads.iter_mut().for_each(|g| *g = 0.0);
            let loss = model.mse_grads(s.view(), a.view(), y.view(), &mut grads)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, what: format!("{variant} cost-model loss {loss}") });
            }
            total += loss * idx.len() as f64;
            let lr = schedule.lr(adam.t);
            adam.step(model.params_mut(), &grads, lr);
            if let CostNet::Picnn(p) = &mut model.net {
                p.project();
            }
        }
        history.push(total / train.len() as f64);
    }
    let train_m = FitMetrics::compute(model.cost_batch(train.obs.view(), train.actions.view())?.view(), train.targets.view());
    let test_m = if test.is_empty() {
        train_m
    } else {
        FitMetrics::compute(model.cost_batch(test.obs.view(), test.actions.view())?.view(), test.targets.view())
    };
    Ok(CostFit { model, history, train: train_m, test: test_m })
}

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::mlp::{Activation, Mlp, MlpArch};
use crate::nn::normalizer::Normalizer;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Targets are clipped to `[-1 + eps, 1 - eps]` before `atanh`.
pub const ATANH_EPS: f64 = 1e-3;

/// Diagonal Gaussian log density, summed over dimensions.
pub fn gaussian_logprob(mean: &[f64], log_std: &[f64], x: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(x)
        .map(|((m, ls), x)| {
            let z = (x - m) / ls.exp();
            -0.5 * z * z - ls - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

pub fn squash(u: f64) -> f64 {
    u.tanh()
}

pub fn unsquash(a: f64) -> f64 {
    a.clamp(-1.0 + ATANH_EPS, 1.0 - ATANH_EPS).atanh()
}

/// Tanh-squashed Gaussian policy with a state-independent log-std vector.
///
/// Observations are standardized by the stored normalizer before the trunk.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub net: Mlp,
    pub log_std: Vec<f64>,
    pub normalizer: Normalizer,
}

/// Mean NLL and its gradients for one minibatch.
#[derive(Debug, Clone)]
pub struct NllGrads {
    pub loss: f64,
    pub net: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, act_dim: usize, hidden: &[usize], normalizer: Normalizer, rng: &mut R) -> Result<Self> {
        if normalizer.dim() != obs_dim {
            return Err(Error::DimMismatch { expected: obs_dim, got: normalizer.dim() });
        }
        let net = Mlp::init(MlpArch::new(obs_dim, hidden, act_dim, Activation::Relu), 3e-3, rng)?;
        Ok(Self { net, log_std: vec![0.0; act_dim], normalizer })
    }

    pub fn obs_dim(&self) -> usize {
        self.net.arch().input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.net.arch().output_dim()
    }

    /// Pre-squash means for a batch of raw observations.
    pub fn mean(&self, obs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.net.forward(self.normalizer.apply(obs)?.view())
    }

    /// Deterministic action: the squashed mean.
    pub fn act(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, obs.len()), obs).map_err(|_| Error::DimMismatch { expected: self.obs_dim(), got: obs.len() })?;
        Ok(self.mean(x)?.row(0).iter().map(|u| squash(*u)).collect())
    }

    pub fn act_batch(&self, obs: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.mean(obs)?.mapv(squash))
    }

    pub fn clamp_log_std(&mut self) {
        for v in &mut self.log_std {
            *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    /// Weighted mean negative log-likelihood of pre-squash targets `u`.
    /// With `weights = None` every sample has weight one.
    pub fn weighted_nll(&self, obs: ArrayView2<f64>, u: ArrayView2<f64>, weights: Option<&[f64]>) -> Result<NllGrads> {
        let n = obs.nrows();
        if n == 0 {
            return Err(Error::Empty("minibatch"));
        }
        if u.dim() != (n, self.act_dim()) {
            return Err(Error::DimMismatch { expected: self.act_dim(), got: u.ncols() });
        }
        let x = self.normalizer.apply(obs)?;
        let cache = self.net.forward_cached(x.view())?;
        let mean = &cache.output;
        let inv_var: Vec<f64> = self.log_std.iter().map(|ls| (-2.0 * ls).exp()).collect();
        let mut dmean = Array2::zeros(mean.dim());
        let mut dlog_std = vec![0.0; self.act_dim()];
        let mut loss = 0.0;
        let scale = 1.0 / n as f64;
        for i in 0..n {
            let w = weights.map_or(1.0, |w| w[i]);
            let row_mean = mean.row(i);
            let lp = gaussian_logprob(row_mean.as_slice().expect("contiguous"), &self.log_std, u.row(i).to_vec().as_slice());
            loss -= w * lp * scale;
            for k in 0..self.act_dim() {
                let diff = u[[i, k]] - mean[[i, k]];
                dmean[[i, k]] = -w * diff * inv_var[k] * scale;
                dlog_std[k] += w * (1.0 - diff * diff * inv_var[k]) * scale;
            }
        }
        let mut gnet = vec![0.0; self.net.params().len()];
        self.net.backward_into(&cache, dmean.view(), &mut gnet);
        Ok(NllGrads { loss, net: gnet, log_std: dlog_std })
    }
}

/// Map stored `[-1, 1]` actions to pre-squash targets.
pub fn unsquash_batch(a: ArrayView2<f64>) -> Array2<f64> {
    a.mapv(unsquash)
}

/// Mean over the batch axis, used in tests and diagnostics.
pub fn batch_mean(x: &Array2<f64>) -> Vec<f64> {
    x.mean_axis(Axis(0)).map(|m| m.to_vec()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn logprob_at_mean_unit_std() {
        let lp = gaussian_logprob(&[0.3, -1.0], &[0.0, 0.0], &[0.3, -1.0]);
        assert!((lp + (2.0 * PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn logprob_decreases_with_distance() {
        let mut prev = f64::INFINITY;
        for k in 0..20 {
            let lp = gaussian_logprob(&[0.0, 0.0], &[0.1, -0.2], &[0.1 * k as f64, -0.05 * k as f64]);
            assert!(lp < prev);
            prev = lp;
        }
    }

    #[test]
    fn doubling_std_costs_dim_log2() {
        let a = gaussian_logprob(&[1.0, 2.0], &[0.0, 0.0], &[1.0, 2.0]);
        let b = gaussian_logprob(&[1.0, 2.0], &[2f64.ln(), 2f64.ln()], &[1.0, 2.0]);
        assert!((a - b - 2.0 * 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn unsquash_inverts_tanh_inside_clip() {
        for a in [-0.99, -0.5, 0.0, 0.3, 0.9] {
            assert!((squash(unsquash(a)) - a).abs() < 1e-12);
        }
        assert!(unsquash(1.0).is_finite() && unsquash(-1.0).is_finite());
    }

    #[test]
    fn nll_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let norm = Normalizer::new(vec![0.5, -0.2, 1.0], vec![2.0, 1.0, 0.5]).unwrap();
        let mut p = GaussianPolicy::new(3, 2, &[5, 4], norm, &mut rng).unwrap();
        p.log_std = vec![0.3, -0.4];
        for v in p.net.params_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
        let obs = Array2::from_shape_fn((4, 3), |_| rng.gen_range(-2.0..2.0));
        let u = Array2::from_shape_fn((4, 2), |_| rng.gen_range(-1.5..1.5));
        let w = [0.5, 2.0, 1.0, 3.0];
        let g = p.weighted_nll(obs.view(), u.view(), Some(&w)).unwrap();
        let h = 1e-5;
        let loss = |p: &GaussianPolicy| p.weighted_nll(obs.view(), u.view(), Some(&w)).unwrap().loss;
        for k in 0..p.net.params().len() {
            let (mut a, mut b) = (p.clone(), p.clone());
            a.net.params_mut()[k] += h;
            b.net.params_mut()[k] -= h;
            let fd = (loss(&a) - loss(&b)) / (2.0 * h);
            assert!((g.net[k] - fd).abs() / (fd.abs() + 1e-8) <= 1e-4 || (g.net[k] - fd).abs() < 1e-9);
        }
        for k in 0..2 {
            let (mut a, mut b) = (p.clone(), p.clone());
            a.log_std[k] += h;
            b.log_std[k] -= h;
            let fd = (loss(&a) - loss(&b)) / (2.0 * h);
            assert!((g.log_std[k] - fd).abs() / (fd.abs() + 1e-8) <= 1e-4);
        }
    }
}

//! Deployment-time action correction by descending a learned cost surface
//! around the policy's proposal.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::picnn::CostModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionMode {
    #[default]
    Off,
    Gradient,
    Newton,
}

impl fmt::Display for CorrectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorrectionMode::Off => "off",
            CorrectionMode::Gradient => "gradient",
            CorrectionMode::Newton => "newton",
        })
    }
}

impl FromStr for CorrectionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(CorrectionMode::Off),
            "gradient" => Ok(CorrectionMode::Gradient),
            "newton" => Ok(CorrectionMode::Newton),
            other => Err(Error::Config(format!("unknown correction mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectionConfig {
    pub mode: CorrectionMode,
    /// Step size in normalized action units (gradient mode).
    pub eta: f64,
    pub lambda_reg: f64,
    pub iterations: usize,
    /// Halve the step (at most `max_halvings` times) until the model cost
    /// does not increase; keep the proposal if it still does.
    pub backtracking: bool,
    pub max_halvings: usize,
    pub action_min: f64,
    pub action_max: f64,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        Self {
            mode: CorrectionMode::Gradient,
            eta: 0.1,
            lambda_reg: 1e-4,
            iterations: 1,
            backtracking: true,
            max_halvings: 5,
            action_min: -1.0,
            action_max: 1.0,
        }
    }
}

impl CorrectionConfig {
    pub fn off() -> Self {
        Self { mode: CorrectionMode::Off, ..Self::default() }
    }

    pub fn gradient(eta: f64) -> Self {
        Self { mode: CorrectionMode::Gradient, eta, ..Self::default() }
    }

    pub fn newton(lambda_reg: f64) -> Self {
        Self { mode: CorrectionMode::Newton, lambda_reg, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eta < 0.0 || !self.eta.is_finite() || self.lambda_reg < 0.0 || self.action_min >= self.action_max {
            return Err(Error::Config(format!("invalid correction config {self:?}")));
        }
        Ok(())
    }
}

/// A differentiable action cost `c(s, a)`.
pub trait ActionCost {
    fn cost(&self, s: &[f64], a: &[f64]) -> Result<f64>;
    fn grad(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>>;
    fn hessian(&self, s: &[f64], a: &[f64]) -> Result<Array2<f64>>;
}

impl ActionCost for CostModel {
    fn cost(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        CostModel::cost(self, s, a)
    }
    fn grad(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        self.action_grad(s, a)
    }
    fn hessian(&self, s: &[f64], a: &[f64]) -> Result<Array2<f64>> {
        self.action_hessian(s, a)
    }
}

/// `c(a) = sum_k w_k (a_k - a*_k)^2`, independent of the state.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    pub minimizer: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ActionCost for QuadraticCost {
    fn cost(&self, _s: &[f64], a: &[f64]) -> Result<f64> {
        Ok(a.iter().zip(&self.minimizer).zip(&self.weights).map(|((a, m), w)| w * (a - m) * (a - m)).sum())
    }
    fn grad(&self, _s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        Ok(a.iter().zip(&self.minimizer).zip(&self.weights).map(|((a, m), w)| 2.0 * w * (a - m)).collect())
    }
    fn hessian(&self, _s: &[f64], a: &[f64]) -> Result<Array2<f64>> {
        let mut h = Array2::zeros((a.len(), a.len()));
        for (k, w) in self.weights.iter().enumerate() {
            h[[k, k]] = 2.0 * w;
        }
        Ok(h)
    }
}

/// Outcome of correcting one proposed action.
#[derive(Debug, Clone, PartialEq)]
pub struct Correction {
    pub proposed: Vec<f64>,
    pub corrected: Vec<f64>,
    /// Cost gradient at the proposal.
    pub grad: Vec<f64>,
    pub cost_before: f64,
    pub cost_after: f64,
    pub halvings: usize,
    /// A Newton system was singular and a gradient step was used instead.
    pub newton_fallback: bool,
}

fn solve2(h: &Array2<f64>, lambda: f64, g: &[f64]) -> Option<Vec<f64>> {
    let n = g.len();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| h[[i, j]] + if i == j { lambda } else { 0.0 });
    let rhs = nalgebra::DVector::from_column_slice(g);
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if !(scale > 0.0) {
        return None;
    }
    let lu = m.lu();
    let det = lu.determinant();
    if !det.is_finite() || det.abs() <= 1e-12 * scale.powi(n as i32) {
        return None;
    }
    let x = lu.solve(&rhs)?;
    x.iter().all(|v| v.is_finite()).then(|| x.iter().copied().collect())
}

fn clip(a: &mut [f64], cfg: &CorrectionConfig) {
    for v in a {
        *v = v.clamp(cfg.action_min, cfg.action_max);
    }
}

/// Apply `cfg.iterations` correction steps to the proposal `a0`.
pub fn correct_action<C: ActionCost + ?Sized>(model: &C, s: &[f64], a0: &[f64], cfg: &CorrectionConfig) -> Result<Correction> {
    cfg.validate()?;
    if cfg.mode == CorrectionMode::Off {
        return Ok(Correction {
            proposed: a0.to_vec(),
            corrected: a0.to_vec(),
            grad: vec![0.0; a0.len()],
            cost_before: f64::NAN,
            cost_after: f64::NAN,
            halvings: 0,
            newton_fallback: false,
        });
    }
    let cost_before = model.cost(s, a0)?;
    let mut a = a0.to_vec();
    let mut cost = cost_before;
    let mut first_grad = None;
    let mut halvings = 0;
    let mut fallback = false;
    for _ in 0..cfg.iterations.max(1) {
        let g = model.grad(s, &a)?;
        if first_grad.is_none() {
            first_grad = Some(g.clone());
        }
        let step: Vec<f64> = match cfg.mode {
            CorrectionMode::Gradient => g.iter().map(|g| cfg.eta * g).collect(),
            CorrectionMode::Newton => match solve2(&model.hessian(s, &a)?, cfg.lambda_reg, &g) {
                Some(d) => d,
                None => {
                    fallback = true;
                    g.iter().map(|g| cfg.eta * g).collect()
                }
            },
            CorrectionMode::Off => unreachable!(),
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for k in 0..=cfg.max_halvings {
            let mut cand: Vec<f64> = a.iter().zip(&step).map(|(a, d)| a - scale * d).collect();
            clip(&mut cand, cfg);
            let c = model.cost(s, &cand)?;
            if !cfg.backtracking || c <= cost {
                halvings += k;
                a = cand;
                cost = c;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            halvings += cfg.max_halvings;
            break;
        }
    }
    Ok(Correction {
        proposed: a0.to_vec(),
        corrected: a,
        grad: first_grad.unwrap_or_default(),
        cost_before,
        cost_after: cost,
        halvings,
        newton_fallback: fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quad() -> QuadraticCost {
        QuadraticCost { minimizer: vec![0.3, -0.4], weights: vec![1.0, 1.0] }
    }

    #[test]
    fn zero_step_is_identity() {
        let c = correct_action(&quad(), &[], &[0.7, 0.1], &CorrectionConfig::gradient(0.0)).unwrap();
        assert_eq!(c.corrected, vec![0.7, 0.1]);
    }

    #[test]
    fn off_mode_returns_proposal_bits() {
        let a0 = [0.123456789, -0.987654321];
        let c = correct_action(&quad(), &[], &a0, &CorrectionConfig::off()).unwrap();
        assert_eq!(c.corrected, a0.to_vec());
    }

    #[test]
    fn newton_lands_on_quadratic_minimizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = QuadraticCost { minimizer: vec![0.3, -0.4], weights: vec![0.5, 3.0] };
        for _ in 0..100 {
            let a0 = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let c = correct_action(&q, &[], &a0, &CorrectionConfig::newton(0.0)).unwrap();
            assert!((c.corrected[0] - 0.3).abs() < 1e-12 && (c.corrected[1] + 0.4).abs() < 1e-12);
            let c = correct_action(&q, &[], &a0, &CorrectionConfig::newton(1e-4)).unwrap();
            assert!((c.corrected[0] - 0.3).abs() < 1e-3 && (c.corrected[1] + 0.4).abs() < 1e-3);
        }
        // minimizer outside the box is clipped
        let far = QuadraticCost { minimizer: vec![2.0, -3.0], weights: vec![1.0, 1.0] };
        let c = correct_action(&far, &[], &[0.0, 0.0], &CorrectionConfig::newton(0.0)).unwrap();
        assert_eq!(c.corrected, vec![1.0, -1.0]);
    }

    #[test]
    fn singular_hessian_falls_back_to_gradient() {
        let flat = QuadraticCost { minimizer: vec![0.0, 0.0], weights: vec![0.0, 1.0] };
        let c = correct_action(&flat, &[], &[0.5, 0.5], &CorrectionConfig::newton(0.0)).unwrap();
        assert!(c.newton_fallback);
        assert!((c.corrected[1] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn backtracking_never_increases_model_cost() {
        // a huge step overshoots; halving restores descent
        let q = QuadraticCost { minimizer: vec![0.1, 0.1], weights: vec![1.0, 1.0] };
        let c = correct_action(&q, &[], &[0.5, -0.5], &CorrectionConfig::gradient(5.0)).unwrap();
        assert!(c.cost_after <= c.cost_before);
        assert!(c.halvings > 0);
    }

    #[test]
    fn corrected_actions_stay_in_box() {
        let q = QuadraticCost { minimizer: vec![4.0, -4.0], weights: vec![1.0, 1.0] };
        let cfg = CorrectionConfig { iterations: 10, eta: 0.4, ..CorrectionConfig::default() };
        let c = correct_action(&q, &[], &[0.9, -0.9], &cfg).unwrap();
        assert!(c.corrected.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn newton_direction_tends_to_gradient_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let h = Array2::from_shape_vec((2, 2), vec![1.5, 0.4, 0.4, 0.7]).unwrap();
            let g: [f64; 2] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let gn = (g[0] * g[0] + g[1] * g[1]).sqrt();
            let mut prev = f64::INFINITY;
            for lambda in [1.0, 10.0, 100.0] {
                let d = solve2(&h, lambda, &g).unwrap();
                let dn = (d[0] * d[0] + d[1] * d[1]).sqrt();
                let cos = (d[0] * g[0] + d[1] * g[1]) / (dn * gn);
                let angle = cos.clamp(-1.0, 1.0).acos();
                assert!(angle < prev + 1e-12);
                prev = angle;
            }
            assert!(prev < 0.01);
        }
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("newton".parse::<CorrectionMode>().unwrap(), CorrectionMode::Newton);
        assert!("sideways".parse::<CorrectionMode>().is_err());
    }
}

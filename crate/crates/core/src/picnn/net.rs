//! Partially input-convex network, convex in the action block.
//!
//! ```text
//! t1 = sp(s T0 + c0)               t2 = sp(t1 T1 + c1)          state trunk
//! z1 = sp(s U0 + a Wa0 + b0)
//! z2 = sp(z1 Wz1 + t1 U1 + a Wa1 + b1)
//! y  = z2 wz2 + t2 U2 + a wa2 + b2
//! ```
//!
//! `sp` is softplus (convex, non-decreasing). `Wz1` and `wz2` are kept
//! non-negative, which makes `y` convex in `a` for every `s`.

use ndarray::{linalg::general_mat_mul, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::mlp::{sigmoid, softplus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PicnnArch {
    pub state_dim: usize,
    pub action_dim: usize,
    pub hidden: usize,
}

// block indices
const T0: usize = 0;
const C0: usize = 1;
const T1: usize = 2;
const C1: usize = 3;
const U0: usize = 4;
const WA0: usize = 5;
const B0: usize = 6;
const WZ1: usize = 7;
const U1: usize = 8;
const WA1: usize = 9;
const B1: usize = 10;
const WZ2: usize = 11;
const U2: usize = 12;
const WA2: usize = 13;
const B2: usize = 14;
const N_BLOCKS: usize = 15;

impl PicnnArch {
    fn shapes(&self) -> [(usize, usize); N_BLOCKS] {
        let (s, a, h) = (self.state_dim, self.action_dim, self.hidden);
        [
            (s, h),
            (1, h),
            (h, h),
            (1, h),
            (s, h),
            (a, h),
            (1, h),
            (h, h),
            (h, h),
            (a, h),
            (1, h),
            (h, 1),
            (h, 1),
            (a, 1),
            (1, 1),
        ]
    }

    pub fn n_params(&self) -> usize {
        self.shapes().iter().map(|(r, c)| r * c).sum()
    }

    fn offsets(&self) -> [usize; N_BLOCKS + 1] {
        let mut o = [0; N_BLOCKS + 1];
        for (k, (r, c)) in self.shapes().iter().enumerate() {
            o[k + 1] = o[k] + r * c;
        }
        o
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Picnn {
    arch: PicnnArch,
    offsets: [usize; N_BLOCKS + 1],
    params: Vec<f64>,
}

/// Intermediate values of a batch forward pass.
#[derive(Debug, Clone)]
pub struct PicnnCache {
    s: Array2<f64>,
    a: Array2<f64>,
    q1: Array2<f64>,
    t1: Array2<f64>,
    q2: Array2<f64>,
    t2: Array2<f64>,
    p1: Array2<f64>,
    z1: Array2<f64>,
    p2: Array2<f64>,
    z2: Array2<f64>,
    pub output: Array1<f64>,
}

fn softplus_of(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(softplus)
}

impl Picnn {
    pub fn zeros(arch: PicnnArch) -> Self {
        Self { offsets: arch.offsets(), params: vec![0.0; arch.n_params()], arch }
    }

    pub fn from_params(arch: PicnnArch, params: Vec<f64>) -> Result<Self> {
        if params.len() != arch.n_params() {
            return Err(Error::ArchMismatch(format!("{} PICNN weights, expected {}", params.len(), arch.n_params())));
        }
        let mut p = Self { offsets: arch.offsets(), params, arch };
        if p.min_convex_weight() < 0.0 {
            return Err(Error::ArchMismatch("negative z-path weight in PICNN".into()));
        }
        p.project();
        Ok(p)
    }

    /// Uniform `±1/sqrt(fan_in)` for unconstrained blocks, `[0, 1/fan_in)`
    /// for z-path blocks, zero biases.
    pub fn init<R: Rng + ?Sized>(arch: PicnnArch, rng: &mut R) -> Self {
        let mut p = Self::zeros(arch);
        let shapes = arch.shapes();
        for k in [T0, T1, U0, WA0, U1, WA1, U2, WA2] {
            let b = 1.0 / (shapes[k].0 as f64).sqrt();
            for v in p.block_mut(k) {
                *v = rng.gen_range(-b..b);
            }
        }
        for k in [WZ1, WZ2] {
            let b = 1.0 / shapes[k].0 as f64;
            for v in p.block_mut(k) {
                *v = rng.gen_range(0.0..b);
            }
        }
        p
    }

    pub fn arch(&self) -> PicnnArch {
        self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn block_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.params[self.offsets[k]..self.offsets[k + 1]]
    }

    fn mat(&self, k: usize) -> ArrayView2<'_, f64> {
        let shape = self.arch.shapes()[k];
        ArrayView2::from_shape(shape, &self.params[self.offsets[k]..self.offsets[k + 1]]).expect("layout")
    }

    fn vec(&self, k: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[self.offsets[k]..self.offsets[k + 1]])
    }

    /// Clamp z-path weights at zero.
    pub fn project(&mut self) {
        for k in [WZ1, WZ2] {
            for v in self.block_mut(k) {
                *v = v.max(0.0);
            }
        }
    }

    pub fn min_convex_weight(&self) -> f64 {
        [WZ1, WZ2]
            .iter()
            .flat_map(|&k| self.params[self.offsets[k]..self.offsets[k + 1]].iter().copied())
            .fold(f64::INFINITY, f64::min)
    }

    /// Indices of the constrained entries in the flat parameter vector.
    pub fn convex_ranges(&self) -> [std::ops::Range<usize>; 2] {
        [self.offsets[WZ1]..self.offsets[WZ1 + 1], self.offsets[WZ2]..self.offsets[WZ2 + 1]]
    }

    pub fn forward_cached(&self, s: ArrayView2<f64>, a: ArrayView2<f64>) -> Result<PicnnCache> {
        if s.ncols() != self.arch.state_dim {
            return Err(Error::DimMismatch { expected: self.arch.state_dim, got: s.ncols() });
        }
        if a.ncols() != self.arch.action_dim || a.nrows() != s.nrows() {
            return Err(Error::DimMismatch { expected: self.arch.action_dim, got: a.ncols() });
        }
        let q1 = s.dot(&self.mat(T0)) + &self.vec(C0);
        let t1 = softplus_of(&q1);
        let q2 = t1.dot(&self.mat(T1)) + &self.vec(C1);
        let t2 = softplus_of(&q2);
        let p1 = s.dot(&self.mat(U0)) + a.dot(&self.mat(WA0)) + &self.vec(B0);
        let z1 = softplus_of(&p1);
        let p2 = z1.dot(&self.mat(WZ1)) + t1.dot(&self.mat(U1)) + a.dot(&self.mat(WA1)) + &self.vec(B1);
        let z2 = softplus_of(&p2);
        let y = z2.dot(&self.mat(WZ2)) + t2.dot(&self.mat(U2)) + a.dot(&self.mat(WA2)) + &self.vec(B2);
        let output = y.column(0).to_owned();
        Ok(PicnnCache { s: s.to_owned(), a: a.to_owned(), q1, t1, q2, t2, p1, z1, p2, z2, output })
    }

    pub fn forward(&self, s: ArrayView2<f64>, a: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.forward_cached(s, a)?.output)
    }

    /// Accumulate parameter gradients of `sum(dy * y)` into `grads`; returns
    /// the action gradient per sample.
    pub fn backward_into(&self, c: &PicnnCache, dy: ArrayView1<f64>, grads: &mut [f64]) -> Array2<f64> {
        assert_eq!(grads.len(), self.params.len(), "gradient buffer size");
        let shapes = self.arch.shapes();
        let o = self.offsets;
        let dy = dy.insert_axis(Axis(1));
        let mut acc = |k: usize, lhs: ArrayView2<f64>, rhs: ArrayView2<f64>| {
            let mut g = ArrayViewMut2::from_shape(shapes[k], &mut grads[o[k]..o[k + 1]]).expect("layout");
            general_mat_mul(1.0, &lhs.t(), &rhs, 1.0, &mut g);
        };
        let ones = Array2::ones((c.s.nrows(), 1));
        let sigm = |p: &Array2<f64>, d: &mut Array2<f64>| Zip::from(d).and(p).for_each(|d, &p| *d *= sigmoid(p));

        acc(WZ2, c.z2.view(), dy);
        acc(U2, c.t2.view(), dy);
        acc(WA2, c.a.view(), dy);
        acc(B2, ones.view(), dy);

        let mut dp2 = dy.dot(&self.mat(WZ2).t());
        sigm(&c.p2, &mut dp2);
        acc(WZ1, c.z1.view(), dp2.view());
        acc(U1, c.t1.view(), dp2.view());
        acc(WA1, c.a.view(), dp2.view());
        acc(B1, ones.view(), dp2.view());

        let mut dp1 = dp2.dot(&self.mat(WZ1).t());
        sigm(&c.p1, &mut dp1);
        acc(U0, c.s.view(), dp1.view());
        acc(WA0, c.a.view(), dp1.view());
        acc(B0, ones.view(), dp1.view());

        let mut dq2 = dy.dot(&self.mat(U2).t());
        sigm(&c.q2, &mut dq2);
        acc(T1, c.t1.view(), dq2.view());
        acc(C1, ones.view(), dq2.view());
        let mut dq1 = dp2.dot(&self.mat(U1).t()) + dq2.dot(&self.mat(T1).t());
        sigm(&c.q1, &mut dq1);
        acc(T0, c.s.view(), dq1.view());
        acc(C0, ones.view(), dq1.view());

        dy.dot(&self.mat(WA2).t()) + dp2.dot(&self.mat(WA1).t()) + dp1.dot(&self.mat(WA0).t())
    }

    /// Value, action gradient and action Hessian at one point.
    ///
    /// The Hessian is assembled from exact second-order terms:
    /// `H = J2' diag(wz2 sp''(p2)) J2 + Wa0 diag(sp''(p1) (Wz1 (wz2 sp'(p2)))) Wa0'`
    /// where `J2 = Wz1' diag(sp'(p1)) Wa0' + Wa1'` is the action Jacobian of
    /// `p2`. Both diagonal weights are non-negative, so `H` is PSD.
    pub fn value_grad_hessian(&self, s: &[f64], a: &[f64]) -> Result<(f64, Vec<f64>, Array2<f64>)> {
        let sv = ArrayView2::from_shape((1, s.len()), s).map_err(|_| Error::DimMismatch { expected: self.arch.state_dim, got: s.len() })?;
        let av = ArrayView2::from_shape((1, a.len()), a).map_err(|_| Error::DimMismatch { expected: self.arch.action_dim, got: a.len() })?;
        let c = self.forward_cached(sv, av)?;
        let (p1, p2) = (c.p1.row(0), c.p2.row(0));
        let wa0 = self.mat(WA0); // (a, h)
        let wa1 = self.mat(WA1);
        let wz1 = self.mat(WZ1); // (h, h)
        let wz2 = self.vec(WZ2);
        let sig1 = p1.mapv(sigmoid);
        let sig2 = p2.mapv(sigmoid);
        let d2_1 = sig1.mapv(|s| s * (1.0 - s));
        let d2_2 = sig2.mapv(|s| s * (1.0 - s));

        // J1 = Wa0' (h x a); J2 = Wz1' diag(sig1) Wa0' + Wa1'  (h x a)
        let j1 = wa0.t().to_owned();
        let scaled = &j1 * &sig1.view().insert_axis(Axis(1));
        let j2 = wz1.t().dot(&scaled) + wa1.t();

        let g2 = &wz2 * &sig2; // dy/dz2 * sp'(p2)
        let g1 = wz1.dot(&g2) * &sig1; // dy/dp1
        let grad = self.vec(WA2).to_owned() + wa1.dot(&g2) + wa0.dot(&g1);

        let w2 = &wz2 * &d2_2;
        let w1 = wz1.dot(&g2) * &d2_1;
        let h = j2.t().dot(&(&j2 * &w2.view().insert_axis(Axis(1)))) + j1.t().dot(&(&j1 * &w1.view().insert_axis(Axis(1))));
        let h = (&h + &h.t()) * 0.5;
        Ok((c.output[0], grad.to_vec(), h))
    }
}

use ndarray::{linalg::general_mat_mul, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Softplus,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Softplus => softplus(x),
        }
    }

    /// First derivative at pre-activation `x`.
    #[inline]
    pub fn grad(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => sigmoid(x),
        }
    }

    /// Second derivative at pre-activation `x` (zero almost everywhere for ReLU).
    #[inline]
    pub fn grad2(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            _ => 0.0,
        }
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Layer widths (input first) and one activation per layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArch {
    pub dims: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl MlpArch {
    /// `hidden.len()` hidden layers with `act`, then a linear output layer.
    pub fn new(input: usize, hidden: &[usize], output: usize, act: Activation) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(output);
        let mut activations = vec![act; hidden.len()];
        activations.push(Activation::Identity);
        Self { dims, activations }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 || self.activations.len() != self.dims.len() - 1 || self.dims.contains(&0) {
            return Err(Error::ArchMismatch(format!("inconsistent MLP architecture {self:?}")));
        }
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.activations.len()
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("validated")
    }

    /// Parameter count: weights then bias for each layer.
    pub fn n_params(&self) -> usize {
        self.dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn offsets(&self) -> Vec<(usize, usize)> {
        let mut o = 0;
        self.dims
            .windows(2)
            .map(|w| {
                let wo = o;
                let bo = o + w[0] * w[1];
                o = bo + w[1];
                (wo, bo)
            })
            .collect()
    }
}

/// A multilayer perceptron whose parameters live in one flat vector.
///
/// Layer `l` stores its weight as an `(in, out)` row-major block followed by
/// its bias, so a batch `X` of shape `(n, in)` maps to `X W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    arch: MlpArch,
    offsets: Vec<(usize, usize)>,
    params: Vec<f64>,
}

/// Pre-activations and layer inputs recorded during a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[l]` is the input to layer `l`; `inputs[0]` is the network input.
    pub inputs: Vec<Array2<f64>>,
    pub pre: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

impl Mlp {
    pub fn zeros(arch: MlpArch) -> Result<Self> {
        arch.validate()?;
        let n = arch.n_params();
        Ok(Self {
            offsets: arch.offsets(),
            arch,
            params: vec![0.0; n],
        })
    }

    pub fn from_params(arch: MlpArch, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.n_params() {
            return Err(Error::DimMismatch {
                expected: arch.n_params(),
                got: params.len(),
            });
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::ArchMismatch("non-finite parameter".into()));
        }
        Ok(Self {
            offsets: arch.offsets(),
            arch,
            params,
        })
    }

    /// He-uniform weights for hidden layers, `U(-out_scale, out_scale)` for
    /// the output layer, zero biases.
    pub fn init<R: Rng + ?Sized>(arch: MlpArch, out_scale: f64, rng: &mut R) -> Result<Self> {
        let mut m = Self::zeros(arch)?;
        let last = m.arch.n_layers() - 1;
        for l in 0..=last {
            let fan_in = m.arch.dims[l];
            let bound = if l == last { out_scale } else { (6.0 / fan_in as f64).sqrt() };
            let (wo, bo) = m.offsets[l];
            for v in &mut m.params[wo..bo] {
                *v = if bound > 0.0 { rng.gen_range(-bound..bound) } else { 0.0 };
            }
        }
        Ok(m)
    }

    pub fn arch(&self) -> &MlpArch {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn weight(&self, l: usize) -> ArrayView2<'_, f64> {
        let (wo, bo) = self.offsets[l];
        let shape = (self.arch.dims[l], self.arch.dims[l + 1]);
        ArrayView2::from_shape(shape, &self.params[wo..bo]).expect("layout")
    }

    pub fn bias(&self, l: usize) -> ArrayView1<'_, f64> {
        let (_, bo) = self.offsets[l];
        ArrayView1::from(&self.params[bo..bo + self.arch.dims[l + 1]])
    }

    pub fn weight_mut(&mut self, l: usize) -> ArrayViewMut2<'_, f64> {
        let (wo, bo) = self.offsets[l];
        let shape = (self.arch.dims[l], self.arch.dims[l + 1]);
        ArrayViewMut2::from_shape(shape, &mut self.params[wo..bo]).expect("layout")
    }

    pub fn bias_mut(&mut self, l: usize) -> ArrayViewMut1<'_, f64> {
        let (_, bo) = self.offsets[l];
        let n = self.arch.dims[l + 1];
        ArrayViewMut1::from(&mut self.params[bo..bo + n])
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.arch.input_dim() {
            return Err(Error::DimMismatch {
                expected: self.arch.input_dim(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut h = x.to_owned();
        for l in 0..self.arch.n_layers() {
            let mut z = h.dot(&self.weight(l));
            z += &self.bias(l);
            let act = self.arch.activations[l];
            if act != Activation::Identity {
                z.mapv_inplace(|v| act.apply(v));
            }
            h = z;
        }
        Ok(h)
    }

    /// Single-sample convenience wrapper.
    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, x.len()), x).expect("row");
        Ok(self.forward(x)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(&x)?;
        let n = self.arch.n_layers();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut h = x.to_owned();
        for l in 0..n {
            let mut z = h.dot(&self.weight(l));
            z += &self.bias(l);
            let act = self.arch.activations[l];
            let out = if act == Activation::Identity { z.clone() } else { z.mapv(|v| act.apply(v)) };
            inputs.push(h);
            pre.push(z);
            h = out;
        }
        Ok(ForwardCache { inputs, pre, output: h })
    }

    /// Accumulate parameter gradients of `sum(dy * output)` into `grads`
    /// and return the gradient with respect to the input batch.
    pub fn backward_into(&self, cache: &ForwardCache, dy: ArrayView2<f64>, grads: &mut [f64]) -> Array2<f64> {
        assert_eq!(grads.len(), self.params.len(), "gradient buffer size");
        let mut upstream = dy.to_owned();
        for l in (0..self.arch.n_layers()).rev() {
            let act = self.arch.activations[l];
            if act != Activation::Identity {
                ndarray::Zip::from(&mut upstream).and(&cache.pre[l]).for_each(|g, &z| *g *= act.grad(z));
            }
            let (wo, bo) = self.offsets[l];
            let (din, dout) = (self.arch.dims[l], self.arch.dims[l + 1]);
            {
                let (w_slice, rest) = grads[wo..].split_at_mut(bo - wo);
                let mut gw = ArrayViewMut2::from_shape((din, dout), w_slice).expect("layout");
                general_mat_mul(1.0, &cache.inputs[l].t(), &upstream, 1.0, &mut gw);
                let mut gb = ArrayViewMut1::from(&mut rest[..dout]);
                gb += &upstream.sum_axis(Axis(0));
            }
            upstream = upstream.dot(&self.weight(l).t());
        }
        upstream
    }

    /// Parameter and input gradients of `sum(dy * f(x))`.
    pub fn backward(&self, x: ArrayView2<f64>, dy: ArrayView2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
        let cache = self.forward_cached(x)?;
        if dy.dim() != cache.output.dim() {
            return Err(Error::DimMismatch {
                expected: cache.output.ncols(),
                got: dy.ncols(),
            });
        }
        let mut grads = vec![0.0; self.params.len()];
        let dx = self.backward_into(&cache, dy, &mut grads);
        Ok((grads, dx))
    }
}

/// Stack `[a | b]` column-wise.
pub fn concat_cols<'a>(a: ArrayView2<'a, f64>, b: ArrayView2<'a, f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[a, b]).expect("row counts match")
}

//! Dense networks with hand-written reverse-mode gradients.
//!
//! Weights are stored `in × out` so a batch `X (B × in)` maps through
//! `X · W + b`. Every hidden layer uses the smooth saturating
//! activation `x/√(1+x²)`; the last layer is linear.
//! Parameters are visited in a fixed canonical order (layer by layer, weights
//! row-major then bias), which is also the serialization order.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

/// Hidden activation `x/√(1+x²)`, odd and bounded by ±1 like `tanh` but
/// built from operations that vectorize.
#[inline]
pub fn activation(x: f64) -> f64 {
    x / (1.0 + x * x).sqrt()
}

/// Activation slope written in terms of its output `y`: `(1 − y²)^{3/2}`.
#[inline]
pub fn activation_slope(y: f64) -> f64 {
    let q = 1.0 - y * y;
    q * q.sqrt()
}

fn activate(z: &mut Array2<f64>) {
    match z.as_slice_mut() {
        Some(s) => s.iter_mut().for_each(|v| *v = activation(*v)),
        None => z.mapv_inplace(activation),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            w: Array2::zeros((inputs, outputs)),
            b: Array1::zeros(outputs),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Layer inputs recorded by [`Mlp::forward_cached`]; entry `l` is the input
/// of layer `l` (post-activation of layer `l - 1`).
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
}

pub type MlpGrad = Mlp;

impl Mlp {
    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output dims");
        Self {
            layers: dims.windows(2).map(|d| Dense::zeros(d[0], d[1])).collect(),
        }
    }

    /// Uniform fan-in initialization, `U(-1/√in, 1/√in)` for weights and
    /// biases.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(dims);
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.w.nrows() as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
            layer.w.iter_mut().for_each(|v| *v = dist.sample(rng));
            layer.b.iter_mut().for_each(|v| *v = dist.sample(rng));
        }
        net
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].w.nrows()];
        d.extend(self.layers.iter().map(|l| l.w.ncols()));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.w.ncols()).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(l.b.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.params().copied().collect()
    }

    /// Builds a network of the given shape from canonical-order values.
    pub fn from_flat(dims: &[usize], values: &[f64]) -> Option<Self> {
        let mut net = Self::zeros(dims);
        if values.len() != net.param_count() {
            return None;
        }
        net.params_mut().zip(values).for_each(|(p, v)| *p = *v);
        Some(net)
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.dims() == other.dims()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.w);
            z += &layer.b;
            if l < last {
                activate(&mut z);
            }
            h = z;
        }
        h
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> (Array2<f64>, MlpCache) {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.w);
            z += &layer.b;
            if l < last {
                activate(&mut z);
            }
            inputs.push(std::mem::replace(&mut h, z));
        }
        (h, MlpCache { inputs })
    }

    /// Single-sample forward pass without ndarray temporaries.
    pub fn forward_one(&self, x: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.b.to_vec();
            for (i, xi) in h.iter().enumerate() {
                let row = layer.w.row(i);
                for (zj, wij) in z.iter_mut().zip(row.iter()) {
                    *zj += wij * xi;
                }
            }
            if l < last {
                z.iter_mut().for_each(|v| *v = activation(*v));
            }
            h = z;
        }
        h
    }

    /// Backpropagates `d_out = ∂L/∂output` through a cached forward pass.
    /// Returns the parameter gradient and `∂L/∂input`.
    pub fn backward(&self, cache: &MlpCache, d_out: ArrayView2<f64>) -> (MlpGrad, Array2<f64>) {
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut delta = d_out.to_owned();
        for l in (0..self.layers.len()).rev() {
            let a = &cache.inputs[l];
            let gw = a.t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            let mut d_in = delta.dot(&self.layers[l].w.t());
            if l > 0 {
                // input of layer l is the activation of the previous layer
                ndarray::Zip::from(&mut d_in)
                    .and(a)
                    .for_each(|d, &h| *d *= activation_slope(h));
            }
            grads.push(Dense { w: gw, b: gb });
            delta = d_in;
        }
        grads.reverse();
        (Mlp { layers: grads }, delta)
    }

    /// `∂L/∂input` only, skipping the parameter gradients.
    pub fn backward_input(&self, cache: &MlpCache, d_out: ArrayView2<f64>) -> Array2<f64> {
        let mut delta = d_out.to_owned();
        for l in (0..self.layers.len()).rev() {
            let mut d_in = delta.dot(&self.layers[l].w.t());
            if l > 0 {
                ndarray::Zip::from(&mut d_in)
                    .and(&cache.inputs[l])
                    .for_each(|d, &h| *d *= activation_slope(h));
            }
            delta = d_in;
        }
        delta
    }

    /// `self ← ρ·online + (1−ρ)·self`, elementwise.
    pub fn soft_update_from(&mut self, online: &Mlp, rho: f64) {
        debug_assert!(self.same_shape(online));
        self.params_mut()
            .zip(online.params())
            .for_each(|(t, o)| *t = rho * o + (1.0 - rho) * *t);
    }
}

/// Adam over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn apply<'a>(
        &mut self,
        params: impl Iterator<Item = &'a mut f64>,
        grads: impl Iterator<Item = &'a f64>,
    ) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = self.lr * bc2.sqrt() / bc1;
        for (((p, g), m), v) in params.zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= step * *m / (v.sqrt() + self.eps * bc2.sqrt());
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grad: &MlpGrad) {
        self.apply(net.params_mut(), grad.params());
    }

    pub fn step_scalar(&mut self, param: &mut f64, grad: f64) {
        self.apply(std::iter::once(param), std::iter::once(&grad));
    }
}

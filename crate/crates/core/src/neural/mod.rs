//! Dense networks with hand-written reverse-mode gradients, plus the
//! optimizers and gradient noise used by the trainers.

mod norm;
mod optim;
mod sgld;

pub use norm::RunningNorm;
pub use optim::{soft_update, Adam, Momentum, Optimizer};
pub use sgld::SgldNoise;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding::Rng;

pub const HIDDEN_WIDTH: usize = 128;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("input has {got} features, network expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("parameter vectors differ in length ({0} vs {1})")]
    ShapeMismatch(usize, usize),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
        }
    }

    /// Multiplies `delta` by the derivative, given the activated output `y`.
    fn backprop(self, delta: &mut Array2<f64>, y: &Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => delta.zip_mut_with(y, |d, &v| {
                if v <= 0.0 {
                    *d = 0.0
                }
            }),
            Activation::Tanh => delta.zip_mut_with(y, |d, &v| *d *= 1.0 - v * v),
        }
    }
}

/// Fully connected network with all parameters in one flat vector.
///
/// Layer `l` stores its `out x in` weight matrix row-major, followed by its bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    hidden: Activation,
    output: Activation,
    params: Vec<f64>,
}

/// Per-layer activations from a forward pass; `layers[0]` is the input.
#[derive(Debug, Clone)]
pub struct Trace {
    layers: Vec<Array2<f64>>,
}

impl Trace {
    pub fn output(&self) -> &Array2<f64> {
        self.layers.last().expect("trace holds at least the input")
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(sizes: &[usize], hidden: Activation, output: Activation) -> Self {
        assert!(sizes.len() >= 2, "need at least an input and an output layer");
        Self {
            sizes: sizes.to_vec(),
            hidden,
            output,
            params: vec![0.0; param_count(sizes)],
        }
    }

    /// Uniform fan-in initialization, `U(-1/sqrt(in), 1/sqrt(in))`, with the
    /// last layer additionally scaled by `final_scale`.
    pub fn new(sizes: &[usize], hidden: Activation, output: Activation, final_scale: f64, rng: &mut Rng) -> Self {
        let mut net = Self::zeros(sizes, hidden, output);
        let n_layers = net.n_layers();
        let mut off = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let scale = if l + 1 == n_layers { final_scale } else { 1.0 };
            for p in &mut net.params[off..off + fan_out * fan_in + fan_out] {
                *p = scale * rng.random_range(-bound..bound);
            }
            off += fan_out * fan_in + fan_out;
        }
        net
    }

    /// `[in, 128, 128, out]` with ReLU hidden units and a tanh head scaled by `1e-3`.
    pub fn policy(input: usize, output: usize, rng: &mut Rng) -> Self {
        Self::new(&[input, HIDDEN_WIDTH, HIDDEN_WIDTH, output], Activation::Relu, Activation::Tanh, 1e-3, rng)
    }

    /// `[in, 128, 128, 1]` with ReLU hidden units and a linear head.
    pub fn critic(input: usize, rng: &mut Rng) -> Self {
        Self::new(&[input, HIDDEN_WIDTH, HIDDEN_WIDTH, 1], Activation::Relu, Activation::Identity, 1.0, rng)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<(), NnError> {
        if p.len() != self.params.len() {
            return Err(NnError::ShapeMismatch(self.params.len(), p.len()));
        }
        self.params.copy_from_slice(p);
        Ok(())
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.n_layers());
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offs.push(off);
            off += w[1] * w[0] + w[1];
        }
        offs
    }

    fn layer(&self, l: usize, off: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        let w = ArrayView2::from_shape((o, i), &self.params[off..off + o * i]).expect("layer shape");
        let b = ArrayView1::from(&self.params[off + o * i..off + o * i + o]);
        (w, b)
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<(), NnError> {
        if x.ncols() != self.input_dim() {
            return Err(NnError::DimensionMismatch { expected: self.input_dim(), got: x.ncols() });
        }
        Ok(())
    }

    /// Batched forward pass keeping every layer's activations.
    pub fn forward_trace(&self, x: ArrayView2<f64>) -> Result<Trace, NnError> {
        self.check_input(&x)?;
        let offs = self.layer_offsets();
        let mut layers = Vec::with_capacity(self.sizes.len());
        layers.push(x.to_owned());
        for l in 0..self.n_layers() {
            let (w, b) = self.layer(l, offs[l]);
            let mut z = layers[l].dot(&w.t());
            z += &b;
            let act = if l + 1 == self.n_layers() { self.output } else { self.hidden };
            act.apply(&mut z);
            layers.push(z);
        }
        Ok(Trace { layers })
    }

    /// Batched forward pass, one row per sample.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        Ok(self.forward_trace(x)?.layers.pop().unwrap())
    }

    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        Ok(self.forward(view)?.into_raw_vec_and_offset().0)
    }

    fn backward_impl(&self, trace: &Trace, grad_out: ArrayView2<f64>, want_params: bool) -> (Vec<f64>, Array2<f64>) {
        let offs = self.layer_offsets();
        let mut grads = if want_params { vec![0.0; self.params.len()] } else { Vec::new() };
        let mut delta = grad_out.to_owned();
        self.output.backprop(&mut delta, trace.output());
        for l in (0..self.n_layers()).rev() {
            let (w, _) = self.layer(l, offs[l]);
            if want_params {
                let (i, o) = (self.sizes[l], self.sizes[l + 1]);
                let gw = delta.t().dot(&trace.layers[l]);
                let gb: Array1<f64> = delta.sum_axis(Axis(0));
                let off = offs[l];
                grads[off..off + o * i].copy_from_slice(gw.as_standard_layout().as_slice().unwrap());
                grads[off + o * i..off + o * i + o].copy_from_slice(gb.as_slice().unwrap());
            }
            let mut prev = delta.dot(&w);
            if l > 0 {
                self.hidden.backprop(&mut prev, &trace.layers[l]);
            }
            delta = prev;
        }
        (grads, delta)
    }

    /// Gradients of `sum(grad_out * output)` with respect to the parameters and the input.
    pub fn backward(&self, trace: &Trace, grad_out: ArrayView2<f64>) -> (Vec<f64>, Array2<f64>) {
        self.backward_impl(trace, grad_out, true)
    }

    /// Input gradient only.
    pub fn backward_input(&self, trace: &Trace, grad_out: ArrayView2<f64>) -> Array2<f64> {
        self.backward_impl(trace, grad_out, false).1
    }
}

/// Row-wise concatenation `[a | b]`.
pub fn concat_cols(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[a, b]).expect("matching row counts")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::{stream, Stream};
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[4, 8, 3], Activation::Relu, Activation::Tanh);
        let y = net.forward_one(&[1.0, -2.0, 3.0, 0.5]).unwrap();
        assert_eq!(y, vec![0.0; 3]);
    }

    #[test]
    fn single_layer_is_affine() {
        let mut net = Mlp::zeros(&[2, 2], Activation::Relu, Activation::Identity);
        net.set_params(&[1.0, 2.0, 3.0, 4.0, 0.5, -0.5]).unwrap();
        let y = net.forward_one(&[1.0, -1.0]).unwrap();
        assert_eq!(y, vec![1.0 - 2.0 + 0.5, 3.0 - 4.0 - 0.5]);
    }

    #[test]
    fn batch_rows_are_independent() {
        let mut rng = stream(1, Stream::AgentInit);
        let net = Mlp::policy(9, 3, &mut rng);
        let x = randn(5, 9, &mut rng);
        let batch = net.forward(x.view()).unwrap();
        for r in 0..5 {
            let one = net.forward_one(x.row(r).as_slice().unwrap()).unwrap();
            for c in 0..3 {
                assert_relative_eq!(batch[[r, c]], one[c], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let net = Mlp::zeros(&[3, 2], Activation::Relu, Activation::Identity);
        assert!(matches!(net.forward_one(&[1.0, 2.0]), Err(NnError::DimensionMismatch { expected: 3, got: 2 })));
    }

    #[test]
    fn linear_least_squares_gradient() {
        // L = 0.5 * sum (w.x + b - y)^2 gives dL/dw = sum r x, dL/db = sum r.
        let mut net = Mlp::zeros(&[2, 1], Activation::Relu, Activation::Identity);
        net.set_params(&[0.5, -1.0, 0.25]).unwrap();
        let x = array![[1.0, 2.0], [-1.0, 0.5], [3.0, 1.0]];
        let y = array![1.0, 0.0, -2.0];
        let t = net.forward_trace(x.view()).unwrap();
        let r: Array1<f64> = t.output().column(0).to_owned() - &y;
        let g_out = r.clone().insert_axis(Axis(1));
        let (g, _) = net.backward(&t, g_out.view());
        let gw = x.t().dot(&r);
        assert_relative_eq!(g[0], gw[0], epsilon = 1e-14);
        assert_relative_eq!(g[1], gw[1], epsilon = 1e-14);
        assert_relative_eq!(g[2], r.sum(), epsilon = 1e-14);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut rng = stream(2, Stream::CriticInit);
        let net = Mlp::critic(4, &mut rng);
        let x = randn(3, 4, &mut rng);
        let t = net.forward_trace(x.view()).unwrap();
        let (g, gx) = net.backward(&t, Array2::zeros((3, 1)).view());
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(gx.iter().all(|&v| v == 0.0));
    }

    fn fd_check(net: &Mlp, x: &Array2<f64>, proj: &Array2<f64>) {
        let loss = |n: &Mlp, x: &Array2<f64>| (n.forward(x.view()).unwrap() * proj).sum();
        let t = net.forward_trace(x.view()).unwrap();
        let (g, gx) = net.backward(&t, proj.view());
        let h = 1e-5;
        let mut probe = net.clone();
        for i in (0..net.n_params()).step_by(7) {
            let orig = probe.params[i];
            probe.params[i] = orig + h;
            let up = loss(&probe, x);
            probe.params[i] = orig - h;
            let down = loss(&probe, x);
            probe.params[i] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-4 * fd.abs().max(g[i].abs()).max(1e-3), "param {i}: fd {fd} vs {}", g[i]);
        }
        let mut xp = x.clone();
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let orig = xp[[r, c]];
            xp[[r, c]] = orig + h;
            let up = loss(net, &xp);
            xp[[r, c]] = orig - h;
            let down = loss(net, &xp);
            xp[[r, c]] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - gx[[r, c]]).abs() <= 1e-4 * fd.abs().max(gx[[r, c]].abs()).max(1e-3));
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = stream(3, Stream::AgentInit);
        let policy = Mlp::new(&[5, 16, 16, 3], Activation::Relu, Activation::Tanh, 1.0, &mut rng);
        let x = randn(4, 5, &mut rng);
        let proj = randn(4, 3, &mut rng);
        fd_check(&policy, &x, &proj);
        let critic = Mlp::new(&[6, 16, 16, 1], Activation::Tanh, Activation::Identity, 1.0, &mut rng);
        let x = randn(4, 6, &mut rng);
        let proj = randn(4, 1, &mut rng);
        fd_check(&critic, &x, &proj);
    }

    #[test]
    fn input_only_backward_matches_full() {
        let mut rng = stream(4, Stream::AgentInit);
        let net = Mlp::policy(9, 3, &mut rng);
        let x = randn(6, 9, &mut rng);
        let proj = randn(6, 3, &mut rng);
        let t = net.forward_trace(x.view()).unwrap();
        let (_, a) = net.backward(&t, proj.view());
        let b = net.backward_input(&t, proj.view());
        assert_eq!(a, b);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut rng = stream(5, Stream::CriticInit);
        let net = Mlp::critic(12, &mut rng);
        let text = serde_json::to_string(&net).unwrap();
        let back: Mlp = serde_json::from_str(&text).unwrap();
        assert_eq!(net, back);
    }
}

//! The metric network: a fully connected tanh feature map from input space
//! to the learned metric space.
//!
//! Every layer computes `h = tanh(W h_prev + b)`. Forward passes, batch
//! forward passes, and the activations recorded for backpropagation all run
//! through one shared kernel, so the same input produces bit-identical
//! outputs on every path. Training updates come from `adam_step`, which
//! applies bias-corrected Adam to a gradient set produced by `backward`.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Largest f64 strictly below 1. `f64::tanh` rounds to exactly +-1 for
/// |z| above ~19.06; clamping to this bound keeps every activation strictly
/// inside (-1, 1) for all finite inputs.
const ACT_BOUND: f64 = 1.0 - f64::EPSILON / 2.0;

#[inline]
fn squash(z: f64) -> f64 {
    z.tanh().clamp(-ACT_BOUND, ACT_BOUND)
}

/// `squash` with an operation-count side channel, for instrumented scoring.
/// Same value, bit for bit.
#[inline]
pub(crate) fn squash_counted(z: f64, ops: &mut u64) -> f64 {
    *ops += 1;
    squash(z)
}

/// One affine-plus-tanh layer applied to `input`, written into `out`.
/// All forward paths funnel through here.
#[inline]
fn affine_squash(layer: &Layer, input: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        let mut z = layer.bias[r];
        for (w, x) in layer.weights.row(r).iter().zip(input) {
            z += w * x;
        }
        *o = squash(z);
    }
}

/// One fully connected layer: weights are (out_dim x in_dim) row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    weights: Matrix,
    bias: Vec<f64>,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weights.rows() != bias.len() {
            return Err(Error::ShapeMismatch(format!(
                "layer weights have {} rows but bias has {} entries",
                weights.rows(),
                bias.len()
            )));
        }
        Ok(Layer { weights, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }
}

/// Activations recorded during a batch forward pass, one matrix per layer.
pub struct ForwardTrace {
    hidden: Vec<Matrix>,
}

impl ForwardTrace {
    /// Final-layer activations: the batch mapped into metric space.
    pub fn output(&self) -> &Matrix {
        self.hidden.last().expect("trace of a validated net has layers")
    }
}

/// Per-parameter gradients, shaped exactly like the network they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub d_weights: Vec<Matrix>,
    pub d_biases: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(net: &MetricNet) -> Self {
        GradientSet {
            d_weights: net
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            d_biases: net.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect(),
        }
    }

    fn check_shapes(&self, net: &MetricNet) -> Result<()> {
        if self.d_weights.len() != net.layers.len() || self.d_biases.len() != net.layers.len() {
            return Err(Error::ShapeMismatch(format!(
                "gradient set covers {} layers, network has {}",
                self.d_weights.len(),
                net.layers.len()
            )));
        }
        for (c, layer) in net.layers.iter().enumerate() {
            let dw = &self.d_weights[c];
            if dw.rows() != layer.out_dim()
                || dw.cols() != layer.in_dim()
                || self.d_biases[c].len() != layer.out_dim()
            {
                return Err(Error::ShapeMismatch(format!(
                    "gradient shapes for layer {c} do not match the network"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricNet {
    layers: Vec<Layer>,
    dims: Vec<usize>,
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::InvalidArchitecture(format!(
            "need at least an input and an output dimension, got {dims:?}"
        )));
    }
    if let Some(pos) = dims.iter().position(|&d| d == 0) {
        return Err(Error::InvalidArchitecture(format!(
            "layer dimension at position {pos} is zero"
        )));
    }
    Ok(())
}

impl MetricNet {
    /// Glorot-uniform initialization: each layer's weights are drawn
    /// row-major from U(-a, a) with a = sqrt(6 / (fan_in + fan_out)),
    /// biases start at zero. The draw order is fixed, so a given
    /// (dims, seed) pair yields the same network on every platform.
    pub fn glorot(dims: &[usize], seed: u64) -> Result<Self> {
        validate_dims(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new(-limit, limit).expect("positive init bound");
            let data = (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect();
            layers.push(Layer {
                weights: Matrix::from_vec(data, fan_out, fan_in),
                bias: vec![0.0; fan_out],
            });
        }
        Ok(MetricNet { layers, dims: dims.to_vec() })
    }

    /// All-zero parameters. Maps every input to the origin of metric space.
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        validate_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|pair| Layer {
                weights: Matrix::zeros(pair[1], pair[0]),
                bias: vec![0.0; pair[1]],
            })
            .collect();
        Ok(MetricNet { layers, dims: dims.to_vec() })
    }

    /// Assembles a network from explicit layers, checking the dimension chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArchitecture("no layers given".into()));
        }
        let mut dims = vec![layers[0].in_dim()];
        for (c, layer) in layers.iter().enumerate() {
            if layer.in_dim() == 0 || layer.out_dim() == 0 {
                return Err(Error::InvalidArchitecture(format!(
                    "layer {c} has a zero dimension"
                )));
            }
            if layer.in_dim() != *dims.last().expect("dims start nonempty") {
                return Err(Error::InvalidArchitecture(format!(
                    "layer {c} expects {} inputs but the previous layer produces {}",
                    layer.in_dim(),
                    dims.last().expect("dims start nonempty")
                )));
            }
            dims.push(layer.out_dim());
        }
        Ok(MetricNet { layers, dims })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    /// Dimension of the learned metric space.
    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("validated dims are nonempty")
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.in_dim() * l.out_dim() + l.out_dim())
            .sum()
    }

    /// Maps one point into metric space. Output components lie strictly
    /// inside (-1, 1).
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input has {} entries, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let mut next = vec![0.0; layer.out_dim()];
            affine_squash(layer, &cur, &mut next);
            cur = next;
        }
        Ok(cur)
    }

    /// Maps every row of `batch`; row i of the result equals
    /// `forward(batch.row(i))` exactly.
    pub fn forward_batch(&self, batch: &Matrix) -> Result<Matrix> {
        Ok(self.trace(batch)?.hidden.pop_or_empty(batch.rows(), self.output_dim()))
    }

    /// Batch forward pass keeping every layer's activations for backprop.
    pub fn trace(&self, batch: &Matrix) -> Result<ForwardTrace> {
        if !batch.is_empty() && batch.cols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "batch has {} columns, network expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        let mut hidden: Vec<Matrix> = Vec::with_capacity(self.layers.len());
        for (c, layer) in self.layers.iter().enumerate() {
            let prev: &Matrix = if c == 0 { batch } else { &hidden[c - 1] };
            let mut h = Matrix::zeros(prev.rows(), layer.out_dim());
            for i in 0..prev.rows() {
                affine_squash(layer, prev.row(i), h.row_mut(i));
            }
            hidden.push(h);
        }
        Ok(ForwardTrace { hidden })
    }

    /// Parameter gradients of any scalar loss whose per-output sensitivities
    /// are given in `upstream` (one row per batch row, shaped like the
    /// network output). Runs a fresh forward pass; use `backward_with_trace`
    /// to reuse one.
    pub fn backward(&self, batch: &Matrix, upstream: &Matrix) -> Result<GradientSet> {
        let trace = self.trace(batch)?;
        self.backward_with_trace(batch, &trace, upstream)
    }

    pub fn backward_with_trace(
        &self,
        batch: &Matrix,
        trace: &ForwardTrace,
        upstream: &Matrix,
    ) -> Result<GradientSet> {
        let k = batch.rows();
        if upstream.rows() != k || upstream.cols() != self.output_dim() {
            return Err(Error::ShapeMismatch(format!(
                "upstream is {}x{}, expected {}x{}",
                upstream.rows(),
                upstream.cols(),
                k,
                self.output_dim()
            )));
        }
        if !upstream.all_finite() {
            return Err(Error::Numeric("non-finite upstream gradient".into()));
        }
        let mut grads = GradientSet::zeros_like(self);

        // delta starts as dL/dh at the output and is pulled back layer by
        // layer through the tanh derivative 1 - h^2.
        let top = &trace.hidden[self.layers.len() - 1];
        let mut delta = Matrix::zeros(k, self.output_dim());
        for i in 0..k {
            let (d, u, h) = (delta.row_mut(i), upstream.row(i), top.row(i));
            for q in 0..d.len() {
                d[q] = u[q] * (1.0 - h[q] * h[q]);
            }
        }

        for c in (0..self.layers.len()).rev() {
            let prev: &Matrix = if c == 0 { batch } else { &trace.hidden[c - 1] };
            let dw = &mut grads.d_weights[c];
            let db = &mut grads.d_biases[c];
            for i in 0..k {
                let (d, p) = (delta.row(i), prev.row(i));
                for (r, &dr) in d.iter().enumerate() {
                    db[r] += dr;
                    for (w, &pq) in dw.row_mut(r).iter_mut().zip(p) {
                        *w += dr * pq;
                    }
                }
            }
            if c > 0 {
                let layer = &self.layers[c];
                let h_prev = &trace.hidden[c - 1];
                let mut next_delta = Matrix::zeros(k, layer.in_dim());
                for i in 0..k {
                    let d = delta.row(i);
                    let nd = next_delta.row_mut(i);
                    for (r, &dr) in d.iter().enumerate() {
                        for (n, &w) in nd.iter_mut().zip(layer.weights.row(r)) {
                            *n += dr * w;
                        }
                    }
                    let h = h_prev.row(i);
                    for (n, &hq) in nd.iter_mut().zip(h) {
                        *n *= 1.0 - hq * hq;
                    }
                }
                delta = next_delta;
            }
        }
        Ok(grads)
    }
}

/// Adam hyperparameters. Defaults are the standard
/// (beta1, beta2, epsilon) = (0.9, 0.999, 1e-8) with learning rate 1e-3.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    hyper: AdamHyper,
    m: GradientSet,
    v: GradientSet,
    t: u64,
}

impl AdamState {
    pub fn new(net: &MetricNet, hyper: AdamHyper) -> Self {
        AdamState {
            hyper,
            m: GradientSet::zeros_like(net),
            v: GradientSet::zeros_like(net),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

#[inline]
fn adam_update(p: &mut f64, g: f64, m: &mut f64, v: &mut f64, h: &AdamHyper, bc1: f64, bc2: f64) {
    *m = h.beta1 * *m + (1.0 - h.beta1) * g;
    *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
    let m_hat = *m / bc1;
    let v_hat = *v / bc2;
    *p -= h.learning_rate * m_hat / (v_hat.sqrt() + h.epsilon);
}

/// One bias-corrected Adam step over every parameter of `net`, in place.
/// Zero gradients leave both the parameters and the moments unchanged.
pub fn adam_step(net: &mut MetricNet, grads: &GradientSet, state: &mut AdamState) -> Result<()> {
    grads.check_shapes(net)?;
    state.m.check_shapes(net)?;
    state.t += 1;
    let h = state.hyper;
    let bc1 = 1.0 - h.beta1.powi(state.t as i32);
    let bc2 = 1.0 - h.beta2.powi(state.t as i32);
    for (c, layer) in net.layers.iter_mut().enumerate() {
        let (dw, db) = (&grads.d_weights[c], &grads.d_biases[c]);
        let w = layer.weights.as_mut_slice();
        let mw = state.m.d_weights[c].as_mut_slice();
        let vw = state.v.d_weights[c].as_mut_slice();
        for (((p, &g), m), v) in w.iter_mut().zip(dw.as_slice()).zip(mw).zip(vw) {
            adam_update(p, g, m, v, &h, bc1, bc2);
        }
        let mb = &mut state.m.d_biases[c];
        let vb = &mut state.v.d_biases[c];
        for (((p, &g), m), v) in layer.bias.iter_mut().zip(db).zip(mb).zip(vb) {
            adam_update(p, g, m, v, &h, bc1, bc2);
        }
    }
    Ok(())
}

trait PopOrEmpty {
    fn pop_or_empty(self, rows: usize, cols: usize) -> Matrix;
}

impl PopOrEmpty for Vec<Matrix> {
    fn pop_or_empty(mut self, rows: usize, cols: usize) -> Matrix {
        self.pop().unwrap_or_else(|| Matrix::zeros(rows, cols))
    }
}

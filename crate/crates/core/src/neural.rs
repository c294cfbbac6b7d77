//! Dense ReLU network with exact backpropagation and Adam.
//!
//! Parameters live in one flat vector, layer by layer: the weight matrix
//! (row-major, `in × out`) followed by the bias. Gradients and optimizer
//! moments share that layout, which keeps Adam, soft target updates and
//! gradient-norm clipping elementwise.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden widths used by every agent.
pub const HIDDEN: [usize; 2] = [50, 50];

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Single-column matrix.
    pub fn column(values: Vec<f64>) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Clone, Copy, Debug)]
struct LayerSpan {
    fan_in: usize,
    fan_out: usize,
    weights: usize,
    bias: usize,
}

fn layout(dims: &[usize]) -> (Vec<LayerSpan>, usize) {
    let mut offset = 0;
    let spans = dims
        .windows(2)
        .map(|w| {
            let span = LayerSpan {
                fan_in: w[0],
                fan_out: w[1],
                weights: offset,
                bias: offset + w[0] * w[1],
            };
            offset += w[0] * w[1] + w[1];
            span
        })
        .collect();
    (spans, offset)
}

/// Multilayer perceptron: affine layers with ReLU between them.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
}

/// Activations kept from a forward pass for [`Mlp::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    activations: Vec<Matrix>,
}

/// Parameter gradients, laid out like the network's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    values: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            values: vec![0.0; net.params.len()],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|g| *g *= factor);
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }
}

/// Scales all gradient sets jointly so their global L2 norm is at most
/// `max_norm`; returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [&mut Gradients], max_norm: f64) -> f64 {
    let total = grads
        .iter()
        .map(|g| g.values.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if total > max_norm {
        let factor = max_norm / (total + 1e-6);
        for g in grads.iter_mut() {
            g.scale(factor);
        }
    }
    total
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(dims);
        let (spans, _) = layout(dims);
        for span in spans {
            let bound = (6.0 / (span.fan_in + span.fan_out) as f64).sqrt();
            for w in &mut net.params[span.weights..span.bias] {
                *w = rng.random_range(-bound..bound);
            }
        }
        net
    }

    /// `input → 50 → 50 → output`.
    pub fn standard<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        Self::new(&[input, HIDDEN[0], HIDDEN[1], output], rng)
    }

    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "a network needs at least input and output widths");
        let (_, total) = layout(dims);
        Self {
            dims: dims.to_vec(),
            params: vec![0.0; total],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "{} parameters given, network has {}",
                params.len(),
                self.params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    pub fn forward(&self, batch: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(batch)?.0)
    }

    pub fn forward_cached(&self, batch: &Matrix) -> Result<(Matrix, ForwardCache)> {
        if batch.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} columns, network expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        let (spans, _) = layout(&self.dims);
        let last = spans.len() - 1;
        let mut activations = Vec::with_capacity(spans.len() + 1);
        activations.push(batch.clone());
        for (l, span) in spans.iter().enumerate() {
            let input = activations.last().unwrap();
            let w = &self.params[span.weights..span.bias];
            let b = &self.params[span.bias..span.bias + span.fan_out];
            let mut out = Matrix::zeros(input.rows(), span.fan_out);
            for r in 0..input.rows() {
                let out_row = out.row_mut(r);
                out_row.copy_from_slice(b);
                for (i, &a) in input.row(r).iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    let w_row = &w[i * span.fan_out..(i + 1) * span.fan_out];
                    for (o, &wv) in out_row.iter_mut().zip(w_row) {
                        *o += a * wv;
                    }
                }
                if l != last {
                    out_row.iter_mut().for_each(|v| *v = v.max(0.0));
                }
            }
            activations.push(out);
        }
        let output = activations.pop().unwrap();
        Ok((output, ForwardCache { activations }))
    }

    /// Gradients of `Σ upstream ⊙ output` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, upstream: &Matrix) -> Result<Gradients> {
        let (spans, _) = layout(&self.dims);
        let rows = cache.activations[0].rows();
        if upstream.rows() != rows || upstream.cols() != self.output_dim() {
            return Err(Error::Shape(format!(
                "upstream gradient is {}x{}, expected {rows}x{}",
                upstream.rows(),
                upstream.cols(),
                self.output_dim()
            )));
        }
        if cache.activations.len() != spans.len() {
            return Err(Error::Shape("forward cache does not match network depth".into()));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta = upstream.clone();
        for (l, span) in spans.iter().enumerate().rev() {
            let input = &cache.activations[l];
            {
                let (gw, gb) = grads.values[span.weights..span.bias + span.fan_out]
                    .split_at_mut(span.fan_in * span.fan_out);
                for r in 0..rows {
                    let d = delta.row(r);
                    for (gbv, &dv) in gb.iter_mut().zip(d) {
                        *gbv += dv;
                    }
                    for (i, &a) in input.row(r).iter().enumerate() {
                        if a == 0.0 {
                            continue;
                        }
                        let g_row = &mut gw[i * span.fan_out..(i + 1) * span.fan_out];
                        for (g, &dv) in g_row.iter_mut().zip(d) {
                            *g += a * dv;
                        }
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[span.weights..span.bias];
            let mut prev = Matrix::zeros(rows, span.fan_in);
            for r in 0..rows {
                let d = delta.row(r);
                let a_row = input.row(r);
                let p_row = prev.row_mut(r);
                for i in 0..span.fan_in {
                    // ReLU derivative: the hidden unit was active iff its output is positive.
                    if a_row[i] > 0.0 {
                        let w_row = &w[i * span.fan_out..(i + 1) * span.fan_out];
                        p_row[i] = w_row.iter().zip(d).map(|(a, b)| a * b).sum();
                    }
                }
            }
            delta = prev;
        }
        Ok(grads)
    }

    pub fn check_finite(&self, step: u64) -> Result<()> {
        match self.params.iter().position(|p| !p.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite {
                step,
                detail: format!("parameter {i} of {} is {}", self.params.len(), self.params[i]),
            }),
        }
    }

    fn same_architecture(&self, other: &Mlp) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!(
                "architectures differ: {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    pub fn to_checkpoint(&self, n: usize, config_hash: &str) -> NetworkCheckpoint {
        let (spans, _) = layout(&self.dims);
        let layers = spans
            .iter()
            .map(|s| LayerParams {
                weights: self.params[s.weights..s.bias]
                    .chunks(s.fan_out)
                    .map(<[f64]>::to_vec)
                    .collect(),
                bias: self.params[s.bias..s.bias + s.fan_out].to_vec(),
            })
            .collect();
        NetworkCheckpoint {
            n,
            dims: self.dims.clone(),
            config_hash: config_hash.to_string(),
            layers,
        }
    }

    pub fn from_checkpoint(ckpt: &NetworkCheckpoint) -> Result<Self> {
        if ckpt.dims.len() < 2 || ckpt.layers.len() != ckpt.dims.len() - 1 {
            return Err(Error::Parse("checkpoint layer count does not match dims".into()));
        }
        let mut params = Vec::new();
        for (layer, w) in ckpt.layers.iter().zip(ckpt.dims.windows(2)) {
            if layer.weights.len() != w[0]
                || layer.weights.iter().any(|r| r.len() != w[1])
                || layer.bias.len() != w[1]
            {
                return Err(Error::Parse(format!("layer {}x{} has wrong shape", w[0], w[1])));
            }
            params.extend(layer.weights.iter().flatten());
            params.extend(&layer.bias);
        }
        let mut net = Self::zeros(&ckpt.dims);
        net.set_params(params)?;
        Ok(net)
    }
}

/// `target ← (1 − τ)·target + τ·online`.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<()> {
    target.same_architecture(online)?;
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Config(format!("soft-update rate {tau} outside (0, 1]")));
    }
    for (t, &o) in target.params.iter_mut().zip(&online.params) {
        *t = (1.0 - tau) * *t + tau * o;
    }
    Ok(())
}

/// Adam optimizer state for one network.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub timestep: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(net: &Mlp, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            timestep: 0,
            m: vec![0.0; net.params.len()],
            v: vec![0.0; net.params.len()],
        }
    }

    /// One bias-corrected Adam update.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<()> {
        if grads.values.len() != net.params.len() || self.m.len() != net.params.len() {
            return Err(Error::Shape("gradient, moment and parameter sizes differ".into()));
        }
        self.timestep += 1;
        let t = self.timestep as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, &g), m), v) in net
            .params
            .iter_mut()
            .zip(&grads.values)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

/// Portable JSON form of a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkCheckpoint {
    pub n: usize,
    pub dims: Vec<usize>,
    pub config_hash: String,
    pub layers: Vec<LayerParams>,
}

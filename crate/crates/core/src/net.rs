//! Minimal fully connected function approximator with analytic gradients.
//!
//! Hidden layers use softplus, ln(1 + e^x) — a smooth rectifier whose lack of
//! kinks keeps finite-difference gradient checks well conditioned — and the
//! output head is linear. Parameters live in a flat vector with an explicit
//! layout so the same machinery serves value nets, critics, the actor, and
//! Gaussian dynamics heads.

use rand::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer-shape descriptor: `sizes = [input, hidden..., output]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub sizes: Vec<usize>,
}

impl Layout {
    pub fn new(sizes: Vec<usize>) -> Self {
        assert!(sizes.len() >= 2, "layout needs input and output sizes");
        assert!(sizes.iter().all(|&d| d > 0), "layer sizes must be positive");
        Self { sizes }
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

    pub fn param_count(&self) -> usize {
        (0..self.n_layers())
            .map(|i| self.sizes[i + 1] * (self.sizes[i] + 1))
            .sum()
    }

    /// Offset of layer `i`'s weight block in the flat vector.
    fn layer_offset(&self, layer: usize) -> usize {
        (0..layer)
            .map(|i| self.sizes[i + 1] * (self.sizes[i] + 1))
            .sum()
    }
}

/// Flat parameter vector tied to a layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: Layout,
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Layout) -> Result<Self> {
        if values.len() != layout.param_count() {
            return Err(Error::invalid(format!(
                "parameter vector has {} entries, layout needs {}",
                values.len(),
                layout.param_count()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("parameter vector has non-finite entries"));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: Layout) -> Self {
        let n = layout.param_count();
        Self {
            values: vec![0.0; n],
            layout,
        }
    }

    /// Scaled-uniform init: weights U(−b, b) with b = sqrt(6/(fan_in+fan_out)),
    /// biases zero.
    pub fn init_uniform(layout: Layout, rng: &mut StdRng) -> Self {
        let mut values = vec![0.0; layout.param_count()];
        for layer in 0..layout.n_layers() {
            let (fan_in, fan_out) = (layout.sizes[layer], layout.sizes[layer + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let off = layout.layer_offset(layer);
            for w in values[off..off + fan_out * fan_in].iter_mut() {
                *w = rng.gen_range(-bound..bound);
            }
            // biases (the fan_out entries after the weight block) stay zero
        }
        Self { values, layout }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// self += scale * other
    pub fn axpy(&mut self, scale: f64, other: &ParamVector) {
        debug_assert_eq!(self.layout, other.layout);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.layout.input_dim() {
            return Err(Error::invalid(format!(
                "input has dimension {}, layout expects {}",
                input.len(),
                self.layout.input_dim()
            )));
        }
        Ok(())
    }

    /// Evaluates the network.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut act = input.to_vec();
        for layer in 0..self.layout.n_layers() {
            act = self.layer_forward(layer, &act, layer + 1 < self.layout.n_layers());
        }
        Ok(act)
    }

    fn layer_forward(&self, layer: usize, act: &[f64], hidden: bool) -> Vec<f64> {
        let (n_in, n_out) = (self.layout.sizes[layer], self.layout.sizes[layer + 1]);
        let off = self.layer_offset(layer);
        let mut out = Vec::with_capacity(n_out);
        for o in 0..n_out {
            let row = &self.values[off + o * n_in..off + (o + 1) * n_in];
            let bias = self.values[off + n_out * n_in + o];
            let z = bias + row.iter().zip(act).map(|(w, x)| w * x).sum::<f64>();
            out.push(if hidden { softplus(z) } else { z });
        }
        out
    }

    fn layer_offset(&self, layer: usize) -> usize {
        self.layout.layer_offset(layer)
    }

    /// Forward pass retaining pre-activations; used by the backward pass.
    fn forward_trace(&self, input: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n_layers = self.layout.n_layers();
        let mut acts = vec![input.to_vec()];
        let mut pre = Vec::with_capacity(n_layers);
        for layer in 0..n_layers {
            let (n_in, n_out) = (self.layout.sizes[layer], self.layout.sizes[layer + 1]);
            let off = self.layer_offset(layer);
            let prev = &acts[layer];
            let mut z = Vec::with_capacity(n_out);
            for o in 0..n_out {
                let row = &self.values[off + o * n_in..off + (o + 1) * n_in];
                let bias = self.values[off + n_out * n_in + o];
                z.push(bias + row.iter().zip(prev).map(|(w, x)| w * x).sum::<f64>());
            }
            let a = if layer + 1 < n_layers {
                z.iter().map(|&x| softplus(x)).collect()
            } else {
                z.clone()
            };
            acts.push(a);
            pre.push(z);
        }
        (acts, pre)
    }

    /// Gradient of upstream·forward(input) with respect to the parameters.
    pub fn grad_params(&self, input: &[f64], upstream: &[f64]) -> Result<ParamVector> {
        let mut grad = ParamVector::zeros(self.layout.clone());
        self.accumulate_grad(input, upstream, 1.0, &mut grad.values)?;
        Ok(grad)
    }

    /// Adds `scale · ∂(upstream·forward)/∂params` into `acc`; returns the input gradient.
    ///
    /// Accumulating in place keeps batch loops allocation-free.
    pub fn accumulate_grad(
        &self,
        input: &[f64],
        upstream: &[f64],
        scale: f64,
        acc: &mut [f64],
    ) -> Result<Vec<f64>> {
        self.check_input(input)?;
        if upstream.len() != self.layout.output_dim() {
            return Err(Error::invalid(format!(
                "upstream has dimension {}, layout expects {}",
                upstream.len(),
                self.layout.output_dim()
            )));
        }
        debug_assert_eq!(acc.len(), self.len());
        let (acts, pre) = self.forward_trace(input);
        let n_layers = self.layout.n_layers();
        let mut delta = upstream.to_vec();
        for layer in (0..n_layers).rev() {
            let (n_in, n_out) = (self.layout.sizes[layer], self.layout.sizes[layer + 1]);
            let off = self.layer_offset(layer);
            let prev = &acts[layer];
            for o in 0..n_out {
                let d = delta[o] * scale;
                let w_row = off + o * n_in;
                for i in 0..n_in {
                    acc[w_row + i] += d * prev[i];
                }
                acc[off + n_out * n_in + o] += d;
            }
            // propagate into the previous layer's activations
            let mut next_delta = vec![0.0; n_in];
            for o in 0..n_out {
                let row = &self.values[off + o * n_in..off + (o + 1) * n_in];
                for i in 0..n_in {
                    next_delta[i] += row[i] * delta[o];
                }
            }
            if layer > 0 {
                for (i, nd) in next_delta.iter_mut().enumerate() {
                    *nd *= sigmoid(pre[layer - 1][i]);
                }
            }
            delta = next_delta;
        }
        Ok(delta)
    }

    /// Gradient of upstream·forward(input) with respect to the input.
    pub fn grad_input(&self, input: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        let mut scratch = vec![0.0; self.len()];
        self.accumulate_grad(input, upstream, 0.0, &mut scratch)
    }
}

/// A primary network plus its exponentially smoothed target copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValuePair {
    pub primary: ParamVector,
    pub target: ParamVector,
    pub tau: f64,
}

impl ValuePair {
    pub fn new(primary: ParamVector, tau: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::invalid(format!("tau must lie in [0,1], got {tau}")));
        }
        Ok(Self {
            target: primary.clone(),
            primary,
            tau,
        })
    }

    /// target ← tau·primary + (1−tau)·target
    pub fn soft_update(&mut self) {
        for (t, p) in self.target.values.iter_mut().zip(&self.primary.values) {
            *t = self.tau * *p + (1.0 - self.tau) * *t;
        }
    }
}

/// Adam on a flat parameter slice.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    /// One descent step along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        debug_assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

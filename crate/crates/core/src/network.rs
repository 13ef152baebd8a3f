//! The parallel-subnetwork logistic architecture.
//!
//! A network with topology `(d, K, L, r)` consists of `K` independent fully
//! connected subnets of depth `L` and width `r`. Subnet `k` maps `x ∈ R^d`
//! through `L` sigmoid layers; the network output is the linear combination
//! `Σ_k w_out[k] · f_{k,1}^{(L)}(x)` of the first neuron of every top layer.
//!
//! # Weight layout
//!
//! All weights live in one flat vector. For each subnet `k` in turn:
//!
//! * layer 0: `r` rows of `d + 1` entries (column 0 is the bias),
//! * layers `1..L`: `r` rows of `r + 1` entries (column 0 is the bias),
//!
//! and after all subnets the `K` output weights. Norms, projections and
//! gradient steps all act on this flat vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sigmoid::sigmoid;

/// Structural parameters of the parallel network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Topology {
    /// Input dimension `d`.
    pub input_dim: usize,
    /// Number of parallel subnets `K`.
    pub subnets: usize,
    /// Hidden layers per subnet `L`.
    pub depth: usize,
    /// Neurons per hidden layer `r`.
    pub width: usize,
}

/// Coordinates of a single weight.
///
/// `layer` indexes the weight matrix `w^(layer)` feeding hidden layer
/// `layer + 1`; `row` is the receiving neuron and `col` the sending one, with
/// `col == 0` the bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightIndex {
    Inner {
        subnet: usize,
        layer: usize,
        row: usize,
        col: usize,
    },
    Output {
        subnet: usize,
    },
}

impl Topology {
    pub fn new(input_dim: usize, subnets: usize, depth: usize, width: usize) -> Result<Self> {
        if input_dim == 0 || subnets == 0 || depth == 0 || width == 0 {
            return Err(Error::Topology(format!(
                "all of d={input_dim}, K={subnets}, L={depth}, r={width} must be at least 1"
            )));
        }
        Ok(Self {
            input_dim,
            subnets,
            depth,
            width,
        })
    }

    /// Number of columns in `w^(layer)` (inputs plus bias).
    #[inline]
    pub fn layer_cols(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim + 1
        } else {
            self.width + 1
        }
    }

    #[inline]
    fn layer_offset(&self, layer: usize) -> usize {
        if layer == 0 {
            0
        } else {
            self.width * (self.input_dim + 1) + (layer - 1) * self.width * (self.width + 1)
        }
    }

    /// Weights in one subnet, excluding its output weight.
    #[inline]
    pub fn subnet_len(&self) -> usize {
        self.width * (self.input_dim + 1) + (self.depth - 1) * self.width * (self.width + 1)
    }

    /// `K · (r(d+1) + (L−1)·r(r+1) + 1)`.
    pub fn weight_count(&self) -> usize {
        self.subnets * (self.subnet_len() + 1)
    }

    /// Flat index of the first output weight.
    #[inline]
    pub fn output_offset(&self) -> usize {
        self.subnets * self.subnet_len()
    }

    pub fn index_of(&self, idx: WeightIndex) -> usize {
        match idx {
            WeightIndex::Inner {
                subnet,
                layer,
                row,
                col,
            } => {
                assert!(subnet < self.subnets && layer < self.depth && row < self.width);
                assert!(col < self.layer_cols(layer));
                subnet * self.subnet_len()
                    + self.layer_offset(layer)
                    + row * self.layer_cols(layer)
                    + col
            }
            WeightIndex::Output { subnet } => {
                assert!(subnet < self.subnets);
                self.output_offset() + subnet
            }
        }
    }

    pub fn coord_of(&self, index: usize) -> WeightIndex {
        assert!(index < self.weight_count(), "flat index {index} out of range");
        let out = self.output_offset();
        if index >= out {
            return WeightIndex::Output {
                subnet: index - out,
            };
        }
        let subnet = index / self.subnet_len();
        let mut rem = index % self.subnet_len();
        let first = self.width * (self.input_dim + 1);
        let (layer, cols) = if rem < first {
            (0, self.input_dim + 1)
        } else {
            rem -= first;
            let block = self.width * (self.width + 1);
            let layer = 1 + rem / block;
            rem %= block;
            (layer, self.width + 1)
        };
        WeightIndex::Inner {
            subnet,
            layer,
            row: rem / cols,
            col: rem % cols,
        }
    }
}

/// All weights of a network in canonical flat order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    topology: Topology,
    values: Vec<f64>,
}

impl WeightVector {
    pub fn zeros(topology: Topology) -> Self {
        Self {
            values: vec![0.0; topology.weight_count()],
            topology,
        }
    }

    pub fn from_values(topology: Topology, values: Vec<f64>) -> Result<Self> {
        if values.len() != topology.weight_count() {
            return Err(Error::WeightCount {
                expected: topology.weight_count(),
                got: values.len(),
            });
        }
        Ok(Self { topology, values })
    }

    #[inline]
    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, idx: WeightIndex) -> f64 {
        self.values[self.topology.index_of(idx)]
    }

    pub fn set(&mut self, idx: WeightIndex, value: f64) {
        let i = self.topology.index_of(idx);
        self.values[i] = value;
    }

    /// Inner weights of subnet `k`.
    pub fn subnet(&self, k: usize) -> &[f64] {
        let len = self.topology.subnet_len();
        &self.values[k * len..(k + 1) * len]
    }

    pub fn subnet_mut(&mut self, k: usize) -> &mut [f64] {
        let len = self.topology.subnet_len();
        &mut self.values[k * len..(k + 1) * len]
    }

    /// The `K` output weights `w_{1,1,k}^{(L)}`.
    pub fn output_weights(&self) -> &[f64] {
        &self.values[self.topology.output_offset()..]
    }

    pub fn output_weights_mut(&mut self) -> &mut [f64] {
        let off = self.topology.output_offset();
        &mut self.values[off..]
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    /// Euclidean distance over the full flat vector.
    pub fn distance(&self, other: &WeightVector) -> f64 {
        assert_eq!(self.topology, other.topology, "topology mismatch");
        distance(&self.values, &other.values)
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Hidden activations `f_{k,i}^{(l)}(x)` for every subnet, layer and neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    topology: Topology,
    values: Vec<f64>,
}

impl Activations {
    /// Activation of neuron `i` (0-based) in hidden layer `layer` (1-based,
    /// `1..=L`) of subnet `k`.
    pub fn get(&self, k: usize, layer: usize, i: usize) -> f64 {
        let t = &self.topology;
        assert!(k < t.subnets && (1..=t.depth).contains(&layer) && i < t.width);
        self.values[(k * t.depth + layer - 1) * t.width + i]
    }

    /// Top-layer slice `f_{k,1}^{(L)}` for all `k`.
    pub fn top(&self) -> Vec<f64> {
        (0..self.topology.subnets)
            .map(|k| self.get(k, self.topology.depth, 0))
            .collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// Reusable per-subnet buffers for forward and backward passes.
#[derive(Debug, Clone)]
pub(crate) struct Scratch {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Scratch {
    pub(crate) fn new(t: &Topology) -> Self {
        Self {
            acts: vec![vec![0.0; t.width]; t.depth],
            deltas: vec![vec![0.0; t.width]; t.depth],
        }
    }
}

#[inline]
fn affine(row: &[f64], inputs: &[f64]) -> f64 {
    let mut s = row[0];
    for (w, a) in row[1..].iter().zip(inputs) {
        s += w * a;
    }
    s
}

/// Runs one subnet. Layers `1..L` are computed in full; in layer `L` only
/// neuron 0 is computed unless `full_top` is set. Returns `f_{k,1}^{(L)}(x)`.
fn subnet_forward(t: &Topology, block: &[f64], x: &[f64], acts: &mut [Vec<f64>], full_top: bool) -> f64 {
    let r = t.width;
    for layer in 0..t.depth {
        let cols = t.layer_cols(layer);
        let off = t.layer_offset(layer);
        let rows = if layer + 1 == t.depth && !full_top { 1 } else { r };
        let (done, rest) = acts.split_at_mut(layer);
        let inputs: &[f64] = if layer == 0 { x } else { &done[layer - 1] };
        let out = &mut rest[0];
        for i in 0..rows {
            let row = &block[off + i * cols..off + (i + 1) * cols];
            out[i] = sigmoid(affine(row, inputs));
        }
    }
    acts[t.depth - 1][0]
}

/// Backpropagates from the top neuron of one subnet, where `top_seed` is
/// `∂(objective)/∂f_{k,1}^{(L)}`. Gradients with respect to the subnet's
/// inner weights are added into `grad_block`; gradients with respect to the
/// input are added into `input_grad`. Requires a preceding
/// [`subnet_forward`] into `scratch.acts`.
fn subnet_backward(
    t: &Topology,
    block: &[f64],
    x: &[f64],
    top_seed: f64,
    scratch: &mut Scratch,
    mut grad_block: Option<&mut [f64]>,
    input_grad: Option<&mut [f64]>,
) {
    let r = t.width;
    let top = t.depth - 1;
    for v in scratch.deltas[top].iter_mut() {
        *v = 0.0;
    }
    let a = scratch.acts[top][0];
    scratch.deltas[top][0] = top_seed * a * (1.0 - a);
    let mut active_rows = 1;
    for layer in (0..t.depth).rev() {
        let cols = t.layer_cols(layer);
        let off = t.layer_offset(layer);
        if let Some(g) = grad_block.as_deref_mut() {
            let inputs: &[f64] = if layer == 0 { x } else { &scratch.acts[layer - 1] };
            for i in 0..active_rows {
                let delta = scratch.deltas[layer][i];
                if delta == 0.0 {
                    continue;
                }
                let row = &mut g[off + i * cols..off + (i + 1) * cols];
                row[0] += delta;
                for (gw, inp) in row[1..].iter_mut().zip(inputs) {
                    *gw += delta * inp;
                }
            }
        }
        if layer == 0 {
            if let Some(ig) = input_grad {
                for i in 0..active_rows {
                    let delta = scratch.deltas[0][i];
                    let row = &block[off + i * cols..off + (i + 1) * cols];
                    for (g, w) in ig.iter_mut().zip(&row[1..]) {
                        *g += delta * w;
                    }
                }
            }
            break;
        }
        let (lower, upper) = scratch.deltas.split_at_mut(layer);
        let below = &mut lower[layer - 1];
        let here = &upper[0];
        for v in below.iter_mut() {
            *v = 0.0;
        }
        for i in 0..active_rows {
            let delta = here[i];
            if delta == 0.0 {
                continue;
            }
            let row = &block[off + i * cols..off + (i + 1) * cols];
            for (b, w) in below.iter_mut().zip(&row[1..]) {
                *b += delta * w;
            }
        }
        for (b, a) in below.iter_mut().zip(&scratch.acts[layer - 1]) {
            *b *= a * (1.0 - a);
        }
        active_rows = r;
    }
}

fn check_dim(w: &WeightVector, x: &[f64]) {
    assert_eq!(
        x.len(),
        w.topology.input_dim,
        "input has dimension {}, network expects {}",
        x.len(),
        w.topology.input_dim
    );
}

/// `f_w(x) = Σ_k w_out[k] · f_{k,1}^{(L)}(x)`.
pub fn forward(w: &WeightVector, x: &[f64]) -> f64 {
    check_dim(w, x);
    let t = &w.topology;
    let mut scratch = Scratch::new(t);
    forward_with(w, x, &mut scratch)
}

pub(crate) fn forward_with(w: &WeightVector, x: &[f64], scratch: &mut Scratch) -> f64 {
    let t = &w.topology;
    let outs = w.output_weights();
    let mut sum = 0.0;
    for (k, &wo) in outs.iter().enumerate() {
        if wo == 0.0 {
            continue;
        }
        sum += wo * subnet_forward(t, w.subnet(k), x, &mut scratch.acts, false);
    }
    sum
}

/// Top-neuron outputs `f_{k,1}^{(L)}(x)` of every subnet.
pub fn subnet_outputs(w: &WeightVector, x: &[f64]) -> Vec<f64> {
    check_dim(w, x);
    let t = &w.topology;
    let mut scratch = Scratch::new(t);
    (0..t.subnets)
        .map(|k| subnet_forward(t, w.subnet(k), x, &mut scratch.acts, false))
        .collect()
}

/// Every hidden activation of the network at `x`.
pub fn forward_units(w: &WeightVector, x: &[f64]) -> Activations {
    check_dim(w, x);
    let t = w.topology;
    let mut scratch = Scratch::new(&t);
    let mut values = Vec::with_capacity(t.subnets * t.depth * t.width);
    for k in 0..t.subnets {
        subnet_forward(&t, w.subnet(k), x, &mut scratch.acts, true);
        for layer in &scratch.acts {
            values.extend_from_slice(layer);
        }
    }
    Activations { topology: t, values }
}

/// Adds `scale · ∂f_w(x)/∂w` into `grad` and returns `f_w(x)`.
pub(crate) fn accumulate_param_grad(
    w: &WeightVector,
    x: &[f64],
    scale: f64,
    grad: &mut [f64],
    scratch: &mut Scratch,
) -> f64 {
    let t = &w.topology;
    let len = t.subnet_len();
    let out_off = t.output_offset();
    let outs = w.output_weights();
    let mut f = 0.0;
    for k in 0..t.subnets {
        let block = w.subnet(k);
        let top = subnet_forward(t, block, x, &mut scratch.acts, false);
        f += outs[k] * top;
        grad[out_off + k] += scale * top;
        if outs[k] != 0.0 && scale != 0.0 {
            let g = &mut grad[k * len..(k + 1) * len];
            subnet_backward(t, block, x, scale * outs[k], scratch, Some(g), None);
        }
    }
    f
}

/// Returns `(f_w(x), ∂f_w(x)/∂w)`.
pub fn param_gradient(w: &WeightVector, x: &[f64]) -> (f64, Vec<f64>) {
    check_dim(w, x);
    let mut grad = vec![0.0; w.len()];
    let mut scratch = Scratch::new(&w.topology);
    let f = accumulate_param_grad(w, x, 1.0, &mut grad, &mut scratch);
    (f, grad)
}

/// `∇_x f_w(x)`.
pub fn input_gradient(w: &WeightVector, x: &[f64]) -> Vec<f64> {
    check_dim(w, x);
    let t = &w.topology;
    let mut scratch = Scratch::new(t);
    let mut g = vec![0.0; t.input_dim];
    for (k, &wo) in w.output_weights().iter().enumerate() {
        if wo == 0.0 {
            continue;
        }
        let block = w.subnet(k);
        subnet_forward(t, block, x, &mut scratch.acts, false);
        subnet_backward(t, block, x, wo, &mut scratch, None, Some(&mut g));
    }
    g
}

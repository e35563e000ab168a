//! A minimal bias-free fully connected network.
//!
//! Layer `l` maps `layer_sizes[l]` inputs to `layer_sizes[l + 1]` outputs. Its
//! edges are stored as a flat row-major `[out][in]` matrix, so edge
//! `o * fan_in + i` connects input unit `i` to output unit `o`. Hidden layers
//! use ReLU; the last layer produces logits that are turned into class
//! probabilities with a row-wise softmax.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ranking::BinaryMask;
use crate::seed;

/// Per-layer flat parameter vectors (weights, scores, gradients, masks).
pub type LayerParams = Vec<Vec<f64>>;

const LOG_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    layer_sizes: Vec<usize>,
}

impl NetSpec {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidSpec(format!(
                "need at least 2 layer sizes, got {}",
                layer_sizes.len()
            )));
        }
        if let Some(pos) = layer_sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidSpec(format!("layer size {pos} is zero")));
        }
        Ok(Self { layer_sizes })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    /// Number of weight layers.
    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn fan_in(&self, layer: usize) -> usize {
        self.layer_sizes[layer]
    }

    pub fn fan_out(&self, layer: usize) -> usize {
        self.layer_sizes[layer + 1]
    }

    pub fn edge_count(&self, layer: usize) -> usize {
        self.layer_sizes[layer] * self.layer_sizes[layer + 1]
    }

    pub fn edge_counts(&self) -> Vec<usize> {
        (0..self.num_layers()).map(|l| self.edge_count(l)).collect()
    }

    pub fn total_edges(&self) -> usize {
        self.edge_counts().iter().sum()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Checks that `params` has exactly one vector per layer with the layer's edge count.
    pub fn check_congruent(&self, params: &[Vec<f64>], what: &str) -> Result<()> {
        if params.len() != self.num_layers() {
            return Err(Error::ShapeMismatch(format!(
                "{what}: expected {} layers, got {}",
                self.num_layers(),
                params.len()
            )));
        }
        for (l, p) in params.iter().enumerate() {
            if p.len() != self.edge_count(l) {
                return Err(Error::ShapeMismatch(format!(
                    "{what}: layer {l} has {} entries, expected {}",
                    p.len(),
                    self.edge_count(l)
                )));
            }
        }
        Ok(())
    }

    pub fn zeros(&self) -> LayerParams {
        self.edge_counts().into_iter().map(|d| vec![0.0; d]).collect()
    }

    /// Uniform weights in `[-sqrt(6 / fan_in), sqrt(6 / fan_in)]`, one stream per layer.
    pub fn init_weights(&self, seed: u64) -> LayerParams {
        (0..self.num_layers())
            .map(|l| {
                let bound = (6.0 / self.fan_in(l) as f64).sqrt();
                let mut rng = seed::rng(seed, &[seed::tag::WEIGHTS, l as u64]);
                (0..self.edge_count(l))
                    .map(|_| rng.random_range(-bound..=bound))
                    .collect()
            })
            .collect()
    }

    /// Scores uniform in the open interval (0, 1), one stream per layer.
    pub fn init_scores(&self, seed: u64) -> LayerParams {
        (0..self.num_layers())
            .map(|l| {
                let mut rng = seed::rng(seed, &[seed::tag::SCORES, l as u64]);
                (0..self.edge_count(l))
                    .map(|_| loop {
                        let s: f64 = rng.random();
                        if s > 0.0 {
                            break s;
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// A randomly initialized network whose weights never change; only its edge
/// scores are trained.
#[derive(Debug, Clone)]
pub struct SuperNetwork {
    spec: NetSpec,
    weights: LayerParams,
    scores: LayerParams,
    seed: u64,
}

impl SuperNetwork {
    pub fn init(spec: NetSpec, seed: u64) -> Self {
        let weights = spec.init_weights(seed);
        let scores = spec.init_scores(seed);
        Self {
            spec,
            weights,
            scores,
            seed,
        }
    }

    /// Builds a network from explicit parameters. Used for constructed test
    /// fixtures; `seed` is recorded but not used to regenerate anything.
    pub fn from_parts(spec: NetSpec, weights: LayerParams, scores: LayerParams, seed: u64) -> Result<Self> {
        spec.check_congruent(&weights, "weights")?;
        spec.check_congruent(&scores, "scores")?;
        Ok(Self {
            spec,
            weights,
            scores,
            seed,
        })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn weights(&self) -> &LayerParams {
        &self.weights
    }

    pub fn scores(&self) -> &LayerParams {
        &self.scores
    }

    pub fn set_scores(&mut self, scores: LayerParams) -> Result<()> {
        self.spec.check_congruent(&scores, "scores")?;
        self.scores = scores;
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// FNV-1a over the weight bit patterns.
    pub fn weight_checksum(&self) -> u64 {
        checksum(&self.weights)
    }
}

pub fn checksum(params: &[Vec<f64>]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for layer in params {
        for v in layer {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    h
}

/// A borrowed mini-batch: `inputs` is row-major `len × dim`.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    inputs: &'a [f64],
    labels: &'a [usize],
    dim: usize,
}

impl<'a> Batch<'a> {
    pub fn new(inputs: &'a [f64], labels: &'a [usize], dim: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty("batch"));
        }
        if dim == 0 || inputs.len() != labels.len() * dim {
            return Err(Error::ShapeMismatch(format!(
                "batch of {} labels with dim {dim} needs {} inputs, got {}",
                labels.len(),
                labels.len() * dim,
                inputs.len()
            )));
        }
        Ok(Self { inputs, labels, dim })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn inputs(&self) -> &'a [f64] {
        self.inputs
    }

    pub fn labels(&self) -> &'a [usize] {
        self.labels
    }

    fn check(&self, spec: &NetSpec) -> Result<()> {
        if self.dim != spec.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "batch dim {} != network input dim {}",
                self.dim,
                spec.input_dim()
            )));
        }
        let c = spec.output_dim();
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= c) {
            return Err(Error::InvalidArgument(format!("label {bad} out of range for {c} classes")));
        }
        Ok(())
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|r| {
                let row = self.row(r);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

/// Activations recorded during a forward pass, needed for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `acts[l]` is the `batch × layer_sizes[l]` input to weight layer `l`.
    acts: Vec<Vec<f64>>,
    probs: Matrix,
}

impl Trace {
    pub fn probs(&self) -> &Matrix {
        &self.probs
    }
}

/// Elementwise product of weights and per-edge multipliers.
pub fn effective_weights(weights: &[Vec<f64>], multipliers: &[Vec<f64>]) -> LayerParams {
    weights
        .iter()
        .zip(multipliers)
        .map(|(w, m)| w.iter().zip(m).map(|(a, b)| a * b).collect())
        .collect()
}

fn masked_weights(weights: &[Vec<f64>], mask: &BinaryMask) -> LayerParams {
    weights
        .iter()
        .zip(mask.layers())
        .map(|(w, m)| w.iter().zip(m).map(|(&a, &on)| if on { a } else { 0.0 }).collect())
        .collect()
}

fn check_mask(spec: &NetSpec, mask: &BinaryMask) -> Result<()> {
    let counts = spec.edge_counts();
    if mask.layers().len() != counts.len()
        || mask.layers().iter().zip(&counts).any(|(m, &d)| m.len() != d)
    {
        return Err(Error::ShapeMismatch("mask is not congruent with network".into()));
    }
    Ok(())
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Forward pass with explicit effective weights.
pub fn forward_trace(spec: &NetSpec, eff: &[Vec<f64>], batch: &Batch<'_>) -> Result<Trace> {
    spec.check_congruent(eff, "effective weights")?;
    batch.check(spec)?;
    let n = batch.len();
    let layers = spec.num_layers();
    let mut acts = Vec::with_capacity(layers);
    acts.push(batch.inputs().to_vec());
    let mut logits = Vec::new();
    for (l, w) in eff.iter().enumerate() {
        let (fi, fo) = (spec.fan_in(l), spec.fan_out(l));
        let input = &acts[l];
        let mut out = vec![0.0; n * fo];
        for b in 0..n {
            let x = &input[b * fi..(b + 1) * fi];
            let y = &mut out[b * fo..(b + 1) * fo];
            for (o, yo) in y.iter_mut().enumerate() {
                let row = &w[o * fi..(o + 1) * fi];
                *yo = row.iter().zip(x).map(|(a, b)| a * b).sum();
            }
        }
        if l + 1 < layers {
            for v in out.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            acts.push(out);
        } else {
            logits = out;
        }
    }
    let c = spec.output_dim();
    for r in 0..n {
        softmax_in_place(&mut logits[r * c..(r + 1) * c]);
    }
    Ok(Trace {
        acts,
        probs: Matrix {
            rows: n,
            cols: c,
            data: logits,
        },
    })
}

/// Backpropagates a gradient with respect to the logits down to the effective weights.
pub fn backprop(spec: &NetSpec, eff: &[Vec<f64>], trace: &Trace, dlogits: &[f64]) -> LayerParams {
    let n = trace.probs.rows;
    let layers = spec.num_layers();
    let mut grads = spec.zeros();
    let mut delta = dlogits.to_vec();
    for l in (0..layers).rev() {
        let (fi, fo) = (spec.fan_in(l), spec.fan_out(l));
        let input = &trace.acts[l];
        let g = &mut grads[l];
        for b in 0..n {
            let x = &input[b * fi..(b + 1) * fi];
            let d = &delta[b * fo..(b + 1) * fo];
            for (o, &dv) in d.iter().enumerate() {
                if dv == 0.0 {
                    continue;
                }
                for (gi, &xi) in g[o * fi..(o + 1) * fi].iter_mut().zip(x) {
                    *gi += dv * xi;
                }
            }
        }
        if l == 0 {
            break;
        }
        let w = &eff[l];
        let mut next = vec![0.0; n * fi];
        for b in 0..n {
            let d = &delta[b * fo..(b + 1) * fo];
            let nx = &mut next[b * fi..(b + 1) * fi];
            for (o, &dv) in d.iter().enumerate() {
                if dv == 0.0 {
                    continue;
                }
                for (ni, &wi) in nx.iter_mut().zip(&w[o * fi..(o + 1) * fi]) {
                    *ni += dv * wi;
                }
            }
            // ReLU gate: the stored activation is positive exactly where the pre-activation was.
            for (ni, &a) in nx.iter_mut().zip(&input[b * fi..(b + 1) * fi]) {
                if a <= 0.0 {
                    *ni = 0.0;
                }
            }
        }
        delta = next;
    }
    grads
}

/// Mean cross-entropy `-ln(p_y + 1e-12)` and its gradient with respect to the logits.
pub fn cross_entropy(probs: &Matrix, labels: &[usize]) -> (f64, Vec<f64>) {
    let n = probs.rows;
    let c = probs.cols;
    let mut loss = 0.0;
    let mut d = vec![0.0; n * c];
    for (r, &y) in labels.iter().enumerate() {
        let p = probs.row(r);
        let py = p[y];
        loss -= (py + LOG_EPS).ln();
        let scale = py / (py + LOG_EPS) / n as f64;
        for j in 0..c {
            let onehot = if j == y { 1.0 } else { 0.0 };
            d[r * c + j] = scale * (p[j] - onehot);
        }
    }
    (loss / n as f64, d)
}

/// Mean cross-entropy loss without gradients.
pub fn mean_loss(probs: &Matrix, labels: &[usize]) -> f64 {
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(r, &y)| -(probs.row(r)[y] + LOG_EPS).ln())
        .sum();
    total / labels.len() as f64
}

pub fn accuracy(probs: &Matrix, labels: &[usize]) -> f64 {
    let hits = probs
        .argmax_rows()
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    hits as f64 / labels.len() as f64
}

/// Class probabilities of the masked supernetwork; `None` means the all-ones mask.
pub fn forward(net: &SuperNetwork, mask: Option<&BinaryMask>, batch: &Batch<'_>) -> Result<Matrix> {
    let eff = match mask {
        Some(m) => {
            check_mask(&net.spec, m)?;
            masked_weights(&net.weights, m)
        }
        None => net.weights.clone(),
    };
    Ok(forward_trace(&net.spec, &eff, batch)?.probs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradKind {
    Weight,
    Score,
}

/// Gradients shaped like the network's weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub kind: GradKind,
    pub layers: LayerParams,
}

#[derive(Debug, Clone)]
pub struct Backward {
    pub loss: f64,
    pub weight_grads: GradientSet,
    pub score_grads: GradientSet,
    pub probs: Matrix,
}

/// Loss and gradients of the masked supernetwork.
///
/// Weight gradients are exact: `dL/dw_e = dL/dŵ_e * m_e`. Score gradients use
/// the straight-through estimator `dL/ds_e = dL/dŵ_e * w_e` on every edge,
/// masked or not.
pub fn backward(net: &SuperNetwork, mask: &BinaryMask, batch: &Batch<'_>) -> Result<Backward> {
    check_mask(&net.spec, mask)?;
    let eff = masked_weights(&net.weights, mask);
    let trace = forward_trace(&net.spec, &eff, batch)?;
    let (loss, dlogits) = cross_entropy(&trace.probs, batch.labels());
    let d_eff = backprop(&net.spec, &eff, &trace, &dlogits);
    let weight_grads = d_eff
        .iter()
        .zip(mask.layers())
        .map(|(g, m)| g.iter().zip(m).map(|(&g, &on)| if on { g } else { 0.0 }).collect())
        .collect();
    let score_grads = d_eff
        .iter()
        .zip(&net.weights)
        .map(|(g, w)| g.iter().zip(w).map(|(a, b)| a * b).collect())
        .collect();
    Ok(Backward {
        loss,
        weight_grads: GradientSet {
            kind: GradKind::Weight,
            layers: weight_grads,
        },
        score_grads: GradientSet {
            kind: GradKind::Score,
            layers: score_grads,
        },
        probs: trace.probs,
    })
}

/// Loss and exact weight gradients of an unmasked dense network.
pub fn dense_backward(spec: &NetSpec, weights: &[Vec<f64>], batch: &Batch<'_>) -> Result<(f64, LayerParams)> {
    let trace = forward_trace(spec, weights, batch)?;
    let (loss, dlogits) = cross_entropy(&trace.probs, batch.labels());
    Ok((loss, backprop(spec, weights, &trace, &dlogits)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// One SGD step with momentum and L2 weight decay:
/// `v <- momentum * v + grad + weight_decay * param; param <- param - lr * v`.
pub fn sgd_step(
    params: &mut [Vec<f64>],
    grads: &[Vec<f64>],
    cfg: &SgdConfig,
    velocity: &mut [Vec<f64>],
) -> Result<()> {
    if cfg.lr.is_nan() || cfg.lr <= 0.0 {
        return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", cfg.lr)));
    }
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::ShapeMismatch("sgd_step layer counts differ".into()));
    }
    for (l, ((p, g), v)) in params.iter().zip(grads).zip(velocity.iter()).enumerate() {
        if p.len() != g.len() || p.len() != v.len() {
            return Err(Error::ShapeMismatch(format!("sgd_step layer {l} lengths differ")));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence(format!("non-finite gradient in layer {l}")));
        }
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        for ((pi, gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
            *vi = cfg.momentum * *vi + gi + cfg.weight_decay * *pi;
            *pi -= cfg.lr * *vi;
        }
    }
    Ok(())
}

//! Group identity estimation and dynamic group creation.
//!
//! Client-side methods see only the frozen weights and the broadcast group
//! masks. They pick the group whose mask gives the lowest loss, or the group
//! whose confidence coefficient most reduces the output entropy of the
//! superposed network `f(x, W ⊙ Σ_q α_q M_q)`. The server-side method
//! clusters local rankings with k-means under the Spearman footrule.

use rand::seq::index;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::{self, backprop, effective_weights, forward_trace, LayerParams, Matrix, SuperNetwork};
use crate::ranking::{ranking_to_mask, spearman_distance, vote, BinaryMask, Ranking};
use crate::seed;

const LOG_EPS: f64 = 1e-12;

/// Forward/backward passes spent by an inference call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PassCount {
    pub forward: usize,
    pub backward: usize,
}

fn check_masks(net: &SuperNetwork, masks: &[BinaryMask]) -> Result<()> {
    if masks.is_empty() {
        return Err(Error::Empty("group masks"));
    }
    let counts = net.spec().edge_counts();
    for m in masks {
        if m.layers().len() != counts.len() || m.layers().iter().zip(&counts).any(|(l, &d)| l.len() != d) {
            return Err(Error::ShapeMismatch("group mask is not congruent with network".into()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowestLoss {
    pub group: usize,
    pub losses: Vec<f64>,
    pub passes: PassCount,
}

/// Group whose mask yields the smallest mean cross-entropy on `data` (ties to the smaller index).
pub fn lowest_loss(net: &SuperNetwork, masks: &[BinaryMask], data: &Dataset) -> Result<LowestLoss> {
    check_masks(net, masks)?;
    let batch = data.as_batch()?;
    let mut losses = Vec::with_capacity(masks.len());
    for m in masks {
        let probs = net::forward(net, Some(m), &batch)?;
        losses.push(net::mean_loss(&probs, batch.labels()));
    }
    let mut group = 0;
    for (q, &l) in losses.iter().enumerate() {
        if l < losses[group] {
            group = q;
        }
    }
    Ok(LowestLoss {
        group,
        passes: PassCount {
            forward: masks.len(),
            backward: 0,
        },
        losses,
    })
}

/// Mean row entropy `-Σ p ln(p + 1e-12)` in nats.
pub fn entropy(probs: &Matrix) -> Result<f64> {
    if probs.rows == 0 {
        return Err(Error::Empty("probability matrix"));
    }
    if probs.data.iter().any(|&p| p < 0.0 || p.is_nan()) {
        return Err(Error::InvalidArgument("negative or NaN probability".into()));
    }
    let total: f64 = probs.data.iter().map(|&p| -p * (p + LOG_EPS).ln()).sum();
    Ok(total / probs.rows as f64)
}

/// Gradient of the mean entropy with respect to the logits.
fn entropy_logit_grad(probs: &Matrix) -> Vec<f64> {
    let (n, c) = (probs.rows, probs.cols);
    let mut out = vec![0.0; n * c];
    for r in 0..n {
        let p = probs.row(r);
        let g: Vec<f64> = p
            .iter()
            .map(|&pi| -((pi + LOG_EPS).ln() + pi / (pi + LOG_EPS)) / n as f64)
            .collect();
        let mean: f64 = p.iter().zip(&g).map(|(a, b)| a * b).sum();
        for j in 0..c {
            out[r * c + j] = p[j] * (g[j] - mean);
        }
    }
    out
}

fn superpose(masks: &[BinaryMask], alpha: &[f64]) -> LayerParams {
    let mut acc: LayerParams = masks[0].layers().iter().map(|l| vec![0.0; l.len()]).collect();
    for (m, &a) in masks.iter().zip(alpha) {
        for (dst, bits) in acc.iter_mut().zip(m.layers()) {
            for (d, &b) in dst.iter_mut().zip(bits) {
                if b {
                    *d += a;
                }
            }
        }
    }
    acc
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaGradient {
    pub entropy: f64,
    /// `∂H/∂α_q` for every supplied mask.
    pub grad: Vec<f64>,
}

/// Entropy of the superposed network and its analytic gradient in `alpha`:
/// `∂H/∂α_q = Σ_e (∂H/∂ŵ_e) w_e M_q[e]`. One forward and one backward pass.
pub fn alpha_gradient(
    net: &SuperNetwork,
    masks: &[BinaryMask],
    alpha: &[f64],
    data: &Dataset,
) -> Result<AlphaGradient> {
    check_masks(net, masks)?;
    if alpha.len() != masks.len() {
        return Err(Error::ShapeMismatch(format!("{} coefficients for {} masks", alpha.len(), masks.len())));
    }
    if alpha.iter().any(|a| !a.is_finite()) {
        return Err(Error::InvalidArgument("non-finite mask coefficient".into()));
    }
    let batch = data.as_batch()?;
    let eff = effective_weights(net.weights(), &superpose(masks, alpha));
    let trace = forward_trace(net.spec(), &eff, &batch)?;
    let h = entropy(trace.probs())?;
    let d_eff = backprop(net.spec(), &eff, &trace, &entropy_logit_grad(trace.probs()));
    let grad: Vec<f64> = masks
        .iter()
        .map(|m| {
            d_eff
                .iter()
                .zip(net.weights())
                .zip(m.layers())
                .map(|((g, w), bits)| {
                    g.iter()
                        .zip(w)
                        .zip(bits)
                        .filter(|(_, &b)| b)
                        .map(|((gi, wi), _)| gi * wi)
                        .sum::<f64>()
                })
                .sum()
        })
        .collect();
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence("non-finite entropy gradient".into()));
    }
    Ok(AlphaGradient { entropy: h, grad })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OneShot {
    pub group: usize,
    pub grad: Vec<f64>,
    pub passes: PassCount,
}

/// `argmax_q(-∂H/∂α_q)` at uniform `α = 1/Q`.
pub fn oneshot(net: &SuperNetwork, masks: &[BinaryMask], data: &Dataset) -> Result<OneShot> {
    check_masks(net, masks)?;
    let q = masks.len();
    let ag = alpha_gradient(net, masks, &vec![1.0 / q as f64; q], data)?;
    let mut group = 0;
    for (i, &g) in ag.grad.iter().enumerate() {
        if -g > -ag.grad[group] {
            group = i;
        }
    }
    Ok(OneShot {
        group,
        grad: ag.grad,
        passes: PassCount { forward: 1, backward: 1 },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinarySearch {
    pub group: usize,
    pub iterations: usize,
    pub passes: PassCount,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Halving search over the superposition: each round recomputes the entropy
/// gradient over the surviving masks (with `α` renormalized to sum to 1) and
/// drops every group whose entropy-reduction score `-∂H/∂α_q` is at or below
/// the median. If that would drop everyone, the group with the largest
/// `|∂H/∂α_q|` survives.
pub fn binary_search(net: &SuperNetwork, masks: &[BinaryMask], data: &Dataset) -> Result<BinarySearch> {
    check_masks(net, masks)?;
    let mut alive: Vec<usize> = (0..masks.len()).collect();
    let mut iterations = 0;
    while alive.len() > 1 {
        let sub: Vec<BinaryMask> = alive.iter().map(|&q| masks[q].clone()).collect();
        let alpha = vec![1.0 / alive.len() as f64; alive.len()];
        let ag = alpha_gradient(net, &sub, &alpha, data)?;
        iterations += 1;
        let score: Vec<f64> = ag.grad.iter().map(|g| -g).collect();
        let med = median(&score);
        let keep: Vec<usize> = (0..alive.len()).filter(|&i| score[i] > med).collect();
        alive = if keep.is_empty() {
            let mut best = 0;
            for i in 1..ag.grad.len() {
                if ag.grad[i].abs() > ag.grad[best].abs() {
                    best = i;
                }
            }
            vec![alive[best]]
        } else {
            keep.into_iter().map(|i| alive[i]).collect()
        };
    }
    Ok(BinarySearch {
        group: alive[0],
        iterations,
        passes: PassCount {
            forward: iterations,
            backward: iterations,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub assignment: Vec<usize>,
    pub centroids: Vec<Ranking>,
    /// Sum of member-to-centroid distances after each assignment step.
    pub costs: Vec<u64>,
}

/// Nearest centroid per ranking (ties to the lowest cluster index) and the total distance.
pub fn assign_to_nearest(rankings: &[Ranking], centroids: &[Ranking]) -> Result<(Vec<usize>, u64)> {
    let mut cost = 0;
    let mut out = Vec::with_capacity(rankings.len());
    for r in rankings {
        let mut best = (u64::MAX, 0);
        for (q, c) in centroids.iter().enumerate() {
            let d = spearman_distance(r, c)?;
            if d < best.0 {
                best = (d, q);
            }
        }
        cost += best.0;
        out.push(best.1);
    }
    Ok((out, cost))
}

/// Total distance of each ranking to the centroid it is assigned to.
pub fn assignment_cost(rankings: &[Ranking], centroids: &[Ranking], assignment: &[usize]) -> Result<u64> {
    rankings
        .iter()
        .zip(assignment)
        .map(|(r, &q)| spearman_distance(r, &centroids[q]))
        .sum()
}

/// K-means over rankings: seeded distinct members as initial centroids, Spearman
/// assignment, majority-vote centroids. An empty cluster takes the ranking that
/// is farthest from its own centroid (among clusters with more than one member).
pub fn rank_clustering(rankings: &[Ranking], q: usize, iterations: usize, seed_value: u64) -> Result<ClusterAssignment> {
    let n = rankings.len();
    if q == 0 || n < q {
        return Err(Error::InvalidArgument(format!("cannot form {q} clusters from {n} rankings")));
    }
    if iterations == 0 {
        return Err(Error::InvalidArgument("rank clustering needs at least one iteration".into()));
    }
    let mut rng = seed::rng(seed_value, &[seed::tag::CLUSTER]);
    let mut init: Vec<usize> = index::sample(&mut rng, n, q).into_vec();
    init.sort_unstable();
    let mut centroids: Vec<Ranking> = init.iter().map(|&i| rankings[i].clone()).collect();
    let mut assignment = Vec::new();
    let mut costs = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let (mut assign, cost) = assign_to_nearest(rankings, &centroids)?;
        costs.push(cost);
        for empty in 0..q {
            if assign.contains(&empty) {
                continue;
            }
            let mut sizes = vec![0usize; q];
            for &a in &assign {
                sizes[a] += 1;
            }
            let mut far: Option<(u64, usize)> = None;
            for (i, r) in rankings.iter().enumerate() {
                if sizes[assign[i]] < 2 {
                    continue;
                }
                let d = spearman_distance(r, &centroids[assign[i]])?;
                if far.is_none_or(|(fd, _)| d > fd) {
                    far = Some((d, i));
                }
            }
            if let Some((_, i)) = far {
                assign[i] = empty;
            }
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&Ranking> = rankings.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(r, _)| r).collect();
            if !members.is_empty() {
                *centroid = vote(members)?;
            }
        }
        assignment = assign;
    }
    Ok(ClusterAssignment {
        assignment,
        centroids,
        costs,
    })
}

/// True when no existing group reaches a loss below `tau`.
pub fn should_create_group_lowest_loss(losses: &[f64], tau: f64) -> bool {
    losses.iter().copied().fold(f64::INFINITY, f64::min) >= tau
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// True when `max softmax(-grad) < (1 + epsilon) / Q`, i.e. no group stands out.
pub fn should_create_group_oneshot(grad: &[f64], epsilon: f64) -> bool {
    if grad.is_empty() {
        return true;
    }
    let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
    let top = softmax(&neg).into_iter().fold(f64::NEG_INFINITY, f64::max);
    top < (1.0 + epsilon) / grad.len() as f64
}

/// Initial ranking of a new group: the majority vote of the existing group rankings.
pub fn knowledge_transfer_init(existing: &[Ranking]) -> Result<Ranking> {
    if existing.is_empty() {
        return Err(Error::Empty("group registry"));
    }
    vote(existing)
}

/// Server-side per-group rankings and the masks derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupRegistry {
    rankings: Vec<Ranking>,
    masks: Vec<BinaryMask>,
    k_percent: f64,
    pub tau: f64,
    pub epsilon: f64,
}

impl GroupRegistry {
    pub fn new(rankings: Vec<Ranking>, k_percent: f64, tau: f64, epsilon: f64) -> Result<Self> {
        if rankings.is_empty() {
            return Err(Error::Empty("group registry needs at least one group"));
        }
        let masks = rankings
            .iter()
            .map(|r| ranking_to_mask(r, k_percent))
            .collect::<Result<_>>()?;
        Ok(Self {
            rankings,
            masks,
            k_percent,
            tau,
            epsilon,
        })
    }

    pub fn len(&self) -> usize {
        self.rankings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rankings.is_empty()
    }

    pub fn rankings(&self) -> &[Ranking] {
        &self.rankings
    }

    pub fn masks(&self) -> &[BinaryMask] {
        &self.masks
    }

    pub fn k_percent(&self) -> f64 {
        self.k_percent
    }

    pub fn set_ranking(&mut self, q: usize, ranking: Ranking) -> Result<()> {
        self.masks[q] = ranking_to_mask(&ranking, self.k_percent)?;
        self.rankings[q] = ranking;
        Ok(())
    }

    /// Adds a group initialized by knowledge transfer and returns its index.
    pub fn create_group(&mut self) -> Result<usize> {
        let init = knowledge_transfer_init(&self.rankings)?;
        self.masks.push(ranking_to_mask(&init, self.k_percent)?);
        self.rankings.push(init);
        Ok(self.rankings.len() - 1)
    }
}

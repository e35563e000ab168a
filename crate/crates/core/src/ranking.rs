//! Permutation algebra over per-layer edge rankings.
//!
//! A ranking lists a layer's edge indices from least to most important, so
//! `ranking[i]` is the edge holding position `i`. The inverse permutation maps
//! an edge to its position, which is the edge's *reputation*.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{LayerParams, NetSpec};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Ranking {
    layers: Vec<Vec<u32>>,
}

impl Ranking {
    /// Validates that every layer is a permutation of `0..d`.
    pub fn new(layers: Vec<Vec<u32>>) -> Result<Self> {
        for (l, layer) in layers.iter().enumerate() {
            check_permutation(l, layer)?;
        }
        Ok(Self { layers })
    }

    pub fn identity(spec: &NetSpec) -> Self {
        Self {
            layers: spec
                .edge_counts()
                .into_iter()
                .map(|d| (0..d as u32).collect())
                .collect(),
        }
    }

    /// Ranking of each layer's values, ascending.
    pub fn from_scores(scores: &[Vec<f64>]) -> Result<Self> {
        Ok(Self {
            layers: scores.iter().map(|s| argsort(s)).collect::<Result<_>>()?,
        })
    }

    pub fn layers(&self) -> &[Vec<u32>] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &[u32] {
        &self.layers[l]
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(Vec::len).collect()
    }

    /// Per-layer reputations: `positions()[l][e]` is the position of edge `e`.
    pub fn positions(&self) -> Vec<Vec<u32>> {
        self.layers.iter().map(|r| inverse(r)).collect()
    }

    pub fn is_congruent(&self, other: &Ranking) -> bool {
        self.layer_sizes() == other.layer_sizes()
    }

    pub fn matches_spec(&self, spec: &NetSpec) -> bool {
        self.layer_sizes() == spec.edge_counts()
    }
}

fn check_permutation(layer: usize, perm: &[u32]) -> Result<()> {
    let d = perm.len();
    let mut seen = vec![false; d];
    for &e in perm {
        let e = e as usize;
        if e >= d {
            return Err(Error::InvalidPermutation {
                layer,
                reason: format!("index {e} out of range 0..{d}"),
            });
        }
        if std::mem::replace(&mut seen[e], true) {
            return Err(Error::InvalidPermutation {
                layer,
                reason: format!("index {e} repeated"),
            });
        }
    }
    Ok(())
}

/// Indices that sort `values` ascending; ties keep ascending index order.
pub fn argsort(values: &[f64]) -> Result<Vec<u32>> {
    if let Some(i) = values.iter().position(|v| v.is_nan()) {
        return Err(Error::NanValue(i));
    }
    let mut idx: Vec<u32> = (0..values.len() as u32).collect();
    idx.sort_by(|&a, &b| values[a as usize].total_cmp(&values[b as usize]));
    Ok(idx)
}

fn argsort_u64(values: &[u64]) -> Vec<u32> {
    let mut idx: Vec<u32> = (0..values.len() as u32).collect();
    idx.sort_by_key(|&i| values[i as usize]);
    idx
}

fn inverse(perm: &[u32]) -> Vec<u32> {
    let mut inv = vec![0u32; perm.len()];
    for (pos, &e) in perm.iter().enumerate() {
        inv[e as usize] = pos as u32;
    }
    inv
}

/// Reassigns the multiset of `scores` so that edge `ranking[i]` receives the
/// `i`-th smallest score of its layer.
pub fn reorder_scores(scores: &[Vec<f64>], ranking: &Ranking) -> Result<LayerParams> {
    if scores.len() != ranking.num_layers() {
        return Err(Error::ShapeMismatch(format!(
            "{} score layers vs {} ranking layers",
            scores.len(),
            ranking.num_layers()
        )));
    }
    scores
        .iter()
        .zip(ranking.layers())
        .enumerate()
        .map(|(l, (s, r))| {
            if s.len() != r.len() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {l}: {} scores vs ranking of {}",
                    s.len(),
                    r.len()
                )));
            }
            if let Some(i) = s.iter().position(|v| v.is_nan()) {
                return Err(Error::NanValue(i));
            }
            let mut sorted = s.clone();
            sorted.sort_by(f64::total_cmp);
            let mut out = vec![0.0; s.len()];
            for (&edge, v) in r.iter().zip(sorted) {
                out[edge as usize] = v;
            }
            Ok(out)
        })
        .collect()
}

/// Majority vote: per layer, sum each edge's reputation over all rankings and
/// rank edges by the sums (ties by ascending edge index).
pub fn vote<'a, I>(rankings: I) -> Result<Ranking>
where
    I: IntoIterator<Item = &'a Ranking>,
{
    let mut iter = rankings.into_iter();
    let first = iter.next().ok_or(Error::Empty("vote needs at least one ranking"))?;
    let mut sums: Vec<Vec<u64>> = first
        .layers()
        .iter()
        .map(|r| inverse(r).into_iter().map(u64::from).collect())
        .collect();
    for r in iter {
        if !r.is_congruent(first) {
            return Err(Error::ShapeMismatch("vote over rankings of different shapes".into()));
        }
        for (acc, layer) in sums.iter_mut().zip(r.layers()) {
            for (pos, &e) in layer.iter().enumerate() {
                acc[e as usize] += pos as u64;
            }
        }
    }
    Ok(Ranking {
        layers: sums.iter().map(|s| argsort_u64(s)).collect(),
    })
}

/// Spearman footrule summed over layers: `Σ_l Σ_e |pos_a(e) - pos_b(e)|`.
pub fn spearman_distance(a: &Ranking, b: &Ranking) -> Result<u64> {
    if !a.is_congruent(b) {
        return Err(Error::ShapeMismatch("spearman distance over rankings of different shapes".into()));
    }
    Ok(a.layers()
        .iter()
        .zip(b.layers())
        .map(|(ra, rb)| {
            let (pa, pb) = (inverse(ra), inverse(rb));
            pa.iter()
                .zip(&pb)
                .map(|(&x, &y)| (x as i64 - y as i64).unsigned_abs())
                .sum::<u64>()
        })
        .sum())
}

/// `Σ position²` over a layer: `d(d-1)(2d-1)/6` for any valid permutation.
pub fn position_square_norm(layer: &[u32]) -> u64 {
    inverse(layer).iter().map(|&p| (p as u64) * (p as u64)).sum()
}

/// Number of edges kept in a layer of `d` edges: `round_half_even(k/100 * d)`, at least 1.
pub fn mask_size(d: usize, k_percent: f64) -> usize {
    let raw = (k_percent / 100.0 * d as f64).round_ties_even() as usize;
    raw.clamp(1.min(d), d)
}

fn check_k(k_percent: f64) -> Result<()> {
    if k_percent > 0.0 && k_percent <= 100.0 {
        Ok(())
    } else {
        Err(Error::InvalidKPercent(k_percent))
    }
}

/// Per-layer 0/1 edge selection.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    layers: Vec<Vec<bool>>,
    k_percent: Option<f64>,
}

impl BinaryMask {
    pub fn ones(spec: &NetSpec) -> Self {
        Self {
            layers: spec.edge_counts().into_iter().map(|d| vec![true; d]).collect(),
            k_percent: Some(100.0),
        }
    }

    pub fn zeros(spec: &NetSpec) -> Self {
        Self {
            layers: spec.edge_counts().into_iter().map(|d| vec![false; d]).collect(),
            k_percent: None,
        }
    }

    /// An arbitrary mask with no popcount guarantee.
    pub fn from_bits(layers: Vec<Vec<bool>>) -> Self {
        Self { layers, k_percent: None }
    }

    pub fn layers(&self) -> &[Vec<bool>] {
        &self.layers
    }

    /// The selection size the mask was derived with, if any.
    pub fn k_percent(&self) -> Option<f64> {
        self.k_percent
    }

    pub fn popcounts(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.iter().filter(|&&b| b).count()).collect()
    }

    pub fn to_multipliers(&self) -> LayerParams {
        self.layers
            .iter()
            .map(|l| l.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
            .collect()
    }
}

/// Sets the last `mask_size(d, k)` entries of each layer's ranking.
pub fn ranking_to_mask(ranking: &Ranking, k_percent: f64) -> Result<BinaryMask> {
    check_k(k_percent)?;
    let layers = ranking
        .layers()
        .iter()
        .map(|r| {
            let d = r.len();
            let keep = mask_size(d, k_percent);
            let mut bits = vec![false; d];
            for &e in &r[d - keep..] {
                bits[e as usize] = true;
            }
            bits
        })
        .collect();
    Ok(BinaryMask {
        layers,
        k_percent: Some(k_percent),
    })
}

/// How a ranking is costed on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RankingCoding {
    /// `d * ceil(log2 d)` bits: every index written at minimal fixed width.
    Index,
    /// `ceil(log2 d!)` bits: the information content of a permutation.
    #[default]
    Factorial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireSizeModel {
    pub ranking: RankingCoding,
    pub float_bits: u64,
}

impl Default for WireSizeModel {
    fn default() -> Self {
        Self {
            ranking: RankingCoding::Factorial,
            float_bits: 32,
        }
    }
}

/// Bits per index for a layer of `d` edges (at least 1).
pub fn index_width(d: usize) -> u32 {
    if d <= 2 {
        1
    } else {
        usize::BITS - (d - 1).leading_zeros()
    }
}

/// `log2(d!)`: exact summation for small `d`, Stirling series beyond.
pub fn log2_factorial(d: usize) -> f64 {
    if d <= 65_536 {
        (2..=d).map(|i| (i as f64).log2()).sum()
    } else {
        let n = d as f64;
        let ln = n * n.ln() - n + 0.5 * (2.0 * std::f64::consts::PI * n).ln() + 1.0 / (12.0 * n)
            - 1.0 / (360.0 * n.powi(3));
        ln / std::f64::consts::LN_2
    }
}

impl WireSizeModel {
    pub fn ranking_bits(&self, d: usize) -> u64 {
        let bits = match self.ranking {
            RankingCoding::Index => d as u64 * index_width(d) as u64,
            RankingCoding::Factorial => log2_factorial(d).ceil() as u64,
        };
        bits.max(1)
    }

    pub fn mask_bits(&self, d: usize) -> u64 {
        d as u64
    }
}

/// Per-client message sizes for one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WireSizes {
    pub upload_bits: u64,
    pub download_bits: u64,
    /// Dense float model, per direction.
    pub fedavg_bits: u64,
}

/// Upload is one ranking; download is the global ranking plus `n_groups` masks.
pub fn wire_sizes(spec: &NetSpec, model: &WireSizeModel, n_groups: usize) -> WireSizes {
    let dims = spec.edge_counts();
    let ranking: u64 = dims.iter().map(|&d| model.ranking_bits(d)).sum();
    let masks: u64 = dims.iter().map(|&d| model.mask_bits(d)).sum();
    let total = spec.total_edges() as u64;
    WireSizes {
        upload_bits: ranking,
        download_bits: ranking + n_groups as u64 * masks,
        fedavg_bits: model.float_bits * total,
    }
}

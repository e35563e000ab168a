//! Edge-popup: train edge scores of a frozen random network so that its
//! top-k% edges form a good subnetwork.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::{self, Batch, LayerParams, Matrix, SgdConfig, SuperNetwork};
use crate::ranking::{ranking_to_mask, reorder_scores, BinaryMask, Ranking};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpConfig {
    pub epochs: usize,
    pub k_percent: f64,
    /// Zero freezes the scores.
    pub lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for EpConfig {
    fn default() -> Self {
        Self {
            epochs: 2,
            k_percent: 50.0,
            lr: 0.1,
            batch_size: 8,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

impl EpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("edge-popup needs at least one epoch".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid learning rate {}", self.lr)));
        }
        if !(self.k_percent > 0.0 && self.k_percent <= 100.0) {
            return Err(Error::InvalidKPercent(self.k_percent));
        }
        Ok(())
    }

    fn sgd(&self) -> SgdConfig {
        SgdConfig {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }
}

/// Mask of the top-k% scored edges per layer.
pub fn score_mask(scores: &[Vec<f64>], k_percent: f64) -> Result<BinaryMask> {
    if let Some(l) = scores.iter().position(|s| s.iter().any(|v| !v.is_finite())) {
        return Err(Error::Divergence(format!("non-finite score in layer {l}")));
    }
    ranking_to_mask(&Ranking::from_scores(scores)?, k_percent)
}

/// Forward pass through the subnetwork selected by the network's current scores.
pub fn ep_forward(net: &SuperNetwork, k_percent: f64, batch: &Batch<'_>) -> Result<(Matrix, BinaryMask)> {
    let mask = score_mask(net.scores(), k_percent)?;
    let out = net::forward(net, Some(&mask), batch)?;
    Ok((out, mask))
}

#[derive(Debug, Clone)]
pub struct EpOutcome {
    pub scores: LayerParams,
    /// Mean minibatch loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Runs edge-popup from `scores`. Batches are reshuffled every epoch from a
/// stream seeded by `shuffle_seed`. The network's weights are only read.
pub fn ep_train(
    net: &SuperNetwork,
    mut scores: LayerParams,
    data: &Dataset,
    cfg: &EpConfig,
    shuffle_seed: u64,
) -> Result<EpOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("edge-popup training data"));
    }
    net.spec().check_congruent(&scores, "scores")?;
    let mut rng = seed::rng(shuffle_seed, &[seed::tag::SHUFFLE]);
    let mut velocity = net.spec().zeros();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let sgd = cfg.sgd();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let sub = data.subset(chunk);
            let batch = sub.as_batch()?;
            let mask = score_mask(&scores, cfg.k_percent)?;
            let bw = net::backward(net, &mask, &batch)?;
            if !bw.loss.is_finite() {
                return Err(Error::Divergence("non-finite edge-popup loss".into()));
            }
            total += bw.loss;
            batches += 1;
            if cfg.lr > 0.0 {
                net::sgd_step(&mut scores, &bw.score_grads.layers, &sgd, &mut velocity)?;
            }
        }
        epoch_losses.push(total / batches as f64);
    }
    Ok(EpOutcome { scores, epoch_losses })
}

/// A client's local ranking: the seeded initial scores are reassigned to follow
/// `global`, trained with edge-popup, and ranked.
pub fn local_ranking(
    net: &SuperNetwork,
    global: &Ranking,
    data: &Dataset,
    cfg: &EpConfig,
    shuffle_seed: u64,
) -> Result<Ranking> {
    if !global.matches_spec(net.spec()) {
        return Err(Error::ShapeMismatch("global ranking does not match network".into()));
    }
    let start = reorder_scores(net.scores(), global)?;
    let out = ep_train(net, start, data, cfg, shuffle_seed)?;
    Ranking::from_scores(&out.scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetSpec;

    #[test]
    fn full_mask_matches_unmasked_forward() {
        let net = SuperNetwork::init(NetSpec::new(vec![3, 4, 2]).unwrap(), 5);
        let x = [0.1, -0.4, 0.9, 1.0, 0.0, -1.0];
        let y = [0, 1];
        let batch = Batch::new(&x, &y, 3).unwrap();
        let (a, m) = ep_forward(&net, 100.0, &batch).unwrap();
        assert_eq!(a, net::forward(&net, None, &batch).unwrap());
        assert_eq!(m.popcounts(), vec![12, 8]);
        let (b, _) = ep_forward(&net, 100.0, &batch).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn increasing_scores_select_top_half() {
        let spec = NetSpec::new(vec![3, 2]).unwrap();
        let scores = vec![(0..6).map(|i| i as f64 * 0.1 + 0.05).collect()];
        let net = SuperNetwork::from_parts(spec.clone(), spec.init_weights(1), scores, 1).unwrap();
        let x = [0.0; 3];
        let batch = Batch::new(&x, &[0], 3).unwrap();
        let (_, mask) = ep_forward(&net, 50.0, &batch).unwrap();
        assert_eq!(mask.layers()[0], vec![false, false, false, true, true, true]);
    }

    #[test]
    fn config_validation() {
        let ok = EpConfig::default();
        assert!(ok.validate().is_ok());
        assert!(EpConfig { epochs: 0, ..ok }.validate().is_err());
        assert!(EpConfig { batch_size: 0, ..ok }.validate().is_err());
        assert!(EpConfig { k_percent: 0.0, ..ok }.validate().is_err());
        assert!(EpConfig { lr: -1.0, ..ok }.validate().is_err());
    }

    #[test]
    fn zero_learning_rate_returns_global_ranking() {
        let spec = NetSpec::new(vec![4, 5, 3]).unwrap();
        let net = SuperNetwork::init(spec.clone(), 2);
        let global = Ranking::from_scores(&spec.init_scores(99)).unwrap();
        let data = Dataset::new(vec![0.5; 8], vec![0, 2], 4, 3).unwrap();
        let cfg = EpConfig { lr: 0.0, ..Default::default() };
        assert_eq!(local_ranking(&net, &global, &data, &cfg, 0).unwrap(), global);
    }
}

//! Training loops: E2FL with two-level majority voting, and the dense
//! FedAvg / IFCA / local-only baselines.
//!
//! Every random choice is drawn from a stream derived from the run seed and
//! the (round, client) it belongs to, so runs replay exactly.

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::data::{Client, Dataset};
use crate::edgepopup::{local_ranking, EpConfig};
use crate::error::{Error, Result};
use crate::groupinfer::{
    binary_search, lowest_loss, oneshot, rank_clustering, should_create_group_lowest_loss,
    should_create_group_oneshot, ClusterAssignment, GroupRegistry,
};
use crate::net::{self, LayerParams, NetSpec, SgdConfig, SuperNetwork};
use crate::ranking::{ranking_to_mask, vote, wire_sizes, BinaryMask, Ranking, WireSizeModel};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    E2fl,
    Fedavg,
    Ifca,
    Local,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::E2fl => "e2fl",
            Algorithm::Fedavg => "fedavg",
            Algorithm::Ifca => "ifca",
            Algorithm::Local => "local",
        }
    }
}

/// How a client's group is determined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    /// The client knows its group.
    Known,
    /// Clients hold samples of several groups tagged with a protected attribute
    /// and submit one ranking per attribute value.
    Aware,
    LowestLoss,
    Oneshot,
    Binary,
    /// One-time server-side clustering of warmup rankings.
    RankCluster,
}

impl InferenceMode {
    fn is_client_side(self) -> bool {
        matches!(self, InferenceMode::LowestLoss | InferenceMode::Oneshot | InferenceMode::Binary)
    }
}

/// Number of groups: fixed, or grown on demand starting from one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupCount {
    Fixed(usize),
    Auto,
}

impl Serialize for GroupCount {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            GroupCount::Fixed(q) => s.serialize_u64(*q as u64),
            GroupCount::Auto => s.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for GroupCount {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => Ok(GroupCount::Fixed(n as usize)),
            Raw::S(s) if s == "auto" => Ok(GroupCount::Auto),
            Raw::S(s) => Err(serde::de::Error::custom(format!("expected a group count or \"auto\", got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub net: NetSpec,
    pub rounds: usize,
    pub local_epochs: usize,
    pub clients_per_round: usize,
    pub groups: GroupCount,
    pub k_percent: f64,
    /// Edge-popup score learning rate.
    pub lr: f64,
    /// Learning rate of the dense baselines.
    pub dense_lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub inference: InferenceMode,
    /// Lowest-loss creation threshold.
    pub tau: f64,
    /// OneShot creation slack.
    pub epsilon: f64,
    pub cluster_iterations: usize,
    pub wire: WireSizeModel,
    /// Evaluate every this many rounds; the last round is always evaluated.
    pub eval_every: usize,
}

impl FederationConfig {
    /// Defaults for a network of the given shape: E=2, η=0.1 (0.01 dense),
    /// batch 8, momentum 0.9, weight decay 1e-4, k=50%.
    pub fn new(net: NetSpec) -> Self {
        let tau = 0.7 * (net.output_dim() as f64).ln();
        Self {
            net,
            rounds: 150,
            local_epochs: 2,
            clients_per_round: 30,
            groups: GroupCount::Fixed(1),
            k_percent: 50.0,
            lr: 0.1,
            dense_lr: 0.01,
            batch_size: 8,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
            inference: InferenceMode::Known,
            tau,
            epsilon: 0.02,
            cluster_iterations: 10,
            wire: WireSizeModel::default(),
            eval_every: 1,
        }
    }

    pub fn validate(&self, n_clients: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.rounds == 0 {
            return bad("rounds must be at least 1".into());
        }
        if self.local_epochs == 0 {
            return bad("local_epochs must be at least 1".into());
        }
        if self.clients_per_round == 0 || self.clients_per_round > n_clients {
            return bad(format!(
                "clients_per_round must be in 1..={n_clients}, got {}",
                self.clients_per_round
            ));
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        if let GroupCount::Fixed(0) = self.groups {
            return bad("groups must be at least 1".into());
        }
        if self.groups == GroupCount::Auto
            && !matches!(self.inference, InferenceMode::LowestLoss | InferenceMode::Oneshot)
        {
            return bad("automatic group creation needs lowest_loss or oneshot inference".into());
        }
        if self.dense_lr.is_nan() || self.dense_lr <= 0.0 {
            return bad(format!("dense_lr must be positive, got {}", self.dense_lr));
        }
        self.ep_config().validate()
    }

    pub fn ep_config(&self) -> EpConfig {
        EpConfig {
            epochs: self.local_epochs,
            k_percent: self.k_percent,
            lr: self.lr,
            batch_size: self.batch_size,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    pub fn dense_sgd(&self) -> SgdConfig {
        SgdConfig {
            lr: self.dense_lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    fn initial_groups(&self) -> usize {
        match self.groups {
            GroupCount::Fixed(q) => q,
            GroupCount::Auto => 1,
        }
    }
}

/// The `n` clients selected in `round`, uniformly without replacement, ascending.
pub fn sample_clients(seed_value: u64, round: usize, n_total: usize, n: usize) -> Vec<usize> {
    let mut rng = seed::rng(seed_value, &[seed::tag::SAMPLING, round as u64]);
    let mut picked = index::sample(&mut rng, n_total, n).into_vec();
    picked.sort_unstable();
    picked
}

/// Shuffle stream of one client's local training in one round.
pub fn client_stream_seed(seed_value: u64, client: usize, round: usize) -> u64 {
    seed::derive(seed_value, &[seed::tag::SHUFFLE, client as u64, round as u64])
}

/// Per-client evaluation after a round.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Evaluation {
    /// Test accuracy of the model each client would use (its group's mask for E2FL).
    pub accuracy: Vec<f64>,
    pub loss: Vec<f64>,
    /// E2FL only: test accuracy with the global mask.
    pub accuracy_global: Option<Vec<f64>>,
    /// Group (or cluster) each client was evaluated with.
    pub eval_group: Vec<usize>,
    /// Pooled test predictions, labels and attributes for attribute-tagged data.
    pub pooled: Option<PooledPredictions>,
    pub pooled_global: Option<PooledPredictions>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PooledPredictions {
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
    pub attributes: Vec<u8>,
}

/// Ranking state after an E2FL round.
#[derive(Debug, Clone, PartialEq)]
pub struct RankState {
    pub groups: Vec<Ranking>,
    pub global: Ranking,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub selected: Vec<usize>,
    /// `(client, group)` for every submission (E2FL) or cluster choice (IFCA).
    pub assignments: Vec<(usize, usize)>,
    pub rankings: Option<RankState>,
    /// Index and initial ranking of a group created this round.
    pub created_group: Option<(usize, Ranking)>,
    pub up_bits: u64,
    pub down_bits: u64,
    pub eval: Option<Evaluation>,
}

/// Submission of one client: rankings tagged with a group, or a request for a new group.
#[derive(Debug, Clone)]
enum Tag {
    Group(usize),
    NewGroup,
}

/// E2FL server and simulated clients.
pub struct E2fl<'a> {
    cfg: FederationConfig,
    clients: &'a [Client],
    net: SuperNetwork,
    registry: GroupRegistry,
    global: Ranking,
    clusters: Option<ClusterAssignment>,
    round: usize,
    /// Traffic of the one-time clustering warmup.
    pub warmup_bits: (u64, u64),
}

impl<'a> E2fl<'a> {
    pub fn new(clients: &'a [Client], cfg: FederationConfig) -> Result<Self> {
        check_clients(clients, &cfg)?;
        let net = SuperNetwork::init(cfg.net.clone(), cfg.seed);
        let global = Ranking::from_scores(net.scores())?;
        let q = cfg.initial_groups();
        if cfg.inference == InferenceMode::Known {
            if let Some(c) = clients.iter().find(|c| c.group >= q) {
                return Err(Error::InvalidArgument(format!(
                    "client {} is in group {} but only {q} groups are configured",
                    c.id, c.group
                )));
            }
        }
        let initial: Vec<Ranking> = (0..q)
            .map(|g| {
                // Client-side inference cannot tell identical masks apart, so
                // groups other than 0 start from their own random scores.
                if g == 0 || !cfg.inference.is_client_side() {
                    Ok(global.clone())
                } else {
                    Ranking::from_scores(&cfg.net.init_scores(seed::derive(cfg.seed, &[seed::tag::GROUP_INIT, g as u64])))
                }
            })
            .collect::<Result<_>>()?;
        let registry = GroupRegistry::new(initial, cfg.k_percent, cfg.tau, cfg.epsilon)?;
        let mut state = Self {
            cfg,
            clients,
            net,
            registry,
            global,
            clusters: None,
            round: 0,
            warmup_bits: (0, 0),
        };
        if state.cfg.inference == InferenceMode::RankCluster {
            state.cluster_clients()?;
        }
        Ok(state)
    }

    fn cluster_clients(&mut self) -> Result<()> {
        let ep = self.cfg.ep_config();
        let rankings = self
            .clients
            .iter()
            .map(|c| local_ranking(&self.net, &self.global, &c.train, &ep, client_stream_seed(self.cfg.seed, c.id, 0)))
            .collect::<Result<Vec<_>>>()?;
        let q = self.registry.len();
        let clusters = rank_clustering(&rankings, q, self.cfg.cluster_iterations, self.cfg.seed)?;
        let ws = wire_sizes(&self.cfg.net, &self.cfg.wire, 0);
        let n = self.clients.len() as u64;
        self.warmup_bits = (n * ws.upload_bits, n * ws.download_bits);
        self.clusters = Some(clusters);
        Ok(())
    }

    pub fn network(&self) -> &SuperNetwork {
        &self.net
    }

    pub fn registry(&self) -> &GroupRegistry {
        &self.registry
    }

    pub fn global(&self) -> &Ranking {
        &self.global
    }

    pub fn clusters(&self) -> Option<&ClusterAssignment> {
        self.clusters.as_ref()
    }

    pub fn config(&self) -> &FederationConfig {
        &self.cfg
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// Replaces the client population, e.g. to bring in clients of an unseen group mid-run.
    pub fn set_clients(&mut self, clients: &'a [Client]) -> Result<()> {
        if self.cfg.inference == InferenceMode::RankCluster {
            return Err(Error::InvalidArgument("cluster assignments are fixed for the run".into()));
        }
        check_clients(clients, &self.cfg)?;
        self.clients = clients;
        Ok(())
    }

    /// Switches how clients resolve their group from the next round on.
    pub fn set_inference(&mut self, mode: InferenceMode, groups: GroupCount) -> Result<()> {
        if matches!(mode, InferenceMode::RankCluster | InferenceMode::Aware) && mode != self.cfg.inference {
            return Err(Error::InvalidArgument(format!("cannot switch to {mode:?} mid-run")));
        }
        let cfg = FederationConfig {
            inference: mode,
            groups,
            ..self.cfg.clone()
        };
        cfg.validate(self.clients.len())?;
        self.cfg = cfg;
        Ok(())
    }

    pub fn global_mask(&self) -> Result<BinaryMask> {
        ranking_to_mask(&self.global, self.cfg.k_percent)
    }

    /// Group used for `client` given the current masks; `create` allows a new-group request.
    fn resolve(&self, client: &Client, create: bool) -> Result<Tag> {
        let auto = create && self.cfg.groups == GroupCount::Auto;
        let masks = self.registry.masks();
        Ok(match self.cfg.inference {
            InferenceMode::Known | InferenceMode::Aware => Tag::Group(client.group),
            InferenceMode::RankCluster => Tag::Group(self.clusters.as_ref().unwrap().assignment[client.id]),
            InferenceMode::LowestLoss => {
                let ll = lowest_loss(&self.net, masks, &client.train)?;
                if auto && should_create_group_lowest_loss(&ll.losses, self.registry.tau) {
                    Tag::NewGroup
                } else {
                    Tag::Group(ll.group)
                }
            }
            InferenceMode::Oneshot => {
                let os = oneshot(&self.net, masks, &client.train)?;
                // With a single group the softmax is always 1 and the rule cannot discriminate.
                if auto && masks.len() >= 2 && should_create_group_oneshot(&os.grad, self.registry.epsilon) {
                    Tag::NewGroup
                } else {
                    Tag::Group(os.group)
                }
            }
            InferenceMode::Binary => Tag::Group(binary_search(&self.net, masks, &client.train)?.group),
        })
    }

    /// One round: sampling, group resolution, local edge-popup, then the
    /// within-group and cross-group votes.
    pub fn step(&mut self) -> Result<RoundRecord> {
        self.round += 1;
        let t = self.round;
        let cfg = &self.cfg;
        let ep = cfg.ep_config();
        let selected = sample_clients(cfg.seed, t, self.clients.len(), cfg.clients_per_round);
        let mut submissions: Vec<(usize, Tag, Ranking)> = Vec::new();
        for &u in &selected {
            let client = &self.clients[u];
            let stream = client_stream_seed(cfg.seed, client.id, t);
            if cfg.inference == InferenceMode::Aware {
                for (j, r) in aware_local_ranking(&self.net, &self.global, &client.train, &ep, stream)? {
                    submissions.push((u, Tag::Group(j as usize), r));
                }
            } else {
                let tag = self.resolve(client, true)?;
                let r = local_ranking(&self.net, &self.global, &client.train, &ep, stream)?;
                submissions.push((u, tag, r));
            }
        }

        let created_group = if submissions.iter().any(|(_, t, _)| matches!(t, Tag::NewGroup)) {
            let q = self.registry.create_group()?;
            Some((q, self.registry.rankings()[q].clone()))
        } else {
            None
        };
        let assignments: Vec<(usize, usize)> = submissions
            .iter()
            .map(|(u, t, _)| match t {
                Tag::Group(q) => (*u, *q),
                Tag::NewGroup => (*u, created_group.as_ref().unwrap().0),
            })
            .collect();
        for &(_, q) in &assignments {
            if q >= self.registry.len() {
                return Err(Error::InvalidArgument(format!("submission for unknown group {q}")));
            }
        }
        for q in 0..self.registry.len() {
            let members: Vec<&Ranking> = submissions
                .iter()
                .zip(&assignments)
                .filter(|(_, &(_, g))| g == q)
                .map(|((_, _, r), _)| r)
                .collect();
            if !members.is_empty() {
                self.registry.set_ranking(q, vote(members)?)?;
            }
        }
        self.global = vote(self.registry.rankings())?;

        let n_masks = if self.cfg.inference == InferenceMode::RankCluster {
            0
        } else {
            self.registry.len()
        };
        let ws = wire_sizes(&self.cfg.net, &self.cfg.wire, n_masks);
        let up_bits = submissions.len() as u64 * ws.upload_bits;
        let down_bits = selected.len() as u64 * ws.download_bits;
        let eval = if t.is_multiple_of(self.cfg.eval_every) || t == self.cfg.rounds {
            Some(self.evaluate()?)
        } else {
            None
        };
        Ok(RoundRecord {
            round: t,
            selected,
            assignments,
            rankings: Some(RankState {
                groups: self.registry.rankings().to_vec(),
                global: self.global.clone(),
            }),
            created_group,
            up_bits,
            down_bits,
            eval,
        })
    }

    /// Test accuracy of every client with its group's mask and with the global mask.
    pub fn evaluate(&self) -> Result<Evaluation> {
        let global_mask = self.global_mask()?;
        let masks = self.registry.masks();
        let mut eval = Evaluation {
            accuracy_global: Some(Vec::with_capacity(self.clients.len())),
            ..Default::default()
        };
        let mut pooled = PooledPredictions::default();
        let mut pooled_global = PooledPredictions::default();
        let tagged = self.clients.iter().all(|c| c.test.attributes.is_some());
        for client in self.clients {
            let batch = client.test.as_batch()?;
            let gm_probs = net::forward(&self.net, Some(&global_mask), &batch)?;
            let gm_pred = gm_probs.argmax_rows();
            let (probs_pred, loss, group) = if self.cfg.inference == InferenceMode::Aware {
                let attrs = client.test.attributes.as_ref().ok_or(Error::InvalidArgument(
                    "aware inference needs attribute-tagged data".into(),
                ))?;
                let mut preds = vec![0; client.test.len()];
                let mut loss = 0.0;
                for j in client.test.attribute_values() {
                    let idx: Vec<usize> = (0..client.test.len()).filter(|&i| attrs[i] == j).collect();
                    let sub = client.test.subset(&idx);
                    let mask = masks.get(j as usize).unwrap_or(&global_mask);
                    let p = net::forward(&self.net, Some(mask), &sub.as_batch()?)?;
                    loss += net::mean_loss(&p, &sub.labels) * idx.len() as f64;
                    for (&i, pred) in idx.iter().zip(p.argmax_rows()) {
                        preds[i] = pred;
                    }
                }
                (preds, loss / client.test.len() as f64, client.group)
            } else {
                let q = match self.resolve(client, false)? {
                    Tag::Group(q) => q,
                    Tag::NewGroup => unreachable!("creation disabled during evaluation"),
                };
                let p = net::forward(&self.net, Some(&masks[q]), &batch)?;
                (p.argmax_rows(), net::mean_loss(&p, batch.labels()), q)
            };
            let acc = hit_rate(&probs_pred, &client.test.labels);
            eval.accuracy.push(acc);
            eval.loss.push(loss);
            eval.eval_group.push(group);
            eval.accuracy_global.as_mut().unwrap().push(hit_rate(&gm_pred, &client.test.labels));
            if tagged {
                let attrs = client.test.attributes.as_ref().unwrap();
                pooled.predictions.extend(&probs_pred);
                pooled.labels.extend(&client.test.labels);
                pooled.attributes.extend(attrs);
                pooled_global.predictions.extend(&gm_pred);
                pooled_global.labels.extend(&client.test.labels);
                pooled_global.attributes.extend(attrs);
            }
        }
        if tagged {
            eval.pooled = Some(pooled);
            eval.pooled_global = Some(pooled_global);
        }
        Ok(eval)
    }
}

fn hit_rate(pred: &[usize], labels: &[usize]) -> f64 {
    pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64
}

#[derive(Debug, Clone)]
pub struct E2flOutcome {
    pub registry: GroupRegistry,
    pub global: Ranking,
    pub records: Vec<RoundRecord>,
    pub clusters: Option<ClusterAssignment>,
    pub warmup_bits: (u64, u64),
    /// Weight checksum before and after training; equal unless weights were mutated.
    pub weight_checksums: (u64, u64),
}

/// Runs all configured rounds of E2FL.
pub fn e2fl_train(clients: &[Client], cfg: &FederationConfig) -> Result<E2flOutcome> {
    let mut state = E2fl::new(clients, cfg.clone())?;
    let before = state.net.weight_checksum();
    let mut records = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        records.push(state.step()?);
    }
    let after = state.net.weight_checksum();
    if before != after {
        return Err(Error::InvalidArgument("supernetwork weights changed during training".into()));
    }
    Ok(E2flOutcome {
        registry: state.registry,
        global: state.global,
        records,
        clusters: state.clusters,
        warmup_bits: state.warmup_bits,
        weight_checksums: (before, after),
    })
}

/// One ranking per attribute value present in `data`, each trained only on
/// that value's rows. Values without rows are skipped.
pub fn aware_local_ranking(
    net: &SuperNetwork,
    global: &Ranking,
    data: &Dataset,
    cfg: &EpConfig,
    shuffle_seed: u64,
) -> Result<Vec<(u8, Ranking)>> {
    let values = data.attribute_values();
    if values.is_empty() {
        return Err(Error::Empty("attribute slices"));
    }
    values
        .into_iter()
        .map(|j| {
            let slice = data.with_attribute_value(j);
            let stream = seed::derive(shuffle_seed, &[j as u64]);
            Ok((j, local_ranking(net, global, &slice, cfg, stream)?))
        })
        .collect()
}

/// E epochs of minibatch SGD on a dense model, with a fresh momentum buffer.
pub fn local_sgd(
    spec: &NetSpec,
    mut weights: LayerParams,
    data: &Dataset,
    epochs: usize,
    batch_size: usize,
    sgd: &SgdConfig,
    shuffle_seed: u64,
) -> Result<LayerParams> {
    if epochs == 0 {
        return Err(Error::InvalidArgument("local training needs at least one epoch".into()));
    }
    let mut rng = seed::rng(shuffle_seed, &[seed::tag::SHUFFLE]);
    let mut velocity = spec.zeros();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            let sub = data.subset(chunk);
            let (loss, grads) = net::dense_backward(spec, &weights, &sub.as_batch()?)?;
            if !loss.is_finite() {
                return Err(Error::Divergence("non-finite loss in dense training".into()));
            }
            net::sgd_step(&mut weights, &grads, sgd, &mut velocity)?;
        }
    }
    Ok(weights)
}

fn dense_eval(spec: &NetSpec, weights: &[Vec<f64>], data: &Dataset) -> Result<(Vec<usize>, f64)> {
    let batch = data.as_batch()?;
    let probs = net::forward_trace(spec, weights, &batch)?.probs().clone();
    Ok((probs.argmax_rows(), net::mean_loss(&probs, batch.labels())))
}

fn dense_loss(spec: &NetSpec, weights: &[Vec<f64>], data: &Dataset) -> Result<f64> {
    Ok(dense_eval(spec, weights, data)?.1)
}

/// Sample-count weighted average of client models.
fn weighted_average(models: &[(LayerParams, usize)]) -> LayerParams {
    let total: usize = models.iter().map(|(_, n)| n).sum();
    let mut out: LayerParams = models[0].0.iter().map(|l| vec![0.0; l.len()]).collect();
    for (w, n) in models {
        let f = *n as f64 / total as f64;
        for (dst, src) in out.iter_mut().zip(w) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += f * s;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseOutcome {
    /// One model for FedAvg, Q for IFCA, one per client for local training.
    pub models: Vec<LayerParams>,
    pub records: Vec<RoundRecord>,
}

fn evaluate_dense<'m>(
    spec: &NetSpec,
    clients: &[Client],
    pick: impl Fn(&Client) -> Result<(usize, &'m LayerParams)>,
) -> Result<Evaluation> {
    let mut eval = Evaluation::default();
    let tagged = clients.iter().all(|c| c.test.attributes.is_some());
    let mut pooled = PooledPredictions::default();
    for c in clients {
        let (group, w) = pick(c)?;
        let (pred, loss) = dense_eval(spec, w, &c.test)?;
        eval.accuracy.push(hit_rate(&pred, &c.test.labels));
        eval.loss.push(loss);
        eval.eval_group.push(group);
        if tagged {
            pooled.predictions.extend(&pred);
            pooled.labels.extend(&c.test.labels);
            pooled.attributes.extend(c.test.attributes.as_ref().unwrap());
        }
    }
    if tagged {
        eval.pooled = Some(pooled);
    }
    Ok(eval)
}

fn check_clients(clients: &[Client], cfg: &FederationConfig) -> Result<()> {
    cfg.validate(clients.len())?;
    if clients.iter().any(|c| c.train.is_empty() || c.test.is_empty()) {
        return Err(Error::Empty("client dataset"));
    }
    if clients.iter().enumerate().any(|(i, c)| c.id != i) {
        return Err(Error::InvalidArgument("client ids must be 0..n in order".into()));
    }
    Ok(())
}

fn should_eval(cfg: &FederationConfig, t: usize) -> bool {
    t.is_multiple_of(cfg.eval_every) || t == cfg.rounds
}

/// FedAvg: selected clients train from the global weights; the server takes the
/// sample-weighted average. 32-bit floats each way.
pub fn fedavg_train(clients: &[Client], cfg: &FederationConfig) -> Result<DenseOutcome> {
    check_clients(clients, cfg)?;
    let spec = &cfg.net;
    let sgd = cfg.dense_sgd();
    let mut global = spec.init_weights(cfg.seed);
    let per_client = cfg.wire.float_bits * spec.total_edges() as u64;
    let mut records = Vec::with_capacity(cfg.rounds);
    for t in 1..=cfg.rounds {
        let selected = sample_clients(cfg.seed, t, clients.len(), cfg.clients_per_round);
        let mut locals = Vec::with_capacity(selected.len());
        for &u in &selected {
            let c = &clients[u];
            let w = local_sgd(spec, global.clone(), &c.train, cfg.local_epochs, cfg.batch_size, &sgd, client_stream_seed(cfg.seed, c.id, t))?;
            locals.push((w, c.train.len()));
        }
        global = weighted_average(&locals);
        let eval = if should_eval(cfg, t) {
            Some(evaluate_dense(spec, clients, |_| Ok((0, &global)))?)
        } else {
            None
        };
        records.push(RoundRecord {
            round: t,
            assignments: selected.iter().map(|&u| (u, 0)).collect(),
            up_bits: selected.len() as u64 * per_client,
            down_bits: selected.len() as u64 * per_client,
            selected,
            rankings: None,
            created_group: None,
            eval,
        });
    }
    Ok(DenseOutcome {
        models: vec![global],
        records,
    })
}

fn ifca_pick<'m>(spec: &NetSpec, models: &'m [LayerParams], data: &Dataset) -> Result<(usize, &'m LayerParams)> {
    let mut best = (f64::INFINITY, 0);
    for (q, m) in models.iter().enumerate() {
        let l = dense_loss(spec, m, data)?;
        if l < best.0 {
            best = (l, q);
        }
    }
    Ok((best.1, &models[best.1]))
}

/// IFCA: Q dense models; every selected client joins the model with the
/// lowest loss on its training data, and each model is averaged over its members.
pub fn ifca_train(clients: &[Client], cfg: &FederationConfig) -> Result<DenseOutcome> {
    check_clients(clients, cfg)?;
    let q = match cfg.groups {
        GroupCount::Fixed(q) => q,
        GroupCount::Auto => return Err(Error::InvalidArgument("IFCA needs a fixed number of clusters".into())),
    };
    let spec = &cfg.net;
    let sgd = cfg.dense_sgd();
    let mut models: Vec<LayerParams> = (0..q)
        .map(|g| {
            let s = if g == 0 { cfg.seed } else { seed::derive(cfg.seed, &[seed::tag::GROUP_INIT, g as u64]) };
            spec.init_weights(s)
        })
        .collect();
    let per_model = cfg.wire.float_bits * spec.total_edges() as u64;
    let mut records = Vec::with_capacity(cfg.rounds);
    for t in 1..=cfg.rounds {
        let selected = sample_clients(cfg.seed, t, clients.len(), cfg.clients_per_round);
        let mut assignments = Vec::with_capacity(selected.len());
        let mut locals: Vec<Vec<(LayerParams, usize)>> = vec![Vec::new(); q];
        for &u in &selected {
            let c = &clients[u];
            let (g, start) = ifca_pick(spec, &models, &c.train)?;
            let w = local_sgd(spec, start.clone(), &c.train, cfg.local_epochs, cfg.batch_size, &sgd, client_stream_seed(cfg.seed, c.id, t))?;
            locals[g].push((w, c.train.len()));
            assignments.push((u, g));
        }
        for (g, members) in locals.iter().enumerate() {
            if !members.is_empty() {
                models[g] = weighted_average(members);
            }
        }
        let eval = if should_eval(cfg, t) {
            Some(evaluate_dense(spec, clients, |c| ifca_pick(spec, &models, &c.train))?)
        } else {
            None
        };
        records.push(RoundRecord {
            round: t,
            assignments,
            up_bits: selected.len() as u64 * per_model,
            down_bits: selected.len() as u64 * q as u64 * per_model,
            selected,
            rankings: None,
            created_group: None,
            eval,
        });
    }
    Ok(DenseOutcome { models, records })
}

/// Standalone training: every client trains its own model E epochs per round, no communication.
pub fn local_train(clients: &[Client], cfg: &FederationConfig) -> Result<DenseOutcome> {
    check_clients(clients, cfg)?;
    let spec = &cfg.net;
    let sgd = cfg.dense_sgd();
    let mut models: Vec<LayerParams> = clients.iter().map(|_| spec.init_weights(cfg.seed)).collect();
    let mut records = Vec::with_capacity(cfg.rounds);
    for t in 1..=cfg.rounds {
        for (c, m) in clients.iter().zip(models.iter_mut()) {
            let w = std::mem::take(m);
            *m = local_sgd(spec, w, &c.train, cfg.local_epochs, cfg.batch_size, &sgd, client_stream_seed(cfg.seed, c.id, t))?;
        }
        let eval = if should_eval(cfg, t) {
            Some(evaluate_dense(spec, clients, |c| Ok((c.id, &models[c.id])))?)
        } else {
            None
        };
        records.push(RoundRecord {
            round: t,
            selected: (0..clients.len()).collect(),
            assignments: Vec::new(),
            rankings: None,
            created_group: None,
            up_bits: 0,
            down_bits: 0,
            eval,
        });
    }
    Ok(DenseOutcome { models, records })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_count_serde() {
        use serde::de::{value::Error as DeError, IntoDeserializer};
        let n = GroupCount::deserialize(IntoDeserializer::<DeError>::into_deserializer(3u64)).unwrap();
        assert_eq!(n, GroupCount::Fixed(3));
        let a = GroupCount::deserialize(IntoDeserializer::<DeError>::into_deserializer("auto")).unwrap();
        assert_eq!(a, GroupCount::Auto);
        assert!(GroupCount::deserialize(IntoDeserializer::<DeError>::into_deserializer("many")).is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_without_replacement() {
        let a = sample_clients(4, 7, 50, 10);
        assert_eq!(a, sample_clients(4, 7, 50, 10));
        let mut d = a.clone();
        d.dedup();
        assert_eq!(d.len(), 10);
        assert_ne!(a, sample_clients(4, 8, 50, 10));
    }

    #[test]
    fn config_validation() {
        let cfg = FederationConfig::new(NetSpec::new(vec![2, 3, 2]).unwrap());
        assert!(cfg.validate(40).is_ok());
        assert!(cfg.validate(10).is_err());
        assert!(FederationConfig { local_epochs: 0, ..cfg.clone() }.validate(40).is_err());
        assert!(FederationConfig { rounds: 0, ..cfg.clone() }.validate(40).is_err());
        assert!(FederationConfig { groups: GroupCount::Auto, ..cfg.clone() }.validate(40).is_err());
        assert!(FederationConfig { groups: GroupCount::Auto, inference: InferenceMode::Oneshot, ..cfg }
            .validate(40)
            .is_ok());
    }
}

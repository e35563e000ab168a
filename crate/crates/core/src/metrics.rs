//! Equality, equity, group fairness and communication totals.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::federation::{PooledPredictions, RoundRecord};
use crate::net::NetSpec;
use crate::ranking::{wire_sizes, WireSizeModel};

/// Spread of a set of values. `worst` and `best` are the means of the bottom
/// and top `ceil(n / 10)` values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelStats {
    pub avg: f64,
    pub worst: f64,
    pub best: f64,
    pub std: f64,
    pub variance: f64,
}

fn level_stats(values: &[f64]) -> Result<LevelStats> {
    if values.is_empty() {
        return Err(Error::Empty("accuracies"));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NanValue(i));
    }
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = n.div_ceil(10);
    let avg = sorted.iter().sum::<f64>() / n as f64;
    let worst = sorted[..tail].iter().sum::<f64>() / tail as f64;
    let best = sorted[n - tail..].iter().sum::<f64>() / tail as f64;
    let variance = sorted.iter().map(|v| (v - avg).powi(2)).sum::<f64>() / n as f64;
    Ok(LevelStats {
        avg,
        worst,
        best,
        std: variance.sqrt(),
        variance,
    })
}

/// User-level statistics over per-client accuracies.
pub fn equality_stats(per_client_acc: &[f64]) -> Result<LevelStats> {
    level_stats(per_client_acc)
}

/// Unweighted mean accuracy of each group `0..=max(group_of_client)`.
pub fn group_means(per_client_acc: &[f64], group_of_client: &[usize]) -> Result<Vec<f64>> {
    if per_client_acc.len() != group_of_client.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} accuracies for {} group labels",
            per_client_acc.len(),
            group_of_client.len()
        )));
    }
    let q = group_of_client.iter().max().ok_or(Error::Empty("accuracies"))? + 1;
    let mut sums = vec![0.0; q];
    let mut counts = vec![0usize; q];
    for (&a, &g) in per_client_acc.iter().zip(group_of_client) {
        sums[g] += a;
        counts[g] += 1;
    }
    if let Some(g) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidArgument(format!("group {g} has no clients")));
    }
    Ok(sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect())
}

/// Group-level statistics: every group's mean counts once, whatever its size.
pub fn equity_stats(per_client_acc: &[f64], group_of_client: &[usize]) -> Result<LevelStats> {
    level_stats(&group_means(per_client_acc, group_of_client)?)
}

#[derive(Debug, Default, Clone, Copy)]
struct Confusion {
    tp: usize,
    fp: usize,
    fn_: usize,
}

impl Confusion {
    fn positives(&self) -> usize {
        self.tp + self.fn_
    }

    fn tpr(&self) -> f64 {
        self.tp as f64 / self.positives() as f64
    }

    fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if self.tp == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

fn strata(predictions: &[usize], labels: &[usize], attribute: &[u8]) -> Result<[Confusion; 2]> {
    if predictions.len() != labels.len() || labels.len() != attribute.len() {
        return Err(Error::ShapeMismatch("predictions, labels and attributes differ in length".into()));
    }
    let mut out = [Confusion::default(); 2];
    for ((&p, &y), &a) in predictions.iter().zip(labels).zip(attribute) {
        if p > 1 || y > 1 || a > 1 {
            return Err(Error::InvalidArgument("fairness metrics need binary values".into()));
        }
        let c = &mut out[a as usize];
        match (p, y) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            _ => {}
        }
    }
    Ok(out)
}

/// Equal opportunity difference TPR(A=0) - TPR(A=1). `None` when a stratum has no positives.
pub fn eod(predictions: &[usize], labels: &[usize], attribute: &[u8]) -> Result<Option<f64>> {
    let [a0, a1] = strata(predictions, labels, attribute)?;
    if a0.positives() == 0 || a1.positives() == 0 {
        return Ok(None);
    }
    Ok(Some(a0.tpr() - a1.tpr()))
}

/// Discrimination index F1(A=0) - F1(A=1). `None` when a stratum is empty.
pub fn di(predictions: &[usize], labels: &[usize], attribute: &[u8]) -> Result<Option<f64>> {
    let [a0, a1] = strata(predictions, labels, attribute)?;
    if !attribute.contains(&0) || !attribute.contains(&1) {
        return Ok(None);
    }
    Ok(Some(a0.f1() - a1.f1()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CommTotals {
    pub up_bits: u64,
    pub down_bits: u64,
}

impl CommTotals {
    pub fn up_bytes(&self) -> f64 {
        self.up_bits as f64 / 8.0
    }

    pub fn down_bytes(&self) -> f64 {
        self.down_bits as f64 / 8.0
    }
}

pub fn comm_totals(records: &[RoundRecord]) -> CommTotals {
    CommTotals {
        up_bits: records.iter().map(|r| r.up_bits).sum(),
        down_bits: records.iter().map(|r| r.down_bits).sum(),
    }
}

/// Bits of a float weight per bit of a binary mask entry.
pub fn mask_float_ratio(model: &WireSizeModel) -> f64 {
    model.float_bits as f64 / model.mask_bits(1) as f64
}

/// Bytes in a mebibyte; communication is reported in this unit.
pub const MIB: f64 = 1_048_576.0;

/// Per-client traffic of one E2FL round and one FedAvg round, in MiB.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerClientTraffic {
    pub e2fl_up: f64,
    pub e2fl_down: f64,
    pub fedavg: f64,
}

pub fn per_client_traffic(spec: &NetSpec, model: &WireSizeModel, n_groups: usize) -> PerClientTraffic {
    let ws = wire_sizes(spec, model, n_groups);
    let mib = |bits: u64| bits as f64 / 8.0 / MIB;
    PerClientTraffic {
        e2fl_up: mib(ws.upload_bits),
        e2fl_down: mib(ws.download_bits),
        fedavg: mib(ws.fedavg_bits),
    }
}

/// Utility and fairness of one evaluation. Accuracies are in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct FairnessReport {
    pub per_client_acc: Vec<f64>,
    pub group_means: Vec<f64>,
    pub user: LevelStats,
    pub group: LevelStats,
    pub eod: Option<f64>,
    pub di: Option<f64>,
    pub comm: CommTotals,
}

impl FairnessReport {
    /// `per_client_acc` are fractions; `group_of_client` are the true groups.
    pub fn new(
        per_client_acc: &[f64],
        group_of_client: &[usize],
        pooled: Option<&PooledPredictions>,
        comm: CommTotals,
    ) -> Result<Self> {
        let pct: Vec<f64> = per_client_acc.iter().map(|a| a * 100.0).collect();
        let means = group_means(&pct, group_of_client)?;
        let (eod_v, di_v) = match pooled {
            Some(p) => (
                eod(&p.predictions, &p.labels, &p.attributes)?,
                di(&p.predictions, &p.labels, &p.attributes)?,
            ),
            None => (None, None),
        };
        Ok(Self {
            user: equality_stats(&pct)?,
            group: level_stats(&means)?,
            group_means: means,
            per_client_acc: pct,
            eod: eod_v,
            di: di_v,
            comm,
        })
    }
}

/// One line of a metrics CSV. Column order is part of the output format.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub algorithm: String,
    pub seed: u64,
    pub round: usize,
    pub n_groups: usize,
    pub group_avg: f64,
    pub group_worst: f64,
    pub group_best: f64,
    pub group_var: f64,
    pub user_avg: f64,
    pub user_worst10: f64,
    pub user_best10: f64,
    pub user_var: f64,
    pub eod: Option<f64>,
    pub di: Option<f64>,
    pub up_mib: f64,
    pub down_mib: f64,
}

impl MetricsRow {
    pub const COLUMNS: [&'static str; 16] = [
        "algorithm", "seed", "round", "n_groups", "group_avg", "group_worst", "group_best", "group_var",
        "user_avg", "user_worst10", "user_best10", "user_var", "eod", "di", "up_mib", "down_mib",
    ];

    pub fn new(algorithm: &str, seed: u64, round: usize, n_groups: usize, r: &FairnessReport) -> Self {
        Self {
            algorithm: algorithm.to_string(),
            seed,
            round,
            n_groups,
            group_avg: r.group.avg,
            group_worst: r.group.worst,
            group_best: r.group.best,
            group_var: r.group.variance,
            user_avg: r.user.avg,
            user_worst10: r.user.worst,
            user_best10: r.user.best,
            user_var: r.user.variance,
            eod: r.eod,
            di: r.di,
            up_mib: r.comm.up_bytes() / MIB,
            down_mib: r.comm.down_bytes() / MIB,
        }
    }
}

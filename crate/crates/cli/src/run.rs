//! Runs every (algorithm, seed) cell of an experiment and writes its CSVs.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::Context;
use serde::Serialize;

use e2fl_core::data::{dirichlet_partition, make_biased_tabular, make_grouped_dataset, GroupSpec, GroupedDataSpec};
use e2fl_core::federation::{e2fl_train, fedavg_train, ifca_train, local_train, RoundRecord};
use e2fl_core::metrics::{FairnessReport, MetricsRow};
use e2fl_core::{seed, Algorithm, Client, CommTotals, GroupCount};

use crate::config::{DatasetConfig, ExperimentConfig};

/// Clients of one seed. Every algorithm of that seed sees the same data.
pub fn build_clients(cfg: &ExperimentConfig, seed_value: u64) -> e2fl_core::Result<Vec<Client>> {
    match &cfg.dataset {
        DatasetConfig::Grouped(g) => {
            let spec = GroupedDataSpec {
                groups: GroupSpec::new(g.client_counts.clone(), g.transform, g.feature_dim, seed_value),
                samples_per_client: g.samples_per_client,
                n_classes: g.n_classes,
                feature_dim: g.feature_dim,
                noise_std: g.noise_std,
                train_fraction: g.train_fraction,
            };
            make_grouped_dataset(seed_value, &spec)
        }
        DatasetConfig::Tabular(t) => {
            let pool = make_biased_tabular(&t.bias, seed_value)?;
            let parts = dirichlet_partition(&pool, t.n_clients, t.alpha, seed_value)?;
            parts
                .into_iter()
                .enumerate()
                .map(|(id, ds)| {
                    let mut rng = seed::rng(seed_value, &[seed::tag::SPLIT, id as u64]);
                    let (train, test) = ds.split(t.train_fraction, &mut rng);
                    if train.is_empty() || test.is_empty() {
                        return Err(e2fl_core::Error::InvalidArgument(format!(
                            "client {id} has too few samples for a train/test split"
                        )));
                    }
                    Ok(Client { id, group: 0, train, test })
                })
                .collect()
        }
    }
}

/// Metric rows of one evaluated round stream, labelled `label`.
fn rows_for(
    label: &str,
    seed_value: u64,
    records: &[RoundRecord],
    truth: &[usize],
    warmup: (u64, u64),
    global_mask: bool,
    n_groups: impl Fn(&RoundRecord) -> usize,
) -> e2fl_core::Result<Vec<MetricsRow>> {
    let mut comm = CommTotals {
        up_bits: warmup.0,
        down_bits: warmup.1,
    };
    let mut rows = Vec::new();
    for r in records {
        comm.up_bits += r.up_bits;
        comm.down_bits += r.down_bits;
        let Some(eval) = &r.eval else { continue };
        let (acc, pooled) = if global_mask {
            (eval.accuracy_global.as_ref().expect("E2FL evaluation"), eval.pooled_global.as_ref())
        } else {
            (&eval.accuracy, eval.pooled.as_ref())
        };
        let report = FairnessReport::new(acc, truth, pooled, comm)?;
        rows.push(MetricsRow::new(label, seed_value, r.round, n_groups(r), &report));
    }
    Ok(rows)
}

/// Trains one cell and returns its rows. E2FL also yields `e2fl_gm` rows
/// evaluated with the global mask.
pub fn run_cell(cfg: &ExperimentConfig, algorithm: Algorithm, seed_value: u64) -> anyhow::Result<Vec<MetricsRow>> {
    let clients = build_clients(cfg, seed_value)?;
    let truth: Vec<usize> = clients.iter().map(|c| c.group).collect();
    let fed = cfg.federation_config(seed_value)?;
    let rows = match algorithm {
        Algorithm::E2fl => {
            let out = e2fl_train(&clients, &fed)?;
            let q = |r: &RoundRecord| r.rankings.as_ref().map_or(0, |s| s.groups.len());
            let mut rows = rows_for("e2fl", seed_value, &out.records, &truth, out.warmup_bits, false, q)?;
            rows.extend(rows_for("e2fl_gm", seed_value, &out.records, &truth, out.warmup_bits, true, q)?);
            rows
        }
        Algorithm::Fedavg => {
            let out = fedavg_train(&clients, &fed)?;
            rows_for("fedavg", seed_value, &out.records, &truth, (0, 0), false, |_| 1)?
        }
        Algorithm::Ifca => {
            let out = ifca_train(&clients, &fed)?;
            let q = match fed.groups {
                GroupCount::Fixed(q) => q,
                GroupCount::Auto => unreachable!("validated"),
            };
            rows_for("ifca", seed_value, &out.records, &truth, (0, 0), false, |_| q)?
        }
        Algorithm::Local => {
            let out = local_train(&clients, &fed)?;
            let n = clients.len();
            rows_for("local", seed_value, &out.records, &truth, (0, 0), false, |_| n)?
        }
    };
    Ok(rows)
}

pub fn write_rows(path: &Path, rows: &[MetricsRow]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    if rows.is_empty() {
        w.write_record(MetricsRow::COLUMNS)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Metrics aggregated in the summary, in column order.
pub const SUMMARY_METRICS: [&str; 12] = [
    "group_avg", "group_worst", "group_best", "group_var", "user_avg", "user_worst10", "user_best10", "user_var",
    "eod", "di", "up_mib", "down_mib",
];

fn metric(row: &MetricsRow, name: &str) -> Option<f64> {
    Some(match name {
        "group_avg" => row.group_avg,
        "group_worst" => row.group_worst,
        "group_best" => row.group_best,
        "group_var" => row.group_var,
        "user_avg" => row.user_avg,
        "user_worst10" => row.user_worst10,
        "user_best10" => row.user_best10,
        "user_var" => row.user_var,
        "eod" => return row.eod,
        "di" => return row.di,
        "up_mib" => row.up_mib,
        "down_mib" => row.down_mib,
        _ => return None,
    })
}

/// Mean and sample standard deviation; the deviation of a single value is 0.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Some((mean, std))
}

pub fn summary_header() -> Vec<String> {
    let mut h = vec!["algorithm".to_string(), "n".to_string()];
    for m in SUMMARY_METRICS {
        h.push(format!("{m}_mean"));
        h.push(format!("{m}_std"));
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub algorithm: String,
    pub n: usize,
    /// `(mean, std)` per entry of [`SUMMARY_METRICS`]; `None` when no seed reported it.
    pub stats: Vec<Option<(f64, f64)>>,
}

/// Final-round statistics across seeds, one row per algorithm label in first-seen order.
pub fn summarize(rows: &[MetricsRow]) -> Vec<SummaryRow> {
    let mut last: BTreeMap<(String, u64), &MetricsRow> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for r in rows {
        if !order.contains(&r.algorithm) {
            order.push(r.algorithm.clone());
        }
        let e = last.entry((r.algorithm.clone(), r.seed)).or_insert(r);
        if r.round >= e.round {
            *e = r;
        }
    }
    order
        .into_iter()
        .map(|alg| {
            let finals: Vec<&MetricsRow> = last.iter().filter(|((a, _), _)| *a == alg).map(|(_, r)| *r).collect();
            let stats = SUMMARY_METRICS
                .iter()
                .map(|m| mean_std(&finals.iter().filter_map(|r| metric(r, m)).collect::<Vec<_>>()))
                .collect();
            SummaryRow {
                algorithm: alg,
                n: finals.len(),
                stats,
            }
        })
        .collect()
}

pub fn write_summary(path: &Path, summary: &[SummaryRow]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(summary_header())?;
    for s in summary {
        let mut rec = vec![s.algorithm.clone(), s.n.to_string()];
        for st in &s.stats {
            match st {
                Some((m, sd)) => {
                    rec.push(m.to_string());
                    rec.push(sd.to_string());
                }
                None => rec.extend([String::new(), String::new()]),
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<MetricsRow>,
    pub summary: Vec<SummaryRow>,
}

/// Runs all cells with up to `jobs` worker threads. Outputs do not depend on `jobs`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> anyhow::Result<RunOutput> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("resolved_config.toml"), cfg.to_toml())?;
    let cells: Vec<(Algorithm, u64)> = cfg
        .algorithms
        .iter()
        .flat_map(|&a| cfg.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let results: Vec<Mutex<Option<anyhow::Result<Vec<MetricsRow>>>>> = cells.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, cells.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(alg, s)) = cells.get(i) else { break };
                let res = run_cell(cfg, alg, s).with_context(|| format!("{} seed {s}", alg.name()));
                *results[i].lock().unwrap() = Some(res);
            });
        }
    });
    let mut all = Vec::new();
    for ((alg, s), slot) in cells.iter().zip(results) {
        let rows = slot.into_inner().unwrap().expect("every cell ran")?;
        let dir = out.join(alg.name()).join(format!("seed-{s}"));
        std::fs::create_dir_all(&dir)?;
        write_rows(&dir.join("metrics.csv"), &rows)?;
        all.extend(rows);
    }
    write_rows(&out.join("metrics.csv"), &all)?;
    let summary = summarize(&all);
    write_summary(&out.join("summary.csv"), &summary)?;
    Ok(RunOutput { rows: all, summary })
}

//! Side-by-side comparison of run summaries.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use serde::Serialize;

use crate::run::{summary_header, SUMMARY_METRICS};

/// Summary means of one algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryEntry {
    pub algorithm: String,
    pub means: Vec<Option<f64>>,
}

fn parse_opt(s: &str, col: &str) -> anyhow::Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|_| anyhow!("column {col}: {s:?} is not a number"))
    }
}

pub fn read_summary(dir: &Path) -> anyhow::Result<Vec<SummaryEntry>> {
    let path = dir.join("summary.csv");
    let mut r = csv::Reader::from_path(&path).with_context(|| format!("reading {}", path.display()))?;
    let headers = r.headers()?.clone();
    let index = |name: &str| -> anyhow::Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("schema mismatch in {}: missing column {name}", path.display()))
    };
    for col in summary_header() {
        index(&col)?;
    }
    let alg = index("algorithm")?;
    let cols: Vec<(usize, String)> = SUMMARY_METRICS
        .iter()
        .map(|m| {
            let c = format!("{m}_mean");
            Ok((index(&c)?, c))
        })
        .collect::<anyhow::Result<_>>()?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        out.push(SummaryEntry {
            algorithm: rec[alg].to_string(),
            means: cols.iter().map(|(i, c)| parse_opt(&rec[*i], c)).collect::<anyhow::Result<_>>()?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub reference: String,
    pub candidate: String,
    pub metric: String,
    pub reference_value: Option<f64>,
    pub candidate_value: Option<f64>,
    pub delta: Option<f64>,
    /// `(reference - candidate) / reference` in percent.
    pub reduction_pct: Option<f64>,
}

pub fn comparison_row(reference: &str, candidate: &str, metric: &str, a: Option<f64>, b: Option<f64>) -> ComparisonRow {
    let (delta, reduction_pct) = match (a, b) {
        (Some(a), Some(b)) => (Some(b - a), (a != 0.0).then(|| (a - b) / a * 100.0)),
        _ => (None, None),
    };
    ComparisonRow {
        reference: reference.to_string(),
        candidate: candidate.to_string(),
        metric: metric.to_string(),
        reference_value: a,
        candidate_value: b,
        delta,
        reduction_pct,
    }
}

fn pair(reference: &str, a: &SummaryEntry, candidate: &str, b: &SummaryEntry) -> Vec<ComparisonRow> {
    SUMMARY_METRICS
        .iter()
        .enumerate()
        .map(|(i, m)| comparison_row(reference, candidate, m, a.means[i], b.means[i]))
        .collect()
}

/// Every algorithm of each later directory against the same algorithm of the first.
pub fn compare_dirs(dirs: &[PathBuf]) -> anyhow::Result<Vec<ComparisonRow>> {
    if dirs.len() < 2 {
        bail!("compare needs at least two run directories, or --baseline");
    }
    let base = read_summary(&dirs[0])?;
    let mut rows = Vec::new();
    for dir in &dirs[1..] {
        for cand in read_summary(dir)? {
            let Some(refe) = base.iter().find(|e| e.algorithm == cand.algorithm) else {
                continue;
            };
            let rl = format!("{}/{}", dirs[0].display(), refe.algorithm);
            let cl = format!("{}/{}", dir.display(), cand.algorithm);
            rows.extend(pair(&rl, refe, &cl, &cand));
        }
    }
    Ok(rows)
}

/// Every algorithm of `dir` against `baseline` from the same directory.
pub fn compare_baseline(dir: &Path, baseline: &str) -> anyhow::Result<Vec<ComparisonRow>> {
    let entries = read_summary(dir)?;
    let base = entries
        .iter()
        .find(|e| e.algorithm == baseline)
        .ok_or_else(|| anyhow!("baseline {baseline} not found in {}", dir.display()))?;
    Ok(entries
        .iter()
        .filter(|e| e.algorithm != baseline)
        .flat_map(|e| pair(baseline, base, &e.algorithm, e))
        .collect())
}

pub fn write_comparison<W: Write>(w: W, rows: &[ComparisonRow]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(w);
    if rows.is_empty() {
        w.write_record([
            "reference", "candidate", "metric", "reference_value", "candidate_value", "delta", "reduction_pct",
        ])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduction_arithmetic() {
        let r = comparison_row("fedavg", "e2fl", "group_var", Some(31.81), Some(1.63));
        assert!((r.reduction_pct.unwrap() - 94.876).abs() < 1e-3);
        assert!((r.delta.unwrap() + 30.18).abs() < 1e-9);
        let same = comparison_row("a", "b", "x", Some(2.0), Some(2.0));
        assert_eq!((same.delta, same.reduction_pct), (Some(0.0), Some(0.0)));
        assert_eq!(comparison_row("a", "b", "x", Some(0.0), Some(1.0)).reduction_pct, None);
        assert_eq!(comparison_row("a", "b", "x", None, Some(1.0)).delta, None);
    }
}

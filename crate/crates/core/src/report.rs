//! Long-format metrics CSV: one `method,seed,task,metric,value` row per number.
//!
//! Per-task accuracies use the task id in the `task` column; run-level
//! metrics (`source_avg`, `target_accuracy`, `h_average`, `o_average`,
//! `mean_pid`, `mean_mask_density`) use `all`. Aggregated rows carry the seed
//! `mean`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::benchmark::MetricsReport;
use crate::error::{Error, Result};

pub const HEADER: [&str; 5] = ["method", "seed", "task", "metric", "value"];
pub const ALL_TASKS: &str = "all";
pub const MEAN_SEED: &str = "mean";

/// Columns of the grid printed by [`grid`].
pub const GRID_METRICS: [&str; 4] = ["source_avg", "target_accuracy", "h_average", "o_average"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: String,
    pub seed: String,
    pub task: String,
    pub metric: String,
    pub value: f64,
}

impl MetricRow {
    fn new(method: &str, seed: &str, task: &str, metric: &str, value: f64) -> Self {
        Self {
            method: method.into(),
            seed: seed.into(),
            task: task.into(),
            metric: metric.into(),
            value,
        }
    }
}

pub fn rows_of(report: &MetricsReport) -> Vec<MetricRow> {
    let (m, s) = (report.method.as_str(), report.seed.to_string());
    let mut rows: Vec<MetricRow> = report
        .per_source_accuracy
        .iter()
        .map(|(task, acc)| MetricRow::new(m, &s, task, "accuracy", *acc))
        .collect();
    rows.push(MetricRow::new(m, &s, &report.target_id, "accuracy", report.target_accuracy));
    rows.push(MetricRow::new(m, &s, ALL_TASKS, "source_avg", report.source_avg));
    rows.push(MetricRow::new(m, &s, ALL_TASKS, "target_accuracy", report.target_accuracy));
    rows.push(MetricRow::new(m, &s, ALL_TASKS, "h_average", report.h_average));
    rows.push(MetricRow::new(m, &s, ALL_TASKS, "o_average", report.o_average));
    if let Some(p) = report.mean_pid() {
        rows.push(MetricRow::new(m, &s, ALL_TASKS, "mean_pid", p));
    }
    if let Some(d) = report.mean_mask_density() {
        rows.push(MetricRow::new(m, &s, ALL_TASKS, "mean_mask_density", d));
    }
    rows
}

pub fn write_rows<W: Write>(out: W, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Reads rows written by [`write_rows`]; any other header is a format error.
pub fn read_rows<R: Read>(input: R) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != HEADER {
        return Err(Error::Format(format!("expected columns {HEADER:?}, found {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Per-seed rows followed by their seed means, grouped by method in order of
/// first appearance. Existing `mean` rows in the input are dropped and
/// recomputed.
pub fn aggregate(rows: &[MetricRow]) -> Vec<MetricRow> {
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let mut out = Vec::new();
    for m in methods {
        let mine: Vec<&MetricRow> = rows.iter().filter(|r| r.method == m && r.seed != MEAN_SEED).collect();
        // key order: first appearance of (task, metric)
        let mut keys: Vec<(&str, &str)> = Vec::new();
        let mut sums: BTreeMap<(&str, &str), (f64, usize)> = BTreeMap::new();
        for r in &mine {
            let key = (r.task.as_str(), r.metric.as_str());
            let e = sums.entry(key).or_insert_with(|| {
                keys.push(key);
                (0.0, 0)
            });
            e.0 += r.value;
            e.1 += 1;
            out.push((*r).clone());
        }
        for key in keys {
            let (s, n) = sums[&key];
            out.push(MetricRow::new(m, MEAN_SEED, key.0, key.1, s / n as f64));
        }
    }
    out
}

/// Seed-mean rows of `metric` over all tasks, one per method.
pub fn seed_means<'a>(rows: &'a [MetricRow], metric: &str) -> Vec<(&'a str, f64)> {
    rows.iter()
        .filter(|r| r.seed == MEAN_SEED && r.task == ALL_TASKS && r.metric == metric)
        .map(|r| (r.method.as_str(), r.value))
        .collect()
}

/// Plain-text method × metric table of the seed means in `rows`.
pub fn grid(rows: &[MetricRow]) -> String {
    let mut methods: Vec<&str> = Vec::new();
    for r in rows.iter().filter(|r| r.seed == MEAN_SEED) {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let width = methods.iter().map(|m| m.len()).max().unwrap_or(6).max(6);
    let mut s = format!("{:width$}", "method");
    for h in ["A^S", "A^T", "H", "O"] {
        let _ = write!(s, " {h:>8}");
    }
    s.push('\n');
    for m in methods {
        let _ = write!(s, "{m:width$}");
        for metric in GRID_METRICS {
            match rows.iter().find(|r| r.method == m && r.seed == MEAN_SEED && r.task == ALL_TASKS && r.metric == metric) {
                Some(r) => {
                    let _ = write!(s, " {:>8.2}", 100.0 * r.value);
                }
                None => {
                    let _ = write!(s, " {:>8}", "-");
                }
            }
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::Method;

    fn report(method: Method, seed: u64, a: f64, t: f64) -> MetricsReport {
        MetricsReport::from_accuracies(
            method,
            seed,
            vec![("s0".into(), a), ("s1".into(), a)],
            "t".into(),
            t,
            None,
        )
    }

    #[test]
    fn csv_roundtrip() {
        let rows = rows_of(&report(Method::Spider, 3, 0.5, 0.25));
        let mut buf = Vec::new();
        write_rows(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("method,seed,task,metric,value\n"));
        assert_eq!(read_rows(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn wrong_header_is_rejected() {
        let text = "iteration,epoch,loss,mask_density,pid\n0,0,1.0,1.0,\n";
        assert!(matches!(read_rows(text.as_bytes()), Err(Error::Format(_))));
    }

    #[test]
    fn aggregate_adds_seed_means() {
        let mut rows = rows_of(&report(Method::FullFt, 0, 0.5, 1.0));
        rows.extend(rows_of(&report(Method::FullFt, 1, 0.7, 0.8)));
        let agg = aggregate(&rows);
        let means = seed_means(&agg, "source_avg");
        assert_eq!(means.len(), 1);
        assert!((means[0].1 - 0.6).abs() < 1e-15);
        // idempotent
        assert_eq!(aggregate(&agg), agg);
        let g = grid(&agg);
        assert!(g.contains("full_ft"));
        assert!(g.contains("60.00"));
    }
}

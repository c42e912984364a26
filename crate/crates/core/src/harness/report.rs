//! Per-trial rows, summary aggregation, histograms, and their CSV forms.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::calibrate::StrategyKind;
use crate::error::Result;

pub const TRIAL_HEADER: [&str; 10] = [
    "dataset",
    "strategy",
    "rep",
    "lambda_hat",
    "sensitivity",
    "precision",
    "efficiency",
    "fn",
    "fp",
    "infeasible",
];

pub const SUMMARY_HEADER: [&str; 11] = [
    "dataset",
    "strategy",
    "trials",
    "failures",
    "lambda_hat",
    "sensitivity",
    "precision",
    "efficiency",
    "fn",
    "fp",
    "infeasible_rate",
];

pub const HISTOGRAM_HEADER: [&str; 6] = ["dataset", "strategy", "metric", "bin_left", "bin_right", "height"];

pub const DEFAULT_HISTOGRAM_BINS: usize = 40;

/// Metrics of one calibrate-then-evaluate trial on the test half of a split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub dataset: String,
    pub strategy: StrategyKind,
    pub rep: usize,
    pub lambda_hat: f64,
    /// Mean per-scan sensitivity.
    pub sensitivity: f64,
    pub precision: f64,
    /// Mean prediction-set size.
    pub efficiency: f64,
    pub fn_per_scan: f64,
    pub fp_per_scan: f64,
    pub infeasible: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub dataset: String,
    pub strategy: StrategyKind,
    pub rep: usize,
    pub error: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    LambdaHat,
    Sensitivity,
    Precision,
    Efficiency,
    Fn,
    Fp,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::LambdaHat,
        Metric::Sensitivity,
        Metric::Precision,
        Metric::Efficiency,
        Metric::Fn,
        Metric::Fp,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::LambdaHat => "lambda_hat",
            Metric::Sensitivity => "sensitivity",
            Metric::Precision => "precision",
            Metric::Efficiency => "efficiency",
            Metric::Fn => "fn",
            Metric::Fp => "fp",
        }
    }

    pub fn of(&self, t: &TrialReport) -> f64 {
        match self {
            Metric::LambdaHat => t.lambda_hat,
            Metric::Sensitivity => t.sensitivity,
            Metric::Precision => t.precision,
            Metric::Efficiency => t.efficiency,
            Metric::Fn => t.fn_per_scan,
            Metric::Fp => t.fp_per_scan,
        }
    }
}

/// Fixed-width histogram over the observed range; heights are fractions of
/// the sample and sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub heights: Vec<f64>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        if values.is_empty() {
            return Self {
                edges: Vec::new(),
                heights: Vec::new(),
            };
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi <= lo {
            return Self {
                edges: vec![lo, hi],
                heights: vec![1.0],
            };
        }
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        for &v in values {
            let k = (((v - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        let total = values.len() as f64;
        Self {
            edges: (0..=bins).map(|k| if k == bins { hi } else { lo + width * k as f64 }).collect(),
            heights: counts.into_iter().map(|c| c as f64 / total).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub strategy: StrategyKind,
    pub trials: usize,
    pub failures: usize,
    pub lambda_hat: f64,
    pub sensitivity: f64,
    pub precision: f64,
    pub efficiency: f64,
    pub fn_per_scan: f64,
    pub fp_per_scan: f64,
    pub infeasible_rate: f64,
    pub histograms: Vec<(Metric, Histogram)>,
}

impl SummaryRow {
    pub fn histogram(&self, metric: Metric) -> Option<&Histogram> {
        self.histograms.iter().find(|(m, _)| *m == metric).map(|(_, h)| h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    /// Groups trials by `(dataset, strategy)` in first-appearance order.
    pub fn from_trials(trials: &[TrialReport], failures: &[TrialFailure], bins: usize) -> Self {
        let mut keys: Vec<(String, StrategyKind)> = Vec::new();
        for (d, s) in trials
            .iter()
            .map(|t| (&t.dataset, t.strategy))
            .chain(failures.iter().map(|f| (&f.dataset, f.strategy)))
        {
            if !keys.iter().any(|(kd, ks)| kd == d && *ks == s) {
                keys.push((d.clone(), s));
            }
        }
        let rows = keys
            .into_iter()
            .map(|(dataset, strategy)| {
                let group: Vec<&TrialReport> = trials
                    .iter()
                    .filter(|t| t.dataset == dataset && t.strategy == strategy)
                    .collect();
                let n_fail = failures
                    .iter()
                    .filter(|f| f.dataset == dataset && f.strategy == strategy)
                    .count();
                let metric_mean = |m: Metric| mean(group.iter().map(|t| m.of(t)));
                SummaryRow {
                    trials: group.len(),
                    failures: n_fail,
                    lambda_hat: metric_mean(Metric::LambdaHat),
                    sensitivity: metric_mean(Metric::Sensitivity),
                    precision: metric_mean(Metric::Precision),
                    efficiency: metric_mean(Metric::Efficiency),
                    fn_per_scan: metric_mean(Metric::Fn),
                    fp_per_scan: metric_mean(Metric::Fp),
                    infeasible_rate: mean(group.iter().map(|t| t.infeasible as u8 as f64)),
                    histograms: Metric::ALL
                        .iter()
                        .map(|&m| {
                            let values: Vec<f64> = group.iter().map(|t| m.of(t)).collect();
                            (m, Histogram::new(&values, bins))
                        })
                        .collect(),
                    dataset,
                    strategy,
                }
            })
            .collect();
        Self { rows }
    }

    pub fn row(&self, dataset: &str, strategy: StrategyKind) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.dataset == dataset && r.strategy == strategy)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

pub(crate) fn fixed(v: f64) -> String {
    format!("{v:.6}")
}

pub fn write_trials_csv(trials: &[TrialReport], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRIAL_HEADER)?;
    for t in trials {
        w.write_record([
            t.dataset.clone(),
            t.strategy.to_string(),
            t.rep.to_string(),
            fixed(t.lambda_hat),
            fixed(t.sensitivity),
            fixed(t.precision),
            fixed(t.efficiency),
            fixed(t.fn_per_scan),
            fixed(t.fp_per_scan),
            (t.infeasible as u8).to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_failures_csv(failures: &[TrialFailure], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["dataset", "strategy", "rep", "error"])?;
    for f in failures {
        w.write_record([f.dataset.clone(), f.strategy.to_string(), f.rep.to_string(), f.error.clone()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_summary_csv(summary: &SummaryTable, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for r in &summary.rows {
        w.write_record([
            r.dataset.clone(),
            r.strategy.to_string(),
            r.trials.to_string(),
            r.failures.to_string(),
            fixed(r.lambda_hat),
            fixed(r.sensitivity),
            fixed(r.precision),
            fixed(r.efficiency),
            fixed(r.fn_per_scan),
            fixed(r.fp_per_scan),
            fixed(r.infeasible_rate),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Heights are written with full precision so each facet still sums to one.
pub fn write_histograms_csv(summary: &SummaryTable, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HISTOGRAM_HEADER)?;
    for r in &summary.rows {
        for (metric, h) in &r.histograms {
            for (k, height) in h.heights.iter().enumerate() {
                w.write_record([
                    r.dataset.clone(),
                    r.strategy.to_string(),
                    metric.as_str().to_string(),
                    fixed(h.edges[k]),
                    fixed(h.edges[k + 1]),
                    format!("{height}"),
                ])?;
            }
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trial(dataset: &str, strategy: StrategyKind, rep: usize, sens: f64) -> TrialReport {
        TrialReport {
            dataset: dataset.into(),
            strategy,
            rep,
            lambda_hat: 0.25,
            sensitivity: sens,
            precision: 0.5,
            efficiency: 3.0,
            fn_per_scan: 1.0 - sens,
            fp_per_scan: 2.0,
            infeasible: rep == 0,
        }
    }

    #[test]
    fn constant_sample_gets_one_bin() {
        let h = Histogram::new(&[0.3, 0.3], 40);
        assert_eq!(h.heights, vec![1.0]);
        assert_eq!(h.edges, vec![0.3, 0.3]);
    }

    #[test]
    fn max_value_lands_in_last_bin() {
        let h = Histogram::new(&[0.0, 0.5, 1.0], 2);
        assert_eq!(h.edges, vec![0.0, 0.5, 1.0]);
        assert_eq!(h.heights, vec![1.0 / 3.0, 2.0 / 3.0]);
    }

    #[test]
    fn summary_groups_and_averages() {
        let trials = vec![
            trial("a", StrategyKind::Crc, 0, 0.8),
            trial("a", StrategyKind::Crc, 1, 1.0),
            trial("a", StrategyKind::Naive, 0, 0.6),
        ];
        let failures = vec![TrialFailure {
            dataset: "b".into(),
            strategy: StrategyKind::Crc,
            rep: 0,
            error: "boom".into(),
        }];
        let s = SummaryTable::from_trials(&trials, &failures, 10);
        assert_eq!(s.rows.len(), 3);
        let crc = s.row("a", StrategyKind::Crc).unwrap();
        assert_eq!(crc.trials, 2);
        assert!((crc.sensitivity - 0.9).abs() < 1e-15);
        assert_eq!(crc.infeasible_rate, 0.5);
        let b = s.row("b", StrategyKind::Crc).unwrap();
        assert_eq!((b.trials, b.failures), (0, 1));
    }

    #[test]
    fn trial_csv_layout() {
        let mut buf = Vec::new();
        write_trials_csv(&[trial("set,1", StrategyKind::Froc, 3, 0.9)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), TRIAL_HEADER.join(","));
        assert_eq!(
            lines.next().unwrap(),
            "\"set,1\",froc,3,0.250000,0.900000,0.500000,3.000000,0.100000,2.000000,0"
        );
    }

    proptest! {
        #[test]
        fn histogram_heights_sum_to_one(values in prop::collection::vec(-1e3f64..1e3, 1..500), bins in 1usize..80) {
            let h = Histogram::new(&values, bins);
            prop_assert!((h.heights.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert_eq!(h.edges.len(), h.heights.len() + 1);
        }
    }
}

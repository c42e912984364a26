//! Repeated random-split experiments comparing threshold strategies.
//!
//! For every dataset and repetition the scans are split in half with a seed
//! derived from `(base_seed, dataset index, repetition)`; every strategy is
//! calibrated on the first half and evaluated on the second. Trials run on a
//! bounded worker pool and are sorted by coordinate before anything is
//! emitted, so output bytes do not depend on the worker count.

mod curve;
mod report;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{evaluate_profiles, Strategy};
use crate::detections::{filter_consensus, load_dataset, split_indices, Dataset};
use crate::error::{Error, Result};
use crate::geometry::nms_filter;
use crate::risk::{profile_dataset, ScanProfile};
use crate::synth::{generate, GeneratorConfig};

pub use curve::{
    emit_curve, write_curve, write_curve_csv, write_markers_csv, CurveMarker, CurveOutput, CurveRow, CURVE_FILE,
    MARKERS_FILE,
};
pub use report::{
    write_failures_csv, write_histograms_csv, write_summary_csv, write_trials_csv, Histogram, Metric,
    SummaryRow, SummaryTable, TrialFailure, TrialReport, DEFAULT_HISTOGRAM_BINS, HISTOGRAM_HEADER,
    SUMMARY_HEADER, TRIAL_HEADER,
};

pub const DEFAULT_REPETITIONS: usize = 1_000;

/// Where a dataset comes from, plus optional ingest filters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorConfig>,
    /// Keep nodules marked by at least this many annotators.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consensus: Option<u8>,
    /// Apply greedy NMS to each scan's candidates at this IoU threshold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nms_threshold: Option<f64>,
}

impl DatasetSpec {
    pub fn generated(name: impl Into<String>, config: GeneratorConfig, consensus: Option<u8>) -> Self {
        Self {
            name: name.into(),
            path: None,
            generator: Some(config),
            consensus,
            nms_threshold: None,
        }
    }

    pub fn file(name: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        Self {
            name: name.into(),
            path: Some(path.into()),
            generator: None,
            consensus: None,
            nms_threshold: None,
        }
    }

    pub fn load(&self) -> Result<Dataset> {
        let mut d = match (&self.path, &self.generator) {
            (Some(p), None) => load_dataset(p)?,
            (None, Some(cfg)) => generate(cfg)?,
            _ => {
                return Err(Error::Plan(format!(
                    "dataset `{}` needs exactly one of `path` or `generator`",
                    self.name
                )))
            }
        };
        if let Some(t) = self.nms_threshold {
            for s in &mut d.scans {
                s.candidates = nms_filter(&s.candidates, t);
            }
        }
        if let Some(r) = self.consensus {
            d = filter_consensus(&d, r)?.dataset;
        }
        Ok(d)
    }
}

fn default_bins() -> usize {
    DEFAULT_HISTOGRAM_BINS
}

fn default_repetitions() -> usize {
    DEFAULT_REPETITIONS
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub datasets: Vec<DatasetSpec>,
    pub strategies: Vec<Strategy>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    /// Worker threads; 0 uses one per core.
    #[serde(default)]
    pub workers: usize,
}

impl ExperimentPlan {
    /// Reads a TOML plan. Relative dataset paths and the output directory are
    /// resolved against the plan file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut plan: ExperimentPlan =
            toml::from_str(&text).map_err(|e| Error::Plan(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for d in &mut plan.datasets {
            if let Some(p) = &d.path {
                if p.is_relative() {
                    d.path = Some(base.join(p));
                }
            }
        }
        if plan.output_dir.is_relative() {
            plan.output_dir = base.join(&plan.output_dir);
        }
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::Plan("repetitions must be at least 1".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Plan("no strategies".into()));
        }
        if self.datasets.is_empty() {
            return Err(Error::Plan("no datasets".into()));
        }
        for (i, s) in self.strategies.iter().enumerate() {
            s.validate()?;
            if self.strategies[..i].iter().any(|o| o.kind() == s.kind()) {
                return Err(Error::Plan(format!("strategy `{}` listed twice", s.kind())));
            }
        }
        for (i, d) in self.datasets.iter().enumerate() {
            if d.name.is_empty() {
                return Err(Error::Plan(format!("dataset #{i} has an empty name")));
            }
            if self.datasets[..i].iter().any(|o| o.name == d.name) {
                return Err(Error::Plan(format!("dataset `{}` listed twice", d.name)));
            }
            if d.path.is_some() == d.generator.is_some() {
                return Err(Error::Plan(format!(
                    "dataset `{}` needs exactly one of `path` or `generator`",
                    d.name
                )));
            }
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Split seed of one `(dataset, repetition)` coordinate:
/// `splitmix64(splitmix64(splitmix64(base) ^ dataset) ^ rep)`.
pub fn trial_seed(base_seed: u64, dataset_index: usize, rep: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(base_seed) ^ dataset_index as u64) ^ rep as u64)
}

/// Everything an experiment produces before it is written out.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub trials: Vec<TrialReport>,
    pub failures: Vec<TrialFailure>,
    pub summary: SummaryTable,
}

struct Prepared {
    name: String,
    profiles: Vec<ScanProfile>,
}

/// Runs every trial of the plan without touching the filesystem beyond
/// loading file-backed datasets.
/// Runs every trial of the plan without touching the filesystem beyond
/// loading file-backed datasets.
pub fn execute(plan: &ExperimentPlan) -> Result<ExperimentOutput> {
    let coords: Vec<(usize, usize)> = (0..plan.datasets.len())
        .flat_map(|d| (0..plan.repetitions).map(move |r| (d, r)))
        .collect();
    execute_coordinates(plan, &coords)
}

/// Runs only the given `(dataset index, repetition)` coordinates. Each trial
/// depends on nothing but its coordinate, so the rows equal those of a full run.
pub fn execute_coordinates(plan: &ExperimentPlan, coords: &[(usize, usize)]) -> Result<ExperimentOutput> {
    plan.validate()?;
    if let Some(&(d, r)) = coords.iter().find(|&&(d, r)| d >= plan.datasets.len() || r >= plan.repetitions) {
        return Err(Error::Plan(format!("coordinate ({d}, {r}) outside the plan")));
    }
    let prepared: Vec<Prepared> = plan
        .datasets
        .iter()
        .map(|spec| {
            let d = spec.load()?;
            log::info!("dataset `{}`: {} scans, {} nodules", spec.name, d.len(), d.nodule_count());
            Ok(Prepared {
                name: spec.name.clone(),
                profiles: profile_dataset(&d),
            })
        })
        .collect::<Result<_>>()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.workers)
        .build()
        .map_err(|e| Error::Plan(format!("worker pool: {e}")))?;

    let mut results: Vec<TrialResult> = pool
        .install(|| {
            coords
                .par_iter()
                .flat_map_iter(|&(d, r)| run_trials(&prepared[d], d, r, plan))
                .collect()
        });
    results.sort_by_key(|(d, s, r, _)| (*d, *s, *r));

    let mut trials = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (_, _, _, res) in results {
        match res {
            Ok(t) => trials.push(t),
            Err(f) => failures.push(f),
        }
    }
    let summary = SummaryTable::from_trials(&trials, &failures, plan.histogram_bins);
    Ok(ExperimentOutput {
        trials,
        failures,
        summary,
    })
}

type TrialResult = (usize, usize, usize, std::result::Result<TrialReport, TrialFailure>);

fn run_trials(data: &Prepared, d: usize, rep: usize, plan: &ExperimentPlan) -> Vec<TrialResult> {
    let split = split_indices(data.profiles.len(), trial_seed(plan.base_seed, d, rep)).map_err(|e| e.to_string());
    plan.strategies
        .iter()
        .enumerate()
        .map(|(s, strategy)| {
            let fail = |error: String| TrialFailure {
                dataset: data.name.clone(),
                strategy: strategy.kind(),
                rep,
                error,
            };
            let outcome = match &split {
                Ok((cal, test)) => run_one(data, strategy, rep, cal, test).map_err(|e| fail(e.to_string())),
                Err(e) => Err(fail(e.clone())),
            };
            (d, s, rep, outcome)
        })
        .collect()
}

fn run_one(data: &Prepared, strategy: &Strategy, rep: usize, cal: &[usize], test: &[usize]) -> Result<TrialReport> {
    let cal: Vec<&ScanProfile> = cal.iter().map(|&i| &data.profiles[i]).collect();
    let test: Vec<&ScanProfile> = test.iter().map(|&i| &data.profiles[i]).collect();
    let result = strategy.calibrate_profiles(&cal)?;
    let m = evaluate_profiles(result.lambda_hat, &test)?;
    Ok(TrialReport {
        dataset: data.name.clone(),
        strategy: strategy.kind(),
        rep,
        lambda_hat: result.lambda_hat,
        sensitivity: m.sensitivity_prc,
        precision: m.precision_prc,
        efficiency: m.efficiency,
        fn_per_scan: m.fn_per_scan,
        fp_per_scan: m.false_positives_froc,
        infeasible: result.is_flagged(),
    })
}

pub const TRIALS_FILE: &str = "trials.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const SUMMARY_JSON_FILE: &str = "summary.json";
pub const HISTOGRAMS_FILE: &str = "histograms.csv";
pub const FAILURES_FILE: &str = "failures.csv";

pub fn write_outputs(output: &ExperimentOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let create = |name: &str| {
        let p = dir.join(name);
        fs::File::create(&p).map_err(|e| Error::io(p, e))
    };
    write_trials_csv(&output.trials, create(TRIALS_FILE)?)?;
    write_failures_csv(&output.failures, create(FAILURES_FILE)?)?;
    write_summary_csv(&output.summary, create(SUMMARY_FILE)?)?;
    write_histograms_csv(&output.summary, create(HISTOGRAMS_FILE)?)?;
    let json = serde_json::to_vec_pretty(&output.summary).expect("summary serializes");
    let p = dir.join(SUMMARY_JSON_FILE);
    fs::write(&p, json).map_err(|e| Error::io(p, e))?;
    Ok(())
}

/// Runs the plan and writes all artifacts to its output directory.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<SummaryTable> {
    let output = execute(plan)?;
    for f in &output.failures {
        log::warn!("trial {}/{}/{} failed: {}", f.dataset, f.strategy, f.rep, f.error);
    }
    write_outputs(&output, &plan.output_dir)?;
    Ok(output.summary)
}

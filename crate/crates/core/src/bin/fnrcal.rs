use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fnrcal::calibrate::{DEFAULT_ALPHA, DEFAULT_FIXED_LAMBDA, DEFAULT_TARGET_SENSITIVITY};
use fnrcal::harness::{
    emit_curve, run_experiment, write_curve, DatasetSpec, ExperimentPlan, TrialReport,
};
use fnrcal::{evaluate, generate, save_dataset, Dataset, Error, GeneratorConfig, Result, Strategy, StrategyKind};

#[derive(Parser)]
#[command(name = "fnrcal", version, about = "False-negative-rate calibration for 3D detectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct DataArgs {
    /// JSON-lines record file.
    #[arg(long)]
    data: PathBuf,
    /// Keep only nodules marked by at least this many annotators.
    #[arg(long)]
    consensus: Option<u8>,
    /// Apply greedy NMS at this IoU threshold before anything else.
    #[arg(long)]
    nms: Option<f64>,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        let name = self
            .data
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut spec = DatasetSpec::file(name, &self.data);
        spec.consensus = self.consensus;
        spec.nms_threshold = self.nms;
        spec.load()
    }

    fn name(&self) -> String {
        self.data.display().to_string()
    }
}

#[derive(clap::Args)]
struct StrategyArgs {
    #[arg(long, default_value = "crc")]
    strategy: StrategyKind,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Sensitivity target for the FROC strategy.
    #[arg(long, default_value_t = DEFAULT_TARGET_SENSITIVITY)]
    target: f64,
    /// Threshold used by the naive strategy.
    #[arg(long, default_value_t = DEFAULT_FIXED_LAMBDA)]
    lambda: f64,
}

impl StrategyArgs {
    fn strategy(&self) -> Strategy {
        match self.strategy {
            StrategyKind::Naive => Strategy::Naive { fixed_lambda: self.lambda },
            StrategyKind::Froc => Strategy::Froc { target_sensitivity: self.target },
            StrategyKind::Crc => Strategy::Crc { alpha: self.alpha },
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic record file.
    Generate {
        /// TOML generator config; defaults are used for missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        n_scans: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Choose λ̂ on a calibration dataset and print the result as JSON.
    Calibrate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        strategy: StrategyArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a threshold on a test dataset and print a trial report.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        lambda: f64,
        /// Strategy label recorded in the report.
        #[arg(long, default_value = "naive")]
        strategy: StrategyKind,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a TOML experiment plan.
    Experiment {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        repetitions: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Emit the adapted FROC curve for one split, with strategy markers.
    Curve {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long, default_value_t = DEFAULT_TARGET_SENSITIVITY)]
        target: f64,
        #[arg(long, default_value_t = DEFAULT_FIXED_LAMBDA)]
        lambda: f64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

fn emit_json(value: &impl serde::Serialize, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    match out {
        Some(p) => fs::write(p, text + "\n").map_err(|e| Error::Io { path: p.to_path_buf(), source: e }),
        None => {
            let mut stdout = io::stdout().lock();
            writeln!(stdout, "{text}").map_err(|e| Error::Io { path: PathBuf::from("<stdout>"), source: e })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, n_scans, seed, out } => {
            let mut cfg = match &config {
                Some(p) => {
                    let text = fs::read_to_string(p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
                    toml::from_str::<GeneratorConfig>(&text)
                        .map_err(|e| Error::Plan(format!("{}: {e}", p.display())))?
                }
                None => GeneratorConfig::default(),
            };
            if let Some(n) = n_scans {
                cfg.n_scans = n;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let d = generate(&cfg)?;
            save_dataset(&d, &out)?;
            log::info!("wrote {} scans to {}", d.len(), out.display());
            Ok(())
        }
        Command::Calibrate { data, strategy, out } => {
            let d = data.load()?;
            let result = strategy.strategy().calibrate(&d)?;
            if let Some(flag) = result.flag {
                log::warn!("calibration flagged: {flag:?}");
            }
            emit_json(&result, out.as_deref())
        }
        Command::Evaluate { data, lambda, strategy, out } => {
            let d = data.load()?;
            let result = Strategy::Naive { fixed_lambda: lambda }.calibrate(&d)?;
            let m = evaluate(&result, &d)?;
            let report = TrialReport {
                dataset: data.name(),
                strategy,
                rep: 0,
                lambda_hat: lambda,
                sensitivity: m.sensitivity_prc,
                precision: m.precision_prc,
                efficiency: m.efficiency,
                fn_per_scan: m.fn_per_scan,
                fp_per_scan: m.false_positives_froc,
                infeasible: false,
            };
            emit_json(&report, out.as_deref())
        }
        Command::Experiment { plan, out, seed, repetitions, workers } => {
            let mut p = ExperimentPlan::from_file(&plan)?;
            if let Some(o) = out {
                p.output_dir = o;
            }
            if let Some(s) = seed {
                p.base_seed = s;
            }
            if let Some(r) = repetitions {
                p.repetitions = r;
            }
            if let Some(w) = workers {
                p.workers = w;
            }
            p.validate()?;
            let summary = run_experiment(&p)?;
            emit_json(&summary.rows.iter().map(RowView::from).collect::<Vec<_>>(), None)
        }
        Command::Curve { data, seed, alpha, target, lambda, out } => {
            let d = data.load()?;
            let strategies = [
                Strategy::Naive { fixed_lambda: lambda },
                Strategy::Froc { target_sensitivity: target },
                Strategy::Crc { alpha },
            ];
            for s in &strategies {
                s.validate()?;
            }
            let curve = emit_curve(&d, seed, &strategies)?;
            write_curve(&curve, &out)
        }
    }
}

/// Summary row without histograms, for terminal output.
#[derive(serde::Serialize)]
struct RowView<'a> {
    dataset: &'a str,
    strategy: StrategyKind,
    trials: usize,
    failures: usize,
    lambda_hat: f64,
    sensitivity: f64,
    precision: f64,
    efficiency: f64,
    fn_per_scan: f64,
    fp_per_scan: f64,
    infeasible_rate: f64,
}

impl<'a> From<&'a fnrcal::harness::SummaryRow> for RowView<'a> {
    fn from(r: &'a fnrcal::harness::SummaryRow) -> Self {
        Self {
            dataset: &r.dataset,
            strategy: r.strategy,
            trials: r.trials,
            failures: r.failures,
            lambda_hat: r.lambda_hat,
            sensitivity: r.sensitivity,
            precision: r.precision,
            efficiency: r.efficiency,
            fn_per_scan: r.fn_per_scan,
            fp_per_scan: r.fp_per_scan,
            infeasible_rate: r.infeasible_rate,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

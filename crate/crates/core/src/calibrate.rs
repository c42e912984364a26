//! Threshold selection strategies.
//!
//! * Naive: a fixed λ̂, independent of the calibration data.
//! * FROC: the largest grid λ whose pooled-nodule sensitivity on the
//!   calibration set reaches a target.
//! * CRC: the largest grid λ with `n/(n+1)·R̂ₙ(λ) + 1/(n+1) ≤ α`, where R̂ₙ is
//!   the empirical per-scan FNR. Because the loss is non-decreasing in λ the
//!   feasible λ form a down-set, and its top element is the threshold.
//!
//! The CRC inequality is evaluated in exact rational arithmetic against the
//! exact binary value of `α`, so boundary cases such as `n = 9, α = 0.1,
//! R̂ = 0` resolve the same way every time.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::detections::Dataset;
use crate::error::{Error, Result};
use crate::risk::{profile_dataset, to_f64, AggregateMetrics, RiskSteps, ScanMetrics, ScanProfile};

pub const DEFAULT_FIXED_LAMBDA: f64 = 0.5;
pub const DEFAULT_TARGET_SENSITIVITY: f64 = 0.9;
pub const DEFAULT_ALPHA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Naive,
    Froc,
    Crc,
}

impl StrategyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StrategyKind::Naive => "naive",
            StrategyKind::Froc => "froc",
            StrategyKind::Crc => "crc",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "naive" => Ok(StrategyKind::Naive),
            "froc" => Ok(StrategyKind::Froc),
            "crc" => Ok(StrategyKind::Crc),
            other => Err(Error::param("strategy", format!("unknown strategy `{other}`"))),
        }
    }
}

fn default_fixed_lambda() -> f64 {
    DEFAULT_FIXED_LAMBDA
}

fn default_target() -> f64 {
    DEFAULT_TARGET_SENSITIVITY
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

/// A strategy with its parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Strategy {
    Naive {
        #[serde(default = "default_fixed_lambda")]
        fixed_lambda: f64,
    },
    Froc {
        #[serde(default = "default_target")]
        target_sensitivity: f64,
    },
    Crc {
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
}

impl Strategy {
    pub fn kind(&self) -> StrategyKind {
        match self {
            Strategy::Naive { .. } => StrategyKind::Naive,
            Strategy::Froc { .. } => StrategyKind::Froc,
            Strategy::Crc { .. } => StrategyKind::Crc,
        }
    }

    /// The strategy with its default parameter.
    pub fn default_for(kind: StrategyKind) -> Self {
        match kind {
            StrategyKind::Naive => Strategy::Naive {
                fixed_lambda: DEFAULT_FIXED_LAMBDA,
            },
            StrategyKind::Froc => Strategy::Froc {
                target_sensitivity: DEFAULT_TARGET_SENSITIVITY,
            },
            StrategyKind::Crc => Strategy::Crc {
                alpha: DEFAULT_ALPHA,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Strategy::Naive { fixed_lambda } => check_unit("fixed_lambda", fixed_lambda),
            Strategy::Froc { target_sensitivity } => {
                check_unit("target_sensitivity", target_sensitivity)
            }
            Strategy::Crc { alpha } => {
                if alpha > 0.0 && alpha < 1.0 {
                    Ok(())
                } else {
                    Err(Error::param("alpha", format!("{alpha} outside (0, 1)")))
                }
            }
        }
    }

    /// Calibrates on precomputed scan profiles.
    pub fn calibrate_profiles(&self, profiles: &[&ScanProfile]) -> Result<CalibrationResult> {
        self.validate()?;
        match *self {
            Strategy::Naive { fixed_lambda } => {
                let mut r = calibrate_naive(fixed_lambda)?;
                r.n = profiles.len();
                Ok(r)
            }
            Strategy::Froc { target_sensitivity } => {
                froc_on_steps(&nonempty_steps(profiles)?, target_sensitivity)
            }
            Strategy::Crc { alpha } => crc_on_steps(&nonempty_steps(profiles)?, alpha),
        }
    }

    pub fn calibrate(&self, calibration: &Dataset) -> Result<CalibrationResult> {
        let profiles = profile_dataset(calibration);
        let refs: Vec<&ScanProfile> = profiles.iter().collect();
        self.calibrate_profiles(&refs)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Naive { fixed_lambda } => write!(f, "naive(λ={fixed_lambda})"),
            Strategy::Froc { target_sensitivity } => write!(f, "froc(target={target_sensitivity})"),
            Strategy::Crc { alpha } => write!(f, "crc(α={alpha})"),
        }
    }
}

fn check_unit(name: &'static str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::param(name, format!("{v} outside [0, 1]")))
    }
}

fn nonempty_steps(profiles: &[&ScanProfile]) -> Result<RiskSteps> {
    if profiles.is_empty() {
        return Err(Error::DatasetTooSmall { needed: 1, got: 0 });
    }
    Ok(RiskSteps::new(profiles))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationFlag {
    /// No grid threshold satisfies the corrected CRC bound; λ̂ fell back to 0.
    InfeasibleAlpha,
    /// Even λ = 0 misses the FROC sensitivity target; λ̂ fell back to 0.
    TargetUnreachable,
}

impl CalibrationFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            CalibrationFlag::InfeasibleAlpha => "infeasible_alpha",
            CalibrationFlag::TargetUnreachable => "target_unreachable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub strategy: StrategyKind,
    pub lambda_hat: f64,
    pub alpha: Option<f64>,
    pub target_sensitivity: Option<f64>,
    /// Number of calibration scans.
    pub n: usize,
    /// Empirical FNR risk on the calibration set at λ̂.
    pub achieved_calibration_risk: Option<f64>,
    pub flag: Option<CalibrationFlag>,
}

impl CalibrationResult {
    pub fn is_flagged(&self) -> bool {
        self.flag.is_some()
    }
}

pub fn calibrate_naive(fixed_lambda: f64) -> Result<CalibrationResult> {
    check_unit("fixed_lambda", fixed_lambda)?;
    Ok(CalibrationResult {
        strategy: StrategyKind::Naive,
        lambda_hat: fixed_lambda,
        alpha: None,
        target_sensitivity: None,
        n: 0,
        achieved_calibration_risk: None,
        flag: None,
    })
}

pub fn calibrate_froc(calibration: &Dataset, target_sensitivity: f64) -> Result<CalibrationResult> {
    Strategy::Froc { target_sensitivity }.calibrate(calibration)
}

pub fn calibrate_crc(calibration: &Dataset, alpha: f64) -> Result<CalibrationResult> {
    Strategy::Crc { alpha }.calibrate(calibration)
}

fn froc_on_steps(steps: &RiskSteps, target: f64) -> Result<CalibrationResult> {
    let chosen = (0..steps.segment_count())
        .rev()
        .find(|&k| steps.pooled_sensitivity(k) >= target);
    let (lambda_hat, flag) = match chosen {
        Some(k) => (steps.segment_top(k), None),
        None => {
            log::warn!("FROC target {target} unreachable even at λ = 0");
            (0.0, Some(CalibrationFlag::TargetUnreachable))
        }
    };
    Ok(CalibrationResult {
        strategy: StrategyKind::Froc,
        lambda_hat,
        alpha: None,
        target_sensitivity: Some(target),
        n: steps.n(),
        achieved_calibration_risk: Some(steps.risk_at(lambda_hat)),
        flag,
    })
}

/// `n·R + 1 ≤ α·(n+1)`, the corrected bound multiplied through by `n + 1`.
pub fn crc_bound_holds(risk: &BigRational, n: usize, alpha: f64) -> bool {
    let Some(alpha) = BigRational::from_float(alpha) else {
        return false;
    };
    let n = BigInt::from(n);
    let one = BigRational::from_integer(BigInt::from(1));
    risk * &n + &one <= alpha * (n + 1)
}

/// CRC threshold from precomputed risk steps.
pub fn crc_on_steps(steps: &RiskSteps, alpha: f64) -> Result<CalibrationResult> {
    Strategy::Crc { alpha }.validate()?;
    let n = steps.n();
    let chosen = (0..steps.segment_count())
        .rev()
        .find(|&k| crc_bound_holds(steps.exact_risk(k), n, alpha));
    let (lambda_hat, flag) = match chosen {
        Some(k) => (steps.segment_top(k), None),
        None => (0.0, Some(CalibrationFlag::InfeasibleAlpha)),
    };
    let segment = steps.segment_of(lambda_hat);
    Ok(CalibrationResult {
        strategy: StrategyKind::Crc,
        lambda_hat,
        alpha: Some(alpha),
        target_sensitivity: None,
        n,
        achieved_calibration_risk: Some(to_f64(steps.exact_risk(segment))),
        flag,
    })
}

/// Test-set metrics of a calibrated threshold.
pub fn evaluate(result: &CalibrationResult, test: &Dataset) -> Result<AggregateMetrics> {
    if test.is_empty() {
        return Err(Error::DatasetTooSmall { needed: 1, got: 0 });
    }
    Ok(crate::risk::aggregate_metrics(test, result.lambda_hat))
}

/// Like [`evaluate`], on precomputed profiles.
pub fn evaluate_profiles(lambda_hat: f64, test: &[&ScanProfile]) -> Result<AggregateMetrics> {
    if test.is_empty() {
        return Err(Error::DatasetTooSmall { needed: 1, got: 0 });
    }
    let scans: Vec<ScanMetrics> = test.iter().map(|p| p.metrics(lambda_hat)).collect();
    Ok(AggregateMetrics::from_scans(&scans))
}

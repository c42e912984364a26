//! Calibrating the prediction sets of a black-box 3D detector so that the
//! expected per-scan false-negative rate stays below a chosen level.
//!
//! A detector emits scored candidate boxes per scan. For a threshold λ the
//! prediction set is every candidate with confidence at least λ; each
//! ground-truth nodule is paired with an overlapping candidate, and the
//! per-scan loss is the fraction of nodules left unpaired. The [`calibrate`]
//! module picks λ̂ from a calibration set (fixed, FROC-style or by conformal
//! risk control), and [`harness`] repeats random calibration/test splits to
//! measure how each choice behaves.

pub mod calibrate;
pub mod detections;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod pairing;
pub mod risk;
pub mod synth;

pub use calibrate::{
    calibrate_crc, calibrate_froc, calibrate_naive, evaluate, CalibrationFlag, CalibrationResult,
    Strategy, StrategyKind,
};
pub use detections::{
    filter_consensus, load_dataset, save_dataset, split_dataset, Dataset, GroundTruthNodule,
    ScanRecord,
};
pub use error::{Error, Result};
pub use geometry::{iou, nms_filter, Box3, CandidateBox};
pub use pairing::{count_outcomes, pair, Outcomes, PairingResult};
pub use risk::{
    aggregate_metrics, fnr_loss, prediction_set, risk_curve, AggregateMetrics, PredictionSet,
    RiskCurve, ScanProfile, LAMBDA_SENTINEL,
};
pub use synth::{consensus_shift_suite, generate, GeneratorConfig};

//! Prediction sets, the per-scan false-negative-rate loss, FROC/PRC metrics,
//! and the empirical risk curve over the threshold λ.
//!
//! A prediction set keeps every candidate with `confidence >= λ`. The loss of
//! a scan is `FN / (TP + FN)`, defined as 0 when the scan has no ground truth.
//!
//! For repeated calibration on subsets of one dataset, each scan is reduced
//! once to a [`ScanProfile`]: TP only changes at confidences of candidates
//! that overlap some nodule, so the profile stores TP at those levels plus
//! the sorted confidences for set sizes. [`RiskSteps`] merges profiles into
//! the exact (rational) empirical risk on each constant segment of λ.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::detections::{Dataset, ScanRecord};
use crate::geometry::{iou, CandidateBox};
use crate::pairing::{count_outcomes, pair, Outcomes};

/// Smallest threshold above every valid confidence; selects nothing.
pub const LAMBDA_SENTINEL: f64 = f64::from_bits(0x3FF0_0000_0000_0001);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub scan_id: String,
    pub lambda: f64,
    pub members: Vec<CandidateBox>,
}

pub fn prediction_set(scan: &ScanRecord, lambda: f64) -> PredictionSet {
    PredictionSet {
        scan_id: scan.scan_id.clone(),
        lambda,
        members: scan
            .candidates
            .iter()
            .filter(|c| c.confidence >= lambda)
            .copied()
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanMetrics {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub fnr_loss: f64,
    pub set_size: usize,
}

impl ScanMetrics {
    pub fn from_outcomes(o: Outcomes) -> Self {
        Self {
            tp: o.tp,
            fp: o.fp,
            fn_: o.fn_,
            fnr_loss: loss_of(o),
            set_size: o.tp + o.fp,
        }
    }

    /// Per-scan sensitivity, 1 for a scan without ground truth.
    pub fn sensitivity(&self) -> f64 {
        1.0 - self.fnr_loss
    }
}

fn loss_of(o: Outcomes) -> f64 {
    let n = o.tp + o.fn_;
    if n == 0 {
        0.0
    } else {
        o.fn_ as f64 / n as f64
    }
}

pub fn scan_metrics(scan: &ScanRecord, lambda: f64) -> ScanMetrics {
    let set = prediction_set(scan, lambda);
    ScanMetrics::from_outcomes(count_outcomes(&scan.ground_truth, &set.members))
}

pub fn fnr_loss(scan: &ScanRecord, lambda: f64) -> f64 {
    scan_metrics(scan, lambda).fnr_loss
}

/// One scan reduced to what calibration needs: TP and set size as functions of λ.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanProfile {
    n_truth: usize,
    /// All candidate confidences, ascending.
    confidences: Vec<f64>,
    /// Distinct confidences of candidates overlapping some nodule, ascending.
    thresholds: Vec<f64>,
    /// `tp_at[k]` is TP for λ in `(thresholds[k-1], thresholds[k]]`.
    tp_at: Vec<usize>,
}

impl ScanProfile {
    pub fn new(scan: &ScanRecord) -> Self {
        let mut confidences: Vec<f64> = scan.candidates.iter().map(|c| c.confidence).collect();
        confidences.sort_by(f64::total_cmp);

        // Candidates without overlap never enter a pairing.
        let mut relevant: Vec<CandidateBox> = scan
            .candidates
            .iter()
            .filter(|c| scan.ground_truth.iter().any(|g| iou(&g.bbox, &c.bbox) > 0.0))
            .copied()
            .collect();
        relevant.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));

        let mut thresholds = Vec::new();
        let mut tp_at = Vec::new();
        let mut end = 0;
        while end < relevant.len() {
            let level = relevant[end].confidence;
            while end < relevant.len() && relevant[end].confidence == level {
                end += 1;
            }
            thresholds.push(level);
            tp_at.push(pair(&scan.ground_truth, &relevant[..end]).true_positives());
        }
        thresholds.reverse();
        tp_at.reverse();

        Self {
            n_truth: scan.ground_truth.len(),
            confidences,
            thresholds,
            tp_at,
        }
    }

    pub fn n_truth(&self) -> usize {
        self.n_truth
    }

    pub fn confidences(&self) -> &[f64] {
        &self.confidences
    }

    pub fn tp(&self, lambda: f64) -> usize {
        let k = self.thresholds.partition_point(|&t| t < lambda);
        self.tp_at.get(k).copied().unwrap_or(0)
    }

    pub fn set_size(&self, lambda: f64) -> usize {
        self.confidences.len() - self.confidences.partition_point(|&c| c < lambda)
    }

    pub fn outcomes(&self, lambda: f64) -> Outcomes {
        let tp = self.tp(lambda);
        Outcomes {
            tp,
            fp: self.set_size(lambda) - tp,
            fn_: self.n_truth - tp,
        }
    }

    pub fn metrics(&self, lambda: f64) -> ScanMetrics {
        ScanMetrics::from_outcomes(self.outcomes(lambda))
    }
}

pub fn profile_dataset(d: &Dataset) -> Vec<ScanProfile> {
    d.scans.iter().map(ScanProfile::new).collect()
}

/// Empirical risk and pooled TP of a set of scans on each constant segment of λ.
///
/// With thresholds `t_0 < … < t_{m-1}`, segment 0 is `[0, t_0]`, segment `k`
/// is `(t_{k-1}, t_k]` and segment `m` is `(t_{m-1}, ∞)`.
#[derive(Debug, Clone)]
pub struct RiskSteps {
    n: usize,
    pooled_truth: usize,
    thresholds: Vec<f64>,
    risk: Vec<BigRational>,
    pooled_tp: Vec<usize>,
}

impl RiskSteps {
    pub fn new(profiles: &[&ScanProfile]) -> Self {
        let n = profiles.len();
        let pooled_truth = profiles.iter().map(|p| p.n_truth).sum();

        let mut loss_total = BigRational::zero();
        let mut tp_total: usize = 0;
        // (threshold, scan, step) for every downward TP step.
        let mut events: Vec<(f64, usize, usize)> = Vec::new();
        for (i, p) in profiles.iter().enumerate() {
            let tp0 = p.tp_at.first().copied().unwrap_or(0);
            tp_total += tp0;
            if p.n_truth > 0 {
                loss_total += ratio(p.n_truth - tp0, p.n_truth);
            }
            events.extend((0..p.thresholds.len()).map(|k| (p.thresholds[k], i, k)));
        }
        events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mean = |total: &BigRational| {
            if n == 0 {
                BigRational::zero()
            } else {
                total / BigInt::from(n)
            }
        };

        let mut thresholds = Vec::new();
        let mut risk = vec![mean(&loss_total)];
        let mut pooled_tp = vec![tp_total];
        let mut e = 0;
        while e < events.len() {
            let level = events[e].0;
            while e < events.len() && events[e].0 == level {
                let (_, i, k) = events[e];
                let p = profiles[i];
                let before = p.tp_at[k];
                let after = p.tp_at.get(k + 1).copied().unwrap_or(0);
                // TP lost once λ rises past this level.
                let lost = before as i64 - after as i64;
                tp_total = (tp_total as i64 - lost) as usize;
                loss_total += BigRational::new(BigInt::from(lost), BigInt::from(p.n_truth));
                e += 1;
            }
            thresholds.push(level);
            risk.push(mean(&loss_total));
            pooled_tp.push(tp_total);
        }

        Self {
            n,
            pooled_truth,
            thresholds,
            risk,
            pooled_tp,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn pooled_truth(&self) -> usize {
        self.pooled_truth
    }

    pub fn segment_count(&self) -> usize {
        self.risk.len()
    }

    pub fn segment_of(&self, lambda: f64) -> usize {
        self.thresholds.partition_point(|&t| t < lambda)
    }

    /// Largest grid threshold inside a segment: its right end, or the
    /// sentinel for the open top segment.
    pub fn segment_top(&self, segment: usize) -> f64 {
        self.thresholds
            .get(segment)
            .copied()
            .unwrap_or(LAMBDA_SENTINEL)
    }

    pub fn exact_risk(&self, segment: usize) -> &BigRational {
        &self.risk[segment]
    }

    pub fn risk_at(&self, lambda: f64) -> f64 {
        to_f64(&self.risk[self.segment_of(lambda)])
    }

    pub fn pooled_tp(&self, segment: usize) -> usize {
        self.pooled_tp[segment]
    }

    /// Pooled-nodule (FROC) sensitivity on a segment; 1 when there is no truth.
    pub fn pooled_sensitivity(&self, segment: usize) -> f64 {
        if self.pooled_truth == 0 {
            1.0
        } else {
            self.pooled_tp[segment] as f64 / self.pooled_truth as f64
        }
    }
}

fn ratio(num: usize, den: usize) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

pub(crate) fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Step function λ ↦ empirical FNR risk over the calibration grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCurve {
    /// Distinct candidate confidences plus 0 and [`LAMBDA_SENTINEL`], ascending.
    pub grid: Vec<f64>,
    pub empirical_risk: Vec<f64>,
    pub n: usize,
}

impl RiskCurve {
    pub fn from_profiles(profiles: &[&ScanProfile]) -> Self {
        let steps = RiskSteps::new(profiles);
        let grid = threshold_grid(profiles.iter().map(|p| p.confidences()));
        let empirical_risk = grid.iter().map(|&l| steps.risk_at(l)).collect();
        Self {
            grid,
            empirical_risk,
            n: profiles.len(),
        }
    }
}

/// Sorted distinct confidences together with 0 and the sentinel.
pub fn threshold_grid<'a>(confidences: impl Iterator<Item = &'a [f64]>) -> Vec<f64> {
    let mut grid: Vec<f64> = confidences.flatten().copied().collect();
    grid.push(0.0);
    grid.push(LAMBDA_SENTINEL);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

pub fn risk_curve(calibration: &Dataset) -> RiskCurve {
    let profiles = profile_dataset(calibration);
    let refs: Vec<&ScanProfile> = profiles.iter().collect();
    RiskCurve::from_profiles(&refs)
}

/// Test-set metrics at one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub sensitivity_froc: f64,
    pub sensitivity_prc: f64,
    pub precision_prc: f64,
    pub false_positives_froc: f64,
    /// Mean prediction-set size.
    pub efficiency: f64,
    pub fn_per_scan: f64,
    /// Scans whose prediction set was empty; their precision counts as 1.
    pub empty_prediction_sets: usize,
}

impl AggregateMetrics {
    pub fn from_scans(scans: &[ScanMetrics]) -> Self {
        let n = scans.len().max(1) as f64;
        let mut tp = 0usize;
        let mut truth = 0usize;
        let mut sens = 0.0;
        let mut prec = 0.0;
        let mut fp = 0usize;
        let mut size = 0usize;
        let mut fn_ = 0usize;
        let mut empty = 0;
        for s in scans {
            tp += s.tp;
            truth += s.tp + s.fn_;
            sens += s.sensitivity();
            prec += if s.set_size == 0 {
                empty += 1;
                1.0
            } else {
                s.tp as f64 / s.set_size as f64
            };
            fp += s.fp;
            size += s.set_size;
            fn_ += s.fn_;
        }
        Self {
            sensitivity_froc: if truth == 0 { 1.0 } else { tp as f64 / truth as f64 },
            sensitivity_prc: sens / n,
            precision_prc: prec / n,
            false_positives_froc: fp as f64 / n,
            efficiency: size as f64 / n,
            fn_per_scan: fn_ as f64 / n,
            empty_prediction_sets: empty,
        }
    }
}

pub fn aggregate_metrics(test: &Dataset, lambda: f64) -> AggregateMetrics {
    let scans: Vec<ScanMetrics> = test.scans.iter().map(|s| scan_metrics(s, lambda)).collect();
    AggregateMetrics::from_scans(&scans)
}

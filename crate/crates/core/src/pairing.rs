//! Matching of prediction-set candidates to ground-truth nodules.
//!
//! Each nodule claims the highest-confidence candidate among those with
//! strictly positive IoU against it; any overlap at all is enough. When two
//! nodules claim the same candidate, the nodule with the larger IoU keeps it
//! and the other falls back to its next preference, until no claim is
//! contested. This is nodule-proposing deferred acceptance, so the result is
//! a stable matching and does not depend on processing order.
//!
//! Preference of a nodule over candidates: confidence, then IoU, then box
//! order, then input index. Preference of a candidate over nodules: IoU, then
//! the lower nodule index.

use std::cmp::Ordering;
use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::detections::GroundTruthNodule;
use crate::geometry::{iou, CandidateBox};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingDiagnostics {
    /// Times a nodule lost a claimed candidate to another nodule.
    pub contested_claims: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingResult {
    /// `(ground_truth_index, candidate_index)`, ascending by nodule.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_truth: Vec<usize>,
    pub diagnostics: PairingDiagnostics,
}

impl PairingResult {
    pub fn true_positives(&self) -> usize {
        self.matches.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Outcomes {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

pub fn pair(truth: &[GroundTruthNodule], prediction_set: &[CandidateBox]) -> PairingResult {
    let n_truth = truth.len();
    if n_truth == 0 {
        return PairingResult::default();
    }

    let overlap: Vec<Vec<f64>> = truth
        .iter()
        .map(|g| prediction_set.iter().map(|c| iou(&g.bbox, &c.bbox)).collect())
        .collect();

    let preferences: Vec<Vec<usize>> = overlap
        .iter()
        .map(|row| {
            let mut cands: Vec<usize> = (0..prediction_set.len()).filter(|&j| row[j] > 0.0).collect();
            cands.sort_by(|&a, &b| {
                let (ca, cb) = (&prediction_set[a], &prediction_set[b]);
                cb.confidence
                    .total_cmp(&ca.confidence)
                    .then_with(|| row[b].total_cmp(&row[a]))
                    .then_with(|| ca.bbox.lex_cmp(&cb.bbox))
                    .then_with(|| a.cmp(&b))
            });
            cands
        })
        .collect();

    // Candidate j prefers nodule a over b.
    let prefers = |j: usize, a: usize, b: usize| -> bool {
        match overlap[a][j].total_cmp(&overlap[b][j]) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => a < b,
        }
    };

    let mut holder: Vec<Option<usize>> = vec![None; prediction_set.len()];
    let mut next_choice = vec![0usize; n_truth];
    let mut diagnostics = PairingDiagnostics::default();
    let mut free: VecDeque<usize> = (0..n_truth).collect();

    while let Some(t) = free.pop_front() {
        let Some(&j) = preferences[t].get(next_choice[t]) else {
            continue;
        };
        next_choice[t] += 1;
        match holder[j] {
            None => holder[j] = Some(t),
            Some(current) => {
                diagnostics.contested_claims += 1;
                if prefers(j, t, current) {
                    holder[j] = Some(t);
                    free.push_back(current);
                } else {
                    free.push_back(t);
                }
            }
        }
    }

    let mut assigned: Vec<Option<usize>> = vec![None; n_truth];
    for (j, h) in holder.iter().enumerate() {
        if let Some(t) = h {
            assigned[*t] = Some(j);
        }
    }
    let mut result = PairingResult {
        diagnostics,
        ..Default::default()
    };
    for (t, a) in assigned.into_iter().enumerate() {
        match a {
            Some(j) => result.matches.push((t, j)),
            None => result.unmatched_truth.push(t),
        }
    }
    result
}

/// TP, FP and FN of a prediction set against the scan's ground truth.
pub fn count_outcomes(truth: &[GroundTruthNodule], prediction_set: &[CandidateBox]) -> Outcomes {
    outcomes_from(&pair(truth, prediction_set), truth.len(), prediction_set.len())
}

pub(crate) fn outcomes_from(result: &PairingResult, n_truth: usize, set_size: usize) -> Outcomes {
    let tp = result.true_positives();
    Outcomes {
        tp,
        fp: set_size - tp,
        fn_: n_truth - tp,
    }
}

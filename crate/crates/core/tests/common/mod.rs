#![allow(dead_code)]

use std::cmp::Ordering;

use fnrcal::{count_outcomes, prediction_set, Box3, CandidateBox, Dataset, GroundTruthNodule, ScanRecord};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::Rng;

/// Overlap volume computed axis by axis, independent of the library.
pub fn oracle_iou(a: &Box3, b: &Box3) -> f64 {
    let (amin, amax, bmin, bmax) = (a.min(), a.max(), b.min(), b.max());
    let mut inter = 1.0;
    let mut va = 1.0;
    let mut vb = 1.0;
    for k in 0..3 {
        inter *= (amax[k].min(bmax[k]) - amin[k].max(bmin[k])).max(0.0);
        va *= amax[k] - amin[k];
        vb *= bmax[k] - bmin[k];
    }
    if va == 0.0 || vb == 0.0 || inter == 0.0 {
        0.0
    } else {
        inter / (va + vb - inter)
    }
}

fn lex(a: &Box3, b: &Box3) -> Ordering {
    a.to_flat()
        .iter()
        .zip(b.to_flat().iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Every stable one-to-one assignment of nodules to positive-IoU candidates.
///
/// Nodules rank candidates by confidence, then IoU, then box order, then
/// index; candidates rank nodules by IoU, then lower index. An assignment is
/// kept when no nodule and candidate would both rather be together.
pub fn stable_assignments(truth: &[GroundTruthNodule], cands: &[CandidateBox]) -> Vec<Vec<Option<usize>>> {
    let ov: Vec<Vec<f64>> = truth
        .iter()
        .map(|g| cands.iter().map(|c| oracle_iou(&g.bbox, &c.bbox)).collect())
        .collect();
    let nodule_prefers = |t: usize, a: usize, b: usize| -> bool {
        let (ca, cb) = (&cands[a], &cands[b]);
        let o = ca
            .confidence
            .total_cmp(&cb.confidence)
            .then(ov[t][a].total_cmp(&ov[t][b]))
            .then(lex(&cb.bbox, &ca.bbox))
            .then(b.cmp(&a));
        o == Ordering::Greater
    };
    let cand_prefers = |j: usize, a: usize, b: usize| -> bool {
        match ov[a][j].total_cmp(&ov[b][j]) {
            Ordering::Equal => a < b,
            o => o == Ordering::Greater,
        }
    };

    let mut out = Vec::new();
    let mut current = vec![None; truth.len()];
    let mut used = vec![false; cands.len()];
    fn rec(
        t: usize,
        ov: &[Vec<f64>],
        current: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
        visit: &mut dyn FnMut(&[Option<usize>]),
    ) {
        if t == current.len() {
            visit(current);
            return;
        }
        current[t] = None;
        rec(t + 1, ov, current, used, visit);
        for j in 0..used.len() {
            if !used[j] && ov[t][j] > 0.0 {
                used[j] = true;
                current[t] = Some(j);
                rec(t + 1, ov, current, used, visit);
                used[j] = false;
            }
        }
        current[t] = None;
    }
    let mut visit = |m: &[Option<usize>]| {
        let mut holder = vec![None; cands.len()];
        for (t, a) in m.iter().enumerate() {
            if let Some(j) = a {
                holder[*j] = Some(t);
            }
        }
        let blocked = (0..truth.len()).any(|t| {
            (0..cands.len()).any(|j| {
                ov[t][j] > 0.0
                    && m[t] != Some(j)
                    && m[t].is_none_or(|cur| nodule_prefers(t, j, cur))
                    && holder[j].is_none_or(|h| cand_prefers(j, t, h))
            })
        });
        if !blocked {
            out.push(m.to_vec());
        }
    };
    rec(0, &ov, &mut current, &mut used, &mut visit);
    out
}

pub fn random_box(rng: &mut impl Rng, extent: f64, size: [f64; 2]) -> Box3 {
    let s: [f64; 3] = std::array::from_fn(|_| rng.random_range(size[0]..size[1]));
    let lo: [f64; 3] = std::array::from_fn(|k| rng.random_range(0.0..extent - s[k]));
    Box3::new(lo, std::array::from_fn(|k| lo[k] + s[k])).unwrap()
}

/// Confidence drawn from a coarse lattice half the time so ties occur.
pub fn random_confidence(rng: &mut impl Rng) -> f64 {
    if rng.random_bool(0.5) {
        rng.random_range(0..=10) as f64 / 10.0
    } else {
        rng.random_range(0.0..=1.0)
    }
}

/// A cluttered scan: boxes in a small volume so overlaps and contested
/// claims are common.
pub fn random_scan(rng: &mut impl Rng, id: usize, max_truth: usize, max_cands: usize) -> ScanRecord {
    let n_truth = rng.random_range(0..=max_truth);
    let n_cands = rng.random_range(0..=max_cands);
    ScanRecord {
        scan_id: format!("s{id}"),
        ground_truth: (0..n_truth)
            .map(|_| GroundTruthNodule::new(random_box(rng, 10.0, [1.0, 4.0]), rng.random_range(1..=4)))
            .collect(),
        candidates: (0..n_cands)
            .map(|_| CandidateBox::new(random_box(rng, 10.0, [1.0, 4.0]), random_confidence(rng)))
            .collect(),
    }
}

pub fn random_dataset(rng: &mut impl Rng, n: usize, max_truth: usize, max_cands: usize) -> Dataset {
    Dataset::new((0..n).map(|i| random_scan(rng, i, max_truth, max_cands)).collect(), "random").unwrap()
}

/// `FN / N` as an exact fraction, zero when the scan has no nodules.
pub fn exact_loss(scan: &ScanRecord, lambda: f64) -> BigRational {
    let set = prediction_set(scan, lambda);
    let o = count_outcomes(&scan.ground_truth, &set.members);
    if scan.ground_truth.is_empty() {
        BigRational::zero()
    } else {
        BigRational::new(BigInt::from(o.fn_), BigInt::from(scan.ground_truth.len()))
    }
}

pub fn oracle_grid(d: &Dataset) -> Vec<f64> {
    let mut g: Vec<f64> = d
        .scans
        .iter()
        .flat_map(|s| s.candidates.iter().map(|c| c.confidence))
        .collect();
    g.push(0.0);
    g.push(fnrcal::LAMBDA_SENTINEL);
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

/// Scans the whole grid and returns the largest λ satisfying
/// `n/(n+1) · R(λ) + 1/(n+1) ≤ α` in exact arithmetic, or `None`.
pub fn oracle_crc(d: &Dataset, alpha: f64) -> Option<f64> {
    let n = BigInt::from(d.len());
    let alpha = BigRational::from_float(alpha).unwrap();
    let bound = alpha * BigRational::from_integer(&n + BigInt::one());
    oracle_grid(d)
        .into_iter()
        .rfind(|&lambda| {
            let total: BigRational = d.scans.iter().map(|s| exact_loss(s, lambda)).sum();
            // n · (total / n) + 1 ≤ α (n + 1)
            total + BigRational::one() <= bound
        })
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn std_err(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0);
    (var / xs.len() as f64).sqrt()
}

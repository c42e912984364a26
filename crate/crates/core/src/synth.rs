//! Seeded synthetic scans with multi-annotator consensus.
//!
//! Every nodule carries a latent salience `s ∈ (0, 1)`. Each of the
//! annotators marks it independently with probability
//! `logistic(annotator_slope · (s − annotator_midpoint))`; the consensus is
//! the number of marks, and nodules nobody marked are redrawn. The detector
//! emits one overlapping candidate per nodule with confidence
//! `clamp(logistic(detector_sharpness · (s − 0.5)) + noise, 0, 1)`, plus
//! distractor boxes that overlap no nodule. Low-consensus nodules therefore
//! tend to be the low-confidence ones.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::detections::{filter_consensus, Dataset, GroundTruthNodule, ScanRecord, MAX_CONSENSUS};
use crate::error::{Error, Result};
use crate::geometry::{Box3, CandidateBox};

const PLACEMENT_ATTEMPTS: usize = 2_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_scans: usize,
    /// Inclusive range of nodules per scan.
    pub nodules_per_scan: [usize; 2],
    /// Success probability of the truncated geometric nodule count.
    pub nodule_count_p: f64,
    pub n_annotators: u8,
    pub salience: BetaParams,
    pub annotator_midpoint: f64,
    pub annotator_slope: f64,
    pub detector_sharpness: f64,
    pub confidence_noise_sd: f64,
    /// Inclusive range of distractor candidates per scan.
    pub distractors_per_scan: [usize; 2],
    pub distractor_confidence: BetaParams,
    /// Scan extent in millimeters along each axis.
    pub volume_mm: [f64; 3],
    pub nodule_diameter_mm: [f64; 2],
    pub distractor_size_mm: [f64; 2],
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_scans: 200,
            nodules_per_scan: [1, 12],
            nodule_count_p: 0.5,
            n_annotators: MAX_CONSENSUS,
            salience: BetaParams { a: 2.0, b: 2.0 },
            annotator_midpoint: 0.35,
            annotator_slope: 10.0,
            detector_sharpness: 8.0,
            confidence_noise_sd: 0.08,
            distractors_per_scan: [40, 160],
            distractor_confidence: BetaParams { a: 0.7, b: 9.0 },
            volume_mm: [340.0, 340.0, 340.0],
            nodule_diameter_mm: [3.0, 30.0],
            distractor_size_mm: [3.0, 40.0],
            seed: 0,
        }
    }
}

fn bad(name: &'static str, message: String) -> Error {
    Error::param(name, message)
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.nodules_per_scan;
        if lo < 1 || lo > hi {
            return Err(bad("nodules_per_scan", format!("[{lo}, {hi}] must satisfy 1 <= min <= max")));
        }
        if !(self.nodule_count_p > 0.0 && self.nodule_count_p <= 1.0) {
            return Err(bad("nodule_count_p", format!("{} outside (0, 1]", self.nodule_count_p)));
        }
        if self.n_annotators == 0 || self.n_annotators > MAX_CONSENSUS {
            return Err(bad("n_annotators", format!("{} outside 1..={MAX_CONSENSUS}", self.n_annotators)));
        }
        for (name, p) in [("salience", self.salience), ("distractor_confidence", self.distractor_confidence)] {
            if !(p.a > 0.0 && p.b > 0.0 && p.a.is_finite() && p.b.is_finite()) {
                return Err(bad(name, format!("beta parameters ({}, {}) must be positive", p.a, p.b)));
            }
        }
        if self.annotator_slope.is_nan() || self.annotator_slope < 0.0 {
            return Err(bad("annotator_slope", "must be non-negative".into()));
        }
        if self.detector_sharpness.is_nan() || self.detector_sharpness < 0.0 {
            return Err(bad("detector_sharpness", "must be non-negative".into()));
        }
        if !(self.confidence_noise_sd >= 0.0 && self.confidence_noise_sd.is_finite()) {
            return Err(bad("confidence_noise_sd", "must be finite and non-negative".into()));
        }
        if self.distractors_per_scan[0] > self.distractors_per_scan[1] {
            return Err(bad("distractors_per_scan", "min exceeds max".into()));
        }
        for (name, [a, b]) in [
            ("nodule_diameter_mm", self.nodule_diameter_mm),
            ("distractor_size_mm", self.distractor_size_mm),
        ] {
            if !(a > 0.0 && a <= b && b.is_finite()) {
                return Err(bad(name, format!("[{a}, {b}] must satisfy 0 < min <= max")));
            }
        }
        if self.volume_mm.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(bad("volume_mm", "extents must be positive".into()));
        }
        if self.volume_mm.iter().any(|&v| v < 2.0 * self.nodule_diameter_mm[1]) {
            return Err(Error::InfeasibleConfig(
                "volume too small for the largest nodule and its margin".into(),
            ));
        }
        Ok(())
    }
}

/// Generator-side facts about one nodule, not part of the record format.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoduleLatent {
    pub salience: f64,
    pub consensus: u8,
    /// Index of the nodule's own candidate in the scan's candidate list.
    pub candidate_index: usize,
}

pub fn logistic(x: f64) -> f64 {
    if x.is_nan() {
        0.5
    } else {
        1.0 / (1.0 + (-x).exp())
    }
}

/// Probability that a single annotator marks a nodule of salience `s`.
pub fn marking_probability(config: &GeneratorConfig, s: f64) -> f64 {
    logistic(config.annotator_slope * (s - config.annotator_midpoint))
}

/// Noise-free detector confidence for salience `s`.
pub fn detector_confidence(config: &GeneratorConfig, s: f64) -> f64 {
    logistic(config.detector_sharpness * (s - 0.5))
}

pub fn generate(config: &GeneratorConfig) -> Result<Dataset> {
    generate_with_latents(config).map(|(d, _)| d)
}

pub fn generate_with_latents(config: &GeneratorConfig) -> Result<(Dataset, Vec<Vec<NoduleLatent>>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let salience = Beta::new(config.salience.a, config.salience.b).expect("validated");
    let distractor_conf =
        Beta::new(config.distractor_confidence.a, config.distractor_confidence.b).expect("validated");
    let noise = Normal::new(0.0, config.confidence_noise_sd).expect("validated");

    let mut scans = Vec::with_capacity(config.n_scans);
    let mut latents = Vec::with_capacity(config.n_scans);
    for i in 0..config.n_scans {
        let count = nodule_count(config, &mut rng);
        let mut truth: Vec<GroundTruthNodule> = Vec::with_capacity(count);
        let mut scan_latents = Vec::with_capacity(count);
        let mut candidates = Vec::new();
        let mut keep_out: Vec<Box3> = Vec::with_capacity(count);

        while truth.len() < count {
            let s: f64 = salience.sample(&mut rng).max(f64::MIN_POSITIVE);
            let p_mark = marking_probability(config, s);
            let consensus = (0..config.n_annotators).filter(|_| rng.random_bool(p_mark)).count() as u8;
            if consensus == 0 {
                continue;
            }

            let (nodule, margin) = place_nodule(config, &keep_out, &mut rng)?;
            keep_out.push(margin);
            truth.push(GroundTruthNodule::new(nodule, consensus));

            let d = nodule.extent(0);
            let c = nodule.center();
            let jitter = |rng: &mut ChaCha8Rng| rng.random_range(-0.25 * d..=0.25 * d);
            let center = [c[0] + jitter(&mut rng), c[1] + jitter(&mut rng), c[2] + jitter(&mut rng)];
            let size = d * rng.random_range(0.8..=1.25);
            let confidence = (detector_confidence(config, s) + noise.sample(&mut rng)).clamp(0.0, 1.0);
            scan_latents.push(NoduleLatent {
                salience: s,
                consensus,
                candidate_index: candidates.len(),
            });
            candidates.push(CandidateBox::new(Box3::cube(center, size)?, confidence));
        }

        let [dmin, dmax] = config.distractors_per_scan;
        let n_distractors = rng.random_range(dmin..=dmax);
        for _ in 0..n_distractors {
            let bbox = place_distractor(config, &truth, &mut rng)?;
            let confidence: f64 = distractor_conf.sample(&mut rng);
            candidates.push(CandidateBox::new(bbox, confidence.min(1.0 - f64::EPSILON)));
        }

        // Present candidates in random order, tracking where each nodule's went.
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.shuffle(&mut rng);
        let mut position = vec![0; candidates.len()];
        for (new, &old) in order.iter().enumerate() {
            position[old] = new;
        }
        let shuffled = order.iter().map(|&j| candidates[j]).collect();
        for l in &mut scan_latents {
            l.candidate_index = position[l.candidate_index];
        }

        scans.push(ScanRecord {
            scan_id: format!("synth-{i:05}"),
            candidates: shuffled,
            ground_truth: truth,
        });
        latents.push(scan_latents);
    }

    let dataset = Dataset {
        scans,
        provenance: format!("synthetic seed={} n_scans={}", config.seed, config.n_scans),
    };
    Ok((dataset, latents))
}

fn nodule_count(config: &GeneratorConfig, rng: &mut ChaCha8Rng) -> usize {
    let [lo, hi] = config.nodules_per_scan;
    loop {
        let mut k = lo;
        while k <= hi && !rng.random_bool(config.nodule_count_p) {
            k += 1;
        }
        if k <= hi {
            return k;
        }
    }
}

/// A cubic nodule plus the doubled cube around it that other nodules keep
/// clear of, so a jittered candidate overlaps only its own nodule.
fn place_nodule(config: &GeneratorConfig, keep_out: &[Box3], rng: &mut ChaCha8Rng) -> Result<(Box3, Box3)> {
    let [dmin, dmax] = config.nodule_diameter_mm;
    for _ in 0..PLACEMENT_ATTEMPTS {
        let d = rng.random_range(dmin..=dmax);
        let center = random_center(config.volume_mm, d, rng);
        let margin = Box3::cube(center, 2.0 * d)?;
        if keep_out.iter().all(|b| b.intersection_volume(&margin) == 0.0) {
            return Ok((Box3::cube(center, d)?, margin));
        }
    }
    Err(Error::InfeasibleConfig(format!(
        "could not place a non-overlapping nodule in {:?} mm after {PLACEMENT_ATTEMPTS} attempts",
        config.volume_mm
    )))
}

fn place_distractor(config: &GeneratorConfig, truth: &[GroundTruthNodule], rng: &mut ChaCha8Rng) -> Result<Box3> {
    let [smin, smax] = config.distractor_size_mm;
    for _ in 0..PLACEMENT_ATTEMPTS {
        let size = rng.random_range(smin..=smax);
        let b = Box3::cube(random_center(config.volume_mm, size / 2.0, rng), size)?;
        if truth.iter().all(|g| g.bbox.intersection_volume(&b) == 0.0) {
            return Ok(b);
        }
    }
    Err(Error::InfeasibleConfig(format!(
        "could not place a distractor clear of all nodules in {:?} mm",
        config.volume_mm
    )))
}

fn random_center(volume: [f64; 3], pad: f64, rng: &mut ChaCha8Rng) -> [f64; 3] {
    let mut c = [0.0; 3];
    for k in 0..3 {
        let hi = (volume[k] - pad).max(pad);
        c[k] = rng.random_range(pad..=hi);
    }
    c
}

/// One generated superset filtered at consensus 1 through 4.
pub fn consensus_shift_suite(config: &GeneratorConfig) -> Result<Vec<Dataset>> {
    let base = generate(config)?;
    (1..=MAX_CONSENSUS)
        .map(|r| {
            let mut d = filter_consensus(&base, r)?.dataset;
            d.provenance = format!("{} | set {r}", base.provenance);
            Ok(d)
        })
        .collect()
}

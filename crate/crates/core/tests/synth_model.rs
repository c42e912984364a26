mod common;

use common::{mean, std_err};
use fnrcal::detections::split_dataset;
use fnrcal::synth::{generate_with_latents, marking_probability, NoduleLatent};
use fnrcal::{
    aggregate_metrics, calibrate_crc, consensus_shift_suite, evaluate, generate, pair, GeneratorConfig,
};

fn latents(config: &GeneratorConfig) -> Vec<(NoduleLatent, f64)> {
    let (d, lat) = generate_with_latents(config).unwrap();
    d.scans
        .iter()
        .zip(&lat)
        .flat_map(|(s, l)| l.iter().map(|n| (*n, s.candidates[n.candidate_index].confidence)))
        .collect()
}

fn no_distractors(n_scans: usize, seed: u64) -> GeneratorConfig {
    GeneratorConfig {
        n_scans,
        distractors_per_scan: [0, 0],
        seed,
        ..Default::default()
    }
}

#[test]
fn consensus_follows_zero_truncated_binomial() {
    let cfg = no_distractors(6_000, 21);
    let nodules = latents(&cfg);
    let n = cfg.n_annotators as f64;
    let (mut resid, mut var) = (0.0, 0.0);
    for (l, _) in &nodules {
        let p = marking_probability(&cfg, l.salience);
        let keep = 1.0 - (1.0 - p).powf(n);
        let m1 = n * p / keep;
        let m2 = (n * p * (1.0 - p) + (n * p).powi(2)) / keep;
        resid += l.consensus as f64 - m1;
        var += m2 - m1 * m1;
    }
    let z = resid / var.sqrt();
    assert!(z.abs() < 4.0, "z = {z} over {} nodules", nodules.len());
}

#[test]
fn high_consensus_confidence_dominates_low_consensus() {
    let nodules = latents(&no_distractors(40_000, 22));
    let conf = |r: u8| {
        let mut v: Vec<f64> = nodules.iter().filter(|(l, _)| l.consensus == r).map(|(_, c)| *c).collect();
        v.sort_by(f64::total_cmp);
        v
    };
    let (low, high) = (conf(1), conf(4));
    assert!(low.len() >= 10_000 && high.len() >= 10_000, "{} / {}", low.len(), high.len());
    let cdf = |v: &[f64], x: f64| v.partition_point(|&c| c <= x) as f64 / v.len() as f64;
    // DKW band for the difference of two empirical CDFs at 99.9%.
    let band = |m: usize| ((2.0f64 / 1e-3).ln() / (2.0 * m as f64)).sqrt();
    let tol = band(low.len()) + band(high.len());
    for k in 0..=200 {
        let x = k as f64 / 200.0;
        assert!(cdf(&high, x) <= cdf(&low, x) + tol, "x = {x}");
    }
    assert!(mean(&high) > mean(&low) + 0.1);
}

#[test]
fn mean_true_confidence_rises_with_consensus() {
    let nodules = latents(&no_distractors(20_000, 23));
    let means: Vec<f64> = (1..=4u8)
        .map(|r| {
            let v: Vec<f64> = nodules.iter().filter(|(l, _)| l.consensus == r).map(|(_, c)| *c).collect();
            mean(&v)
        })
        .collect();
    assert!(means.windows(2).all(|w| w[0] <= w[1]), "{means:?}");
}

#[test]
fn every_nodule_pairable_and_zero_risk_at_zero() {
    let d = generate(&GeneratorConfig { n_scans: 80, seed: 24, ..Default::default() }).unwrap();
    for s in &d.scans {
        assert!(pair(&s.ground_truth, &s.candidates).unmatched_truth.is_empty());
    }
    assert_eq!(aggregate_metrics(&d, 0.0).fn_per_scan, 0.0);
    assert_eq!(fnrcal::risk_curve(&d).empirical_risk[0], 0.0);
}

#[test]
fn consensus_sets_are_nested() {
    let sets = consensus_shift_suite(&GeneratorConfig { n_scans: 150, seed: 25, ..Default::default() }).unwrap();
    for w in sets.windows(2) {
        assert!(w[1].len() <= w[0].len());
        for s in &w[1].scans {
            let parent = w[0].scans.iter().find(|p| p.scan_id == s.scan_id).unwrap();
            assert!(s.ground_truth.iter().all(|g| parent.ground_truth.contains(g)));
        }
    }
}

#[test]
fn risk_controlled_over_independent_draws() {
    let alpha = 0.1;
    let fnr: Vec<f64> = (0..300u64)
        .map(|k| {
            let d = generate(&GeneratorConfig {
                n_scans: 60,
                distractors_per_scan: [10, 40],
                seed: 1_000 + k,
                ..Default::default()
            })
            .unwrap();
            let (cal, test) = split_dataset(&d, k).unwrap();
            let m = evaluate(&calibrate_crc(&cal, alpha).unwrap(), &test).unwrap();
            1.0 - m.sensitivity_prc
        })
        .collect();
    let (m, se) = (mean(&fnr), std_err(&fnr));
    assert!(m <= alpha + 3.0 * se, "mean FNR {m}, SE {se}");
}

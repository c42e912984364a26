//! Adapted FROC curve: mean per-scan sensitivity against mean false positives
//! per scan on the test half of one split, with each strategy's λ̂ marked.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibrate::{evaluate_profiles, Strategy, StrategyKind};
use crate::detections::{split_indices, Dataset};
use crate::error::{Error, Result};
use crate::harness::report::fixed;
use crate::risk::{profile_dataset, threshold_grid, ScanProfile};

pub const CURVE_FILE: &str = "curve.csv";
pub const MARKERS_FILE: &str = "curve_markers.csv";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub lambda: f64,
    pub sensitivity_prc: f64,
    pub fp_froc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveMarker {
    pub strategy: StrategyKind,
    pub lambda_hat: f64,
    pub sensitivity_prc: f64,
    pub fp_froc: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveOutput {
    pub rows: Vec<CurveRow>,
    pub markers: Vec<CurveMarker>,
}

/// One seeded split; strategies calibrate on the first half and the curve is
/// traced on the second over its own threshold grid.
pub fn emit_curve(dataset: &Dataset, seed: u64, strategies: &[Strategy]) -> Result<CurveOutput> {
    let (cal, test) = split_indices(dataset.len(), seed)?;
    let profiles = profile_dataset(dataset);
    let cal: Vec<&ScanProfile> = cal.iter().map(|&i| &profiles[i]).collect();
    let test: Vec<&ScanProfile> = test.iter().map(|&i| &profiles[i]).collect();

    let grid = threshold_grid(test.iter().map(|p| p.confidences()));
    let rows = grid
        .iter()
        .map(|&lambda| {
            let m = evaluate_profiles(lambda, &test)?;
            Ok(CurveRow {
                lambda,
                sensitivity_prc: m.sensitivity_prc,
                fp_froc: m.false_positives_froc,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let markers = strategies
        .iter()
        .map(|s| {
            let r = s.calibrate_profiles(&cal)?;
            let m = evaluate_profiles(r.lambda_hat, &test)?;
            Ok(CurveMarker {
                strategy: s.kind(),
                lambda_hat: r.lambda_hat,
                sensitivity_prc: m.sensitivity_prc,
                fp_froc: m.false_positives_froc,
                flagged: r.is_flagged(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(CurveOutput { rows, markers })
}

pub fn write_curve_csv(rows: &[CurveRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lambda", "sensitivity_prc", "fp_froc"])?;
    for r in rows {
        w.write_record([fixed(r.lambda), fixed(r.sensitivity_prc), fixed(r.fp_froc)])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_markers_csv(markers: &[CurveMarker], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["strategy", "lambda_hat", "sensitivity_prc", "fp_froc", "flagged"])?;
    for m in markers {
        w.write_record([
            m.strategy.to_string(),
            fixed(m.lambda_hat),
            fixed(m.sensitivity_prc),
            fixed(m.fp_froc),
            (m.flagged as u8).to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Writes `curve.csv` and `curve_markers.csv` into `dir`.
pub fn write_curve(output: &CurveOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let open = |name: &str| {
        let p = dir.join(name);
        fs::File::create(&p).map_err(|e| Error::io(p, e))
    };
    write_curve_csv(&output.rows, open(CURVE_FILE)?)?;
    write_markers_csv(&output.markers, open(MARKERS_FILE)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, GeneratorConfig};

    fn data(sharpness: f64, noise: f64) -> Dataset {
        generate(&GeneratorConfig {
            n_scans: 20,
            detector_sharpness: sharpness,
            confidence_noise_sd: noise,
            distractors_per_scan: [5, 20],
            seed: 5,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn one_row_per_grid_point_and_monotone() {
        let d = data(8.0, 0.08);
        let out = emit_curve(&d, 1, &[Strategy::default_for(StrategyKind::Crc)]).unwrap();
        let (_, test) = split_indices(d.len(), 1).unwrap();
        let test = d.select(&test, "");
        let mut grid: Vec<f64> = test.scans.iter().flat_map(|s| s.candidates.iter().map(|c| c.confidence)).collect();
        grid.extend([0.0, crate::risk::LAMBDA_SENTINEL]);
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        assert_eq!(out.rows.len(), grid.len());
        assert!(out.rows.windows(2).all(|w| w[1].sensitivity_prc <= w[0].sensitivity_prc));
        assert!(out.rows.windows(2).all(|w| w[1].fp_froc <= w[0].fp_froc));
        assert_eq!(out.markers.len(), 1);
    }

    #[test]
    fn perfect_detector_reaches_full_sensitivity_without_false_positives() {
        // Salience above 0.5 everywhere keeps every true candidate at confidence 1.
        let mut cfg = GeneratorConfig {
            n_scans: 20,
            detector_sharpness: f64::INFINITY,
            confidence_noise_sd: 0.0,
            distractors_per_scan: [5, 20],
            seed: 5,
            ..Default::default()
        };
        cfg.salience = crate::synth::BetaParams { a: 50.0, b: 1.0 };
        let d = generate(&cfg).unwrap();
        let out = emit_curve(&d, 2, &[]).unwrap();
        assert!(out
            .rows
            .iter()
            .any(|r| r.sensitivity_prc == 1.0 && r.fp_froc == 0.0));
    }

    #[test]
    fn csv_files_written() {
        let d = data(8.0, 0.08);
        let out = emit_curve(&d, 1, &[Strategy::default_for(StrategyKind::Naive)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_curve(&out, dir.path()).unwrap();
        let curve = fs::read_to_string(dir.path().join(CURVE_FILE)).unwrap();
        assert_eq!(curve.lines().count(), out.rows.len() + 1);
        assert!(curve.starts_with("lambda,sensitivity_prc,fp_froc\n"));
        let markers = fs::read_to_string(dir.path().join(MARKERS_FILE)).unwrap();
        assert!(markers.lines().nth(1).unwrap().starts_with("naive,0.500000,"));
    }
}

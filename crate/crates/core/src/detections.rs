//! Scan records, datasets, and the line-delimited record format.
//!
//! Each line of a record file is one JSON object:
//!
//! ```text
//! {"scan_id": "s01",
//!  "candidates":   [{"box": [x1, y1, z1, x2, y2, z2], "confidence": 0.83}, ...],
//!  "ground_truth": [{"box": [x1, y1, z1, x2, y2, z2], "consensus": 3}, ...]}
//! ```
//!
//! Coordinates are millimeters. Corner order within each axis is normalized on
//! read. Blank lines are skipped.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, Box3, CandidateBox};

/// Number of annotators in the multi-reader consensus model.
pub const MAX_CONSENSUS: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthNodule {
    #[serde(rename = "box")]
    pub bbox: Box3,
    /// Number of annotators who marked the nodule.
    pub consensus: u8,
}

impl GroundTruthNodule {
    pub fn new(bbox: Box3, consensus: u8) -> Self {
        Self { bbox, consensus }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub scan_id: String,
    pub candidates: Vec<CandidateBox>,
    pub ground_truth: Vec<GroundTruthNodule>,
}

impl ScanRecord {
    pub fn validate(&self) -> Result<()> {
        let invalid = |field: String, message: String| Error::Validation {
            scan_id: self.scan_id.clone(),
            field,
            message,
        };
        if self.scan_id.is_empty() {
            return Err(invalid("scan_id".into(), "must be nonempty".into()));
        }
        for (j, c) in self.candidates.iter().enumerate() {
            if !(0.0..=1.0).contains(&c.confidence) {
                return Err(invalid(
                    format!("candidates[{j}].confidence"),
                    format!("{} outside [0, 1]", c.confidence),
                ));
            }
        }
        for (j, g) in self.ground_truth.iter().enumerate() {
            if g.consensus == 0 || g.consensus > MAX_CONSENSUS {
                return Err(invalid(
                    format!("ground_truth[{j}].consensus"),
                    format!("{} outside 1..={MAX_CONSENSUS}", g.consensus),
                ));
            }
        }
        Ok(())
    }

    /// Indices of ground-truth nodules with zero IoU against every candidate.
    /// Such nodules keep the full candidate set from reaching zero FNR.
    pub fn unpairable_truth(&self) -> Vec<usize> {
        self.ground_truth
            .iter()
            .enumerate()
            .filter(|(_, g)| self.candidates.iter().all(|c| iou(&g.bbox, &c.bbox) <= 0.0))
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub scans: Vec<ScanRecord>,
    pub provenance: String,
}

impl Dataset {
    /// Validates every record and the uniqueness of scan ids.
    pub fn new(scans: Vec<ScanRecord>, provenance: impl Into<String>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(scans.len());
        for scan in &scans {
            scan.validate()?;
            if !seen.insert(scan.scan_id.as_str()) {
                return Err(Error::Validation {
                    scan_id: scan.scan_id.clone(),
                    field: "scan_id".into(),
                    message: "duplicate scan_id".into(),
                });
            }
        }
        Ok(Self {
            scans,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.scans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scans.is_empty()
    }

    pub fn nodule_count(&self) -> usize {
        self.scans.iter().map(|s| s.ground_truth.len()).sum()
    }

    /// Subset by scan index, preserving the given order.
    pub fn select(&self, indices: &[usize], provenance: impl Into<String>) -> Dataset {
        Dataset {
            scans: indices.iter().map(|&i| self.scans[i].clone()).collect(),
            provenance: provenance.into(),
        }
    }
}

/// A ground-truth nodule that no candidate overlaps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnpairableTruth {
    pub scan_id: String,
    pub nodule_index: usize,
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let (dataset, diagnostics) = load_dataset_with_diagnostics(path)?;
    for d in &diagnostics {
        log::warn!(
            "scan `{}`: ground_truth[{}] overlaps no candidate",
            d.scan_id,
            d.nodule_index
        );
    }
    Ok(dataset)
}

/// Loads and validates a record file, also reporting nodules that no
/// candidate overlaps. Those scans are kept unchanged.
pub fn load_dataset_with_diagnostics(
    path: impl AsRef<Path>,
) -> Result<(Dataset, Vec<UnpairableTruth>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let dataset = read_records(BufReader::new(file), path)?;
    let diagnostics = dataset
        .scans
        .iter()
        .flat_map(|s| {
            s.unpairable_truth().into_iter().map(|i| UnpairableTruth {
                scan_id: s.scan_id.clone(),
                nodule_index: i,
            })
        })
        .collect();
    Ok((dataset, diagnostics))
}

pub fn read_records(reader: impl BufRead, path: &Path) -> Result<Dataset> {
    let mut scans = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ScanRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        scans.push(record);
    }
    Dataset::new(scans, format!("file:{}", path.display()))
}

pub fn write_records(dataset: &Dataset, writer: impl Write) -> std::io::Result<()> {
    let mut w = BufWriter::new(writer);
    for scan in &dataset.scans {
        serde_json::to_writer(&mut w, scan)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_records(dataset, file).map_err(|e| Error::io(path, e))
}

/// Result of restricting a dataset to nodules of a minimum consensus.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusFilter {
    pub dataset: Dataset,
    /// Scans removed because no nodule met the consensus level.
    pub dropped_scans: usize,
}

/// Keeps nodules marked by at least `min_consensus` annotators and drops
/// scans left without any. Candidates are untouched.
pub fn filter_consensus(d: &Dataset, min_consensus: u8) -> Result<ConsensusFilter> {
    if min_consensus == 0 || min_consensus > MAX_CONSENSUS {
        return Err(Error::param(
            "consensus",
            format!("{min_consensus} outside 1..={MAX_CONSENSUS}"),
        ));
    }
    let mut dropped = 0;
    let scans: Vec<ScanRecord> = d
        .scans
        .iter()
        .filter_map(|s| {
            let truth: Vec<_> = s
                .ground_truth
                .iter()
                .filter(|g| g.consensus >= min_consensus)
                .copied()
                .collect();
            if truth.is_empty() {
                dropped += 1;
                None
            } else {
                Some(ScanRecord {
                    scan_id: s.scan_id.clone(),
                    candidates: s.candidates.clone(),
                    ground_truth: truth,
                })
            }
        })
        .collect();
    if scans.is_empty() && !d.is_empty() {
        log::warn!("consensus filter r={min_consensus} removed every scan");
    }
    Ok(ConsensusFilter {
        dataset: Dataset {
            scans,
            provenance: format!("{} | consensus>={min_consensus}", d.provenance),
        },
        dropped_scans: dropped,
    })
}

/// Seeded random halving of `0..n`: the first `ceil(n/2)` permuted indices
/// form the calibration part, the rest the test part.
pub fn split_indices(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::DatasetTooSmall { needed: 2, got: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = order.split_off(n.div_ceil(2));
    Ok((order, test))
}

pub fn split_dataset(d: &Dataset, seed: u64) -> Result<(Dataset, Dataset)> {
    let (cal, test) = split_indices(d.len(), seed)?;
    Ok((
        d.select(&cal, format!("{} | calibration seed={seed}", d.provenance)),
        d.select(&test, format!("{} | test seed={seed}", d.provenance)),
    ))
}

//! Labelled datasets and their partitioning across workers.

use std::ops::Range;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{RngStream, Side, StreamId};

/// Row-major feature matrix with ±1 labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<f64>,
    num_features: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<f64>, num_features: usize) -> Result<Self> {
        if num_features == 0 {
            return Err(Error::Data("at least one feature column is required".into()));
        }
        if features.len() != labels.len() * num_features {
            return Err(Error::Data(format!(
                "{} feature values do not form {} rows of {num_features}",
                features.len(),
                labels.len()
            )));
        }
        if let Some((i, y)) = labels.iter().enumerate().find(|(_, y)| **y != 1.0 && **y != -1.0) {
            return Err(Error::Data(format!("row {i}: label {y} is not ±1")));
        }
        if let Some(v) = features.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite feature value {v}")));
        }
        Ok(Self {
            features,
            labels,
            num_features,
        })
    }

    /// Two Gaussian classes: row `r` has label `y ∈ {±1}` (fair coin) and
    /// feature `f` equal to `scales[f] · (y · separation + z)`, `z ~ N(0, 1)`.
    pub fn two_class(samples: usize, scales: &[f64], separation: f64, seed: u64) -> Result<Self> {
        if samples == 0 {
            return Err(Error::Data("sample count must be positive".into()));
        }
        let mut rng = RngStream::new(seed, StreamId::new(Side::Data, 0, 0));
        let p = scales.len();
        let mut features = Vec::with_capacity(samples * p);
        let mut labels = Vec::with_capacity(samples);
        for _ in 0..samples {
            let y = if rng.random::<bool>() { 1.0 } else { -1.0 };
            labels.push(y);
            for s in scales {
                let z: f64 = rng.sample(StandardNormal);
                features.push(s * (y * separation + z));
            }
        }
        Self::new(features, labels, p)
    }

    /// Numeric CSV, one sample per row, label (±1) in the last column. Lines
    /// starting with `#` are skipped; a non-numeric first row is a header.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut width = None;
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
            let row = match parsed {
                Ok(row) => row,
                Err(_) if i == 0 => continue,
                Err(e) => return Err(Error::Data(format!("row {}: {e}", i + 1))),
            };
            if row.len() < 2 {
                return Err(Error::Data(format!(
                    "row {}: need at least one feature and a label",
                    i + 1
                )));
            }
            match width {
                None => width = Some(row.len()),
                Some(w) if w != row.len() => {
                    return Err(Error::Data(format!(
                        "row {}: expected {w} columns, found {}",
                        i + 1,
                        row.len()
                    )))
                }
                _ => {}
            }
            let (label, feats) = row.split_last().expect("row has at least two columns");
            features.extend_from_slice(feats);
            labels.push(*label);
        }
        let width = width.ok_or_else(|| Error::Data("no data rows".into()))?;
        Self::new(features, labels, width - 1)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.num_features..(i + 1) * self.num_features]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }
}

/// Contiguous near-equal partitions of `0..samples` (sizes differ by at most
/// one, larger ones first).
pub fn contiguous_partitions(samples: usize, workers: usize) -> Result<Vec<Range<usize>>> {
    if workers == 0 {
        return Err(Error::param("workers", "at least one worker is required"));
    }
    if samples < workers {
        return Err(Error::EmptyPartition { worker: samples });
    }
    let base = samples / workers;
    let extra = samples % workers;
    let mut start = 0;
    Ok((0..workers)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect())
}

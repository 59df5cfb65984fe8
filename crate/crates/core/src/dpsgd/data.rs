//! Labelled tabular datasets, CSV I/O, and the Gaussian-blob generator.
//!
//! CSV layout: a header row, one example per row, feature columns first and
//! the integer class label in the last column.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Row-major feature matrix with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    num_classes: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

/// Borrowed view of one example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Example<'a> {
    pub features: &'a [f64],
    pub label: usize,
}

impl Dataset {
    pub fn new(dim: usize, num_classes: usize, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        if features.len() != dim * labels.len() {
            return Err(Error::invalid(format!(
                "feature buffer of length {} does not hold {} rows of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::invalid(format!("label {bad} out of range for {num_classes} classes")));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("dataset contains non-finite features"));
        }
        Ok(Self {
            dim,
            num_classes,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn example(&self, i: usize) -> Example<'_> {
        Example {
            features: &self.features[i * self.dim..(i + 1) * self.dim],
            label: self.labels[i],
        }
    }

    pub fn examples(&self) -> impl Iterator<Item = Example<'_>> {
        (0..self.len()).map(|i| self.example(i))
    }

    pub fn gather(&self, indices: &[usize]) -> Vec<Example<'_>> {
        indices.iter().map(|&i| self.example(i)).collect()
    }

    fn subset(&self, range: std::ops::Range<usize>) -> Dataset {
        Dataset {
            dim: self.dim,
            num_classes: self.num_classes,
            features: self.features[range.start * self.dim..range.end * self.dim].to_vec(),
            labels: self.labels[range].to_vec(),
        }
    }

    /// Splits off the trailing `test_fraction` of rows as a test set.
    pub fn split(&self, test_fraction: f64) -> Result<(Dataset, Dataset)> {
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(Error::invalid(format!("test fraction must lie in (0, 1), got {test_fraction}")));
        }
        let n_test = ((self.len() as f64) * test_fraction).round() as usize;
        if n_test == 0 || n_test >= self.len() {
            return Err(Error::invalid(format!(
                "dataset of {} rows is too small for test fraction {test_fraction}",
                self.len()
            )));
        }
        let cut = self.len() - n_test;
        Ok((self.subset(0..cut), self.subset(cut..self.len())))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::Reader::from_reader(BufReader::new(file));
        let width = reader.headers()?.len();
        if width < 2 {
            return Err(Error::invalid(format!("{}: need at least one feature and a label column", path.display())));
        }
        let dim = width - 1;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            for field in record.iter().take(dim) {
                features.push(field.trim().parse::<f64>().map_err(|_| {
                    Error::invalid(format!("{} row {}: bad feature {field:?}", path.display(), row + 1))
                })?);
            }
            let label = &record[dim];
            labels.push(label.trim().parse::<usize>().map_err(|_| {
                Error::invalid(format!("{} row {}: bad label {label:?}", path.display(), row + 1))
            })?);
        }
        let num_classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
        Self::new(dim, num_classes, features, labels)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        let mut header: Vec<String> = (0..self.dim).map(|j| format!("x{j}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for ex in self.examples() {
            let mut row: Vec<String> = ex.features.iter().map(|x| format!("{x:?}")).collect();
            row.push(ex.label.to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Isotropic Gaussian blobs: class centres at distance `separation` from the
/// origin in random directions, unit-variance noise around each centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub n: usize,
    pub dims: usize,
    pub classes: usize,
    pub separation: f64,
    pub seed: u64,
}

impl BlobSpec {
    pub fn generate(&self) -> Result<Dataset> {
        if self.n == 0 || self.dims == 0 || self.classes < 2 {
            return Err(Error::invalid("blobs need n ≥ 1, dims ≥ 1 and at least 2 classes"));
        }
        if !(self.separation >= 0.0) {
            return Err(Error::invalid("blob separation must be non-negative"));
        }
        let mut r = rng::stream(self.seed, 0);
        let centres: Vec<Vec<f64>> = (0..self.classes)
            .map(|_| {
                let v: Vec<f64> = (0..self.dims).map(|_| r.sample(StandardNormal)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                v.into_iter().map(|x| x * self.separation / norm).collect()
            })
            .collect();
        let mut labels: Vec<usize> = (0..self.n).map(|i| i % self.classes).collect();
        labels.shuffle(&mut r);
        let mut features = Vec::with_capacity(self.n * self.dims);
        for &y in &labels {
            features.extend(centres[y].iter().map(|c| c + r.sample::<f64, _>(StandardNormal)));
        }
        Dataset::new(self.dims, self.classes, features, labels)
    }

    /// `blobs:n=2000,dims=20,classes=2,sep=2.0,seed=7`; omitted keys take
    /// the defaults of [`BlobSpec::default`].
    pub fn parse(s: &str) -> Result<Self> {
        let body = s
            .strip_prefix("blobs:")
            .or_else(|| (s == "blobs").then_some(""))
            .ok_or_else(|| Error::invalid(format!("not a blob spec: {s:?}")))?;
        let mut spec = Self::default();
        for kv in body.split(',').filter(|p| !p.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("blob spec entry {kv:?} is not key=value")))?;
            let bad = || Error::invalid(format!("blob spec: bad value for {k}: {v:?}"));
            match k.trim() {
                "n" => spec.n = v.parse().map_err(|_| bad())?,
                "dims" => spec.dims = v.parse().map_err(|_| bad())?,
                "classes" => spec.classes = v.parse().map_err(|_| bad())?,
                "sep" | "separation" => spec.separation = v.parse().map_err(|_| bad())?,
                "seed" => spec.seed = v.parse().map_err(|_| bad())?,
                other => return Err(Error::invalid(format!("blob spec: unknown key {other:?}"))),
            }
        }
        Ok(spec)
    }

    pub fn id(&self) -> String {
        format!(
            "blobs:n={},dims={},classes={},sep={},seed={}",
            self.n, self.dims, self.classes, self.separation, self.seed
        )
    }
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            n: 2000,
            dims: 20,
            classes: 2,
            separation: 2.0,
            seed: 0,
        }
    }
}

/// Resolves a dataset identifier: a `blobs:` spec or a CSV path.
pub fn load_dataset(id: &str) -> Result<Dataset> {
    if id == "blobs" || id.starts_with("blobs:") {
        BlobSpec::parse(id)?.generate()
    } else {
        Dataset::read_csv(Path::new(id))
    }
}

//! Labelled datasets: a Gaussian-blob generator and a CSV loader.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub num_labels: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, num_labels: usize) -> Result<Self> {
        let ds = Self {
            samples,
            num_labels,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(invalid_arg("dataset is empty"));
        }
        let dim = self.samples[0].features.len();
        for (i, s) in self.samples.iter().enumerate() {
            if s.label >= self.num_labels {
                return Err(invalid_arg(format!(
                    "sample {i} has label {} outside [0, {})",
                    s.label, self.num_labels
                )));
            }
            if s.features.len() != dim {
                return Err(invalid_arg(format!(
                    "sample {i} has {} features, expected {dim}",
                    s.features.len()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.features.len())
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_labels];
        for s in &self.samples {
            h[s.label] += 1;
        }
        h
    }

    /// Labels that occur at least once.
    pub fn label_support(&self) -> Vec<usize> {
        self.label_histogram()
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(l, _)| l)
            .collect()
    }

    pub fn max_sq_norm(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.features.iter().map(|x| x * x).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Load `f1,f2,...,fd,label` rows; a header line is skipped if its last
    /// field does not parse as an integer.
    pub fn from_csv(path: impl AsRef<Path>, num_labels: Option<usize>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path.as_ref())?;
        let mut samples = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() < 2 {
                return Err(Error::Schema(format!(
                    "{}: row {row} needs at least one feature and a label",
                    path.as_ref().display()
                )));
            }
            let last = &rec[rec.len() - 1];
            let label: usize = match last.parse() {
                Ok(l) => l,
                Err(_) if row == 0 => continue,
                Err(_) => {
                    return Err(Error::Schema(format!(
                        "{}: row {row} label `{last}` is not a non-negative integer",
                        path.as_ref().display()
                    )))
                }
            };
            let features = rec
                .iter()
                .take(rec.len() - 1)
                .map(|f| {
                    f.parse::<f64>().map_err(|_| {
                        Error::Schema(format!(
                            "{}: row {row} feature `{f}` is not a number",
                            path.as_ref().display()
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            samples.push(Sample { features, label });
        }
        let inferred = samples.iter().map(|s| s.label + 1).max().unwrap_or(0);
        Dataset::new(samples, num_labels.unwrap_or(inferred).max(inferred))
    }
}

/// Isotropic Gaussian blobs, one per label, with centers drawn once from
/// `N(0, center_spread²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianBlobs {
    pub num_labels: usize,
    pub features: usize,
    pub center_spread: f64,
    pub noise_std: f64,
}

impl GaussianBlobs {
    pub fn centers<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        let n = Normal::new(0.0, self.center_spread)
            .map_err(|e| invalid_arg(format!("center_spread: {e}")))?;
        Ok((0..self.num_labels)
            .map(|_| (0..self.features).map(|_| n.sample(rng)).collect())
            .collect())
    }

    /// Draw `count` samples with labels cycling over all classes so every
    /// class is represented equally (±1).
    pub fn sample<R: Rng + ?Sized>(
        &self,
        centers: &[Vec<f64>],
        count: usize,
        rng: &mut R,
    ) -> Result<Dataset> {
        if self.num_labels == 0 || self.features == 0 {
            return Err(invalid_arg("gaussian blobs need labels and features"));
        }
        let noise = Normal::new(0.0, self.noise_std)
            .map_err(|e| invalid_arg(format!("noise_std: {e}")))?;
        let samples = (0..count)
            .map(|i| {
                let label = i % self.num_labels;
                let features = centers[label]
                    .iter()
                    .map(|&c| c + noise.sample(rng))
                    .collect();
                Sample { features, label }
            })
            .collect();
        Dataset::new(samples, self.num_labels)
    }
}

//! Synthetic two-group, two-class populations and the dataset CSV format.
//!
//! Features are drawn as
//! `x = (a - 1/2) * group_separation * group_axis
//!    + (y - 1/2) * disease_separation * disease_axis
//!    + noise_scale * eps`
//! with `eps` standard normal. Because every `(group, class)` cell is an
//! isotropic Gaussian with shared covariance, posteriors are closed-form and
//! the separability of the groups is an analytic function of
//! `group_separation / noise_scale`.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seeding;
use crate::special::{normal_cdf, normal_quantile};

/// Smallest `n` for which every `(group, class)` cell can be populated.
pub const MIN_SAMPLES: usize = 4;

const UNIT_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    pub dim: usize,
    /// P(A = 1).
    pub group_prior: f64,
    /// P(y = 1 | A = a) for a = 0, 1.
    pub class_prior: [f64; 2],
    pub group_separation: f64,
    pub disease_separation: f64,
    pub group_axis: Vec<f64>,
    pub disease_axis: Vec<f64>,
    pub noise_scale: f64,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        PopulationSpec {
            dim: 2,
            group_prior: 0.7,
            class_prior: [0.7, 0.7],
            group_separation: 0.0,
            disease_separation: 0.6,
            group_axis: vec![1.0, 0.0],
            disease_axis: vec![0.0, 1.0],
            noise_scale: 1.0,
        }
    }
}

impl PopulationSpec {
    /// Default population in `dim` dimensions with orthogonal signal axes
    /// along the first two coordinates.
    pub fn with_dim(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::domain(
                "orthogonal default axes need dim >= 2; supply explicit axes for dim 1",
            ));
        }
        let mut spec = PopulationSpec {
            dim,
            ..Default::default()
        };
        spec.group_axis = basis(dim, 0);
        spec.disease_axis = basis(dim, 1);
        Ok(spec)
    }

    /// Sets the group separation so the Bayes group AUC equals `target_auc`.
    pub fn with_separability(mut self, target_auc: f64) -> Result<Self> {
        self.group_separation = separation_for_auc(target_auc, self.noise_scale)?;
        Ok(self)
    }

    /// Rotates the disease axis to make `angle` radians with the group axis
    /// inside the plane of the first two coordinates.
    pub fn with_axis_angle(mut self, angle: f64) -> Result<Self> {
        if self.dim < 2 || !angle.is_finite() {
            return Err(Error::domain("axis angle needs dim >= 2 and a finite angle"));
        }
        self.group_axis = basis(self.dim, 0);
        let mut axis = vec![0.0; self.dim];
        axis[0] = angle.cos();
        axis[1] = angle.sin();
        self.disease_axis = axis;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::domain("dim must be positive"));
        }
        for (name, axis) in [("group_axis", &self.group_axis), ("disease_axis", &self.disease_axis)] {
            if axis.len() != self.dim {
                return Err(Error::domain(format!(
                    "{name} has length {}, expected dim = {}",
                    axis.len(),
                    self.dim
                )));
            }
            let norm = axis.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::domain(format!("{name} must have unit norm, got {norm}")));
            }
        }
        let open_unit = |p: f64| p > 0.0 && p < 1.0;
        if !open_unit(self.group_prior) {
            return Err(Error::domain("group_prior must lie in (0, 1)"));
        }
        if !self.class_prior.iter().all(|&p| open_unit(p)) {
            return Err(Error::domain("class_prior entries must lie in (0, 1)"));
        }
        for (name, v) in [
            ("group_separation", self.group_separation),
            ("disease_separation", self.disease_separation),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::domain(format!("{name} must be finite and >= 0")));
            }
        }
        if !(self.noise_scale.is_finite() && self.noise_scale > 0.0) {
            return Err(Error::domain("noise_scale must be finite and > 0"));
        }
        Ok(())
    }

    /// Mean of the `(group, label)` cell.
    pub fn cell_mean(&self, group: u8, label: u8) -> Vec<f64> {
        let a = f64::from(group) - 0.5;
        let y = f64::from(label) - 0.5;
        self.group_axis
            .iter()
            .zip(&self.disease_axis)
            .map(|(g, d)| a * self.group_separation * g + y * self.disease_separation * d)
            .collect()
    }

    /// Analytic Bayes AUC for telling the two groups apart.
    ///
    /// Exact when the class priors match across groups or the axes are
    /// orthogonal; otherwise the group-conditional laws are mixtures and this
    /// is the AUC along the group axis alone.
    pub fn group_auc(&self) -> f64 {
        normal_cdf(self.group_separation / (self.noise_scale * std::f64::consts::SQRT_2))
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("PopulationSpec serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("PopulationSpec serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: PopulationSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }
}

fn basis(dim: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[k] = 1.0;
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub group: u8,
    pub true_label: u8,
    pub observed_label: u8,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub spec_fingerprint: Option<String>,
    pub seed: Option<u64>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Self {
        Dataset {
            samples,
            spec_fingerprint: None,
            seed: None,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.features.len())
    }

    /// `counts[group][true_label]`.
    pub fn cell_counts(&self) -> [[usize; 2]; 2] {
        let mut counts = [[0; 2]; 2];
        for s in &self.samples {
            counts[s.group as usize][s.true_label as usize] += 1;
        }
        counts
    }

    /// Number of truly positive samples in `group`.
    pub fn positives_in(&self, group: u8) -> usize {
        self.cell_counts()[group as usize][1]
    }

    /// True when no observed label differs from its true label.
    pub fn is_clean(&self) -> bool {
        self.samples.iter().all(|s| s.observed_label == s.true_label)
    }

    /// Subset by index, preserving provenance.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            spec_fingerprint: self.spec_fingerprint.clone(),
            seed: self.seed,
        }
    }

    pub fn features(&self) -> Vec<&[f64]> {
        self.samples.iter().map(|s| s.features.as_slice()).collect()
    }

    pub fn groups(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.group).collect()
    }

    pub fn true_labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.true_label).collect()
    }

    pub fn observed_labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.observed_label).collect()
    }

    pub(crate) fn require_cells(&self) -> Result<()> {
        let counts = self.cell_counts();
        for (a, row) in counts.iter().enumerate() {
            for (y, &c) in row.iter().enumerate() {
                if c == 0 {
                    return Err(Error::DegenerateDataset(format!(
                        "no samples with group = {a}, true_label = {y} among {} samples",
                        self.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Bayes AUC between two isotropic Gaussians whose means are `delta` apart.
pub fn auc_for_separation(delta: f64, sigma: f64) -> Result<f64> {
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(Error::domain(format!("separation must be finite and >= 0, got {delta}")));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::domain(format!("sigma must be finite and > 0, got {sigma}")));
    }
    Ok(normal_cdf(delta / (sigma * std::f64::consts::SQRT_2)))
}

/// Inverse of [`auc_for_separation`].
pub fn separation_for_auc(target_auc: f64, sigma: f64) -> Result<f64> {
    if !(target_auc.is_finite() && (0.5..1.0).contains(&target_auc)) {
        return Err(Error::domain(format!("target AUC must lie in [0.5, 1), got {target_auc}")));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::domain(format!("sigma must be finite and > 0, got {sigma}")));
    }
    if target_auc == 0.5 {
        return Ok(0.0);
    }
    Ok(sigma * std::f64::consts::SQRT_2 * normal_quantile(target_auc))
}

/// Draws `n` samples from `spec` using a stream seeded by `seed`.
pub fn sample_population(spec: &PopulationSpec, n: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::domain("n must be positive"));
    }
    let mut rng = seeding::rng(seed);
    let means = [
        [spec.cell_mean(0, 0), spec.cell_mean(0, 1)],
        [spec.cell_mean(1, 0), spec.cell_mean(1, 1)],
    ];
    let samples = (0..n)
        .map(|_| {
            let group = u8::from(rng.random::<f64>() < spec.group_prior);
            let label = u8::from(rng.random::<f64>() < spec.class_prior[group as usize]);
            let features = means[group as usize][label as usize]
                .iter()
                .map(|m| {
                    let eps: f64 = rng.sample(StandardNormal);
                    m + spec.noise_scale * eps
                })
                .collect();
            Sample {
                features,
                group,
                true_label: label,
                observed_label: label,
            }
        })
        .collect();
    let dataset = Dataset {
        samples,
        spec_fingerprint: Some(spec.fingerprint()),
        seed: Some(seed),
    };
    dataset.require_cells()?;
    Ok(dataset)
}

const GROUP: &str = "group";
const TRUE_LABEL: &str = "true_label";
const OBSERVED_LABEL: &str = "observed_label";

fn csv_header(dim: usize) -> Vec<String> {
    (0..dim)
        .map(|j| format!("feature_{j}"))
        .chain([GROUP, TRUE_LABEL, OBSERVED_LABEL].map(String::from))
        .collect()
}

/// Serializes a dataset to the CSV text format.
pub fn dataset_to_csv(dataset: &Dataset) -> Result<String> {
    let dim = dataset.dim();
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let io = |e: csv::Error| Error::domain(format!("csv encoding failed: {e}"));
    writer.write_record(csv_header(dim)).map_err(io)?;
    for (i, s) in dataset.samples.iter().enumerate() {
        if s.features.len() != dim {
            return Err(Error::domain(format!(
                "sample {i} has {} features, expected {dim}",
                s.features.len()
            )));
        }
        let record = s
            .features
            .iter()
            .map(|v| v.to_string())
            .chain([s.group, s.true_label, s.observed_label].map(|v| v.to_string()));
        writer.write_record(record).map_err(io)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::domain(format!("csv encoding failed: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn save_dataset_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = dataset_to_csv(dataset)?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_dataset_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    dataset_from_csv(&text)
}

/// Parses the CSV text format. Feature columns are matched by name, so their
/// order in the header is irrelevant. Row numbers in errors are 1-based file
/// lines (the header is line 1).
pub fn dataset_from_csv(text: &str) -> Result<Dataset> {
    let schema = |row: usize, column: &str, message: String| Error::Schema {
        row,
        column: column.to_string(),
        message,
    };
    if text.trim().is_empty() {
        return Err(schema(1, "<header>", "empty file".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| schema(1, "<header>", e.to_string()))?
        .clone();

    let mut features: Vec<(usize, usize)> = Vec::new();
    let (mut group_col, mut true_col, mut observed_col) = (None, None, None);
    for (col, name) in headers.iter().enumerate() {
        let name = name.trim();
        match name {
            GROUP => group_col = Some(col),
            TRUE_LABEL => true_col = Some(col),
            OBSERVED_LABEL => observed_col = Some(col),
            _ => {
                let index = name
                    .strip_prefix("feature_")
                    .and_then(|k| k.parse::<usize>().ok())
                    .ok_or_else(|| schema(1, name, "unknown column".into()))?;
                features.push((index, col));
            }
        }
    }
    let required = |col: Option<usize>, name: &str| {
        col.ok_or_else(|| schema(1, name, "missing column".into()))
    };
    let group_col = required(group_col, GROUP)?;
    let true_col = required(true_col, TRUE_LABEL)?;
    let observed_col = required(observed_col, OBSERVED_LABEL)?;
    features.sort_unstable();
    if features.is_empty() {
        return Err(schema(1, "feature_0", "missing column".into()));
    }
    for (expected, &(index, _)) in features.iter().enumerate() {
        if index != expected {
            return Err(schema(1, &format!("feature_{expected}"), "missing column".into()));
        }
    }

    let mut samples = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| schema(row, "<record>", e.to_string()))?;
        let field = |col: usize| record.get(col).unwrap_or("").trim();
        let mut x = Vec::with_capacity(features.len());
        for &(index, col) in &features {
            let name = format!("feature_{index}");
            let v: f64 = field(col)
                .parse()
                .map_err(|_| schema(row, &name, format!("non-numeric value `{}`", field(col))))?;
            if !v.is_finite() {
                return Err(schema(row, &name, format!("non-finite value `{}`", field(col))));
            }
            x.push(v);
        }
        let binary = |col: usize, name: &str| match field(col) {
            "0" => Ok(0u8),
            "1" => Ok(1u8),
            other => Err(schema(row, name, format!("expected 0 or 1, got `{other}`"))),
        };
        samples.push(Sample {
            features: x,
            group: binary(group_col, GROUP)?,
            true_label: binary(true_col, TRUE_LABEL)?,
            observed_label: binary(observed_col, OBSERVED_LABEL)?,
        });
    }
    if samples.is_empty() {
        return Err(schema(2, "<record>", "no data rows".into()));
    }
    Ok(Dataset::new(samples))
}

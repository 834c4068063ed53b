//! Group-targeted underdiagnosis: truly positive members of one group have
//! their observed label flipped to negative.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::seeding;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub target_group: u8,
    /// Fraction of truly positive target-group samples to mislabel.
    pub rate: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(target_group: u8, rate: f64, seed: u64) -> Self {
        NoiseSpec {
            target_group,
            rate,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_group > 1 {
            return Err(Error::domain(format!(
                "target_group must be 0 or 1, got {}",
                self.target_group
            )));
        }
        if !(self.rate.is_finite() && (0.0..=1.0).contains(&self.rate)) {
            return Err(Error::domain(format!("rate must lie in [0, 1], got {}", self.rate)));
        }
        Ok(())
    }

    /// Scales a clean positive-class probability for `group` the way the
    /// corruption does in expectation.
    pub fn scale_positive(&self, group: u8, p_positive: f64) -> f64 {
        if group == self.target_group {
            (1.0 - self.rate) * p_positive
        } else {
            p_positive
        }
    }
}

/// Indices of the samples that `spec` flips, in flip order.
///
/// The eligible samples are permuted once with the spec seed and a prefix of
/// length `round(rate * N+)` is taken, so for a fixed seed the flip set at a
/// lower rate is always a subset of the flip set at a higher rate.
pub fn flip_indices(dataset: &Dataset, spec: &NoiseSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    if dataset.is_empty() {
        return Err(Error::domain("cannot inject noise into an empty dataset"));
    }
    let mut eligible: Vec<usize> = dataset
        .samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.group == spec.target_group && s.true_label == 1)
        .map(|(i, _)| i)
        .collect();
    if eligible.is_empty() {
        if spec.rate > 0.0 {
            return Err(Error::DegenerateTarget(format!(
                "group {} has no truly positive samples to mislabel",
                spec.target_group
            )));
        }
        return Ok(Vec::new());
    }
    let count = (spec.rate * eligible.len() as f64).round() as usize;
    let mut rng = seeding::rng(spec.seed);
    eligible.shuffle(&mut rng);
    eligible.truncate(count);
    Ok(eligible)
}

/// Returns a copy of `dataset` with underdiagnosis injected.
pub fn inject_underdiagnosis(dataset: &Dataset, spec: &NoiseSpec) -> Result<Dataset> {
    let flips = flip_indices(dataset, spec)?;
    let mut out = dataset.clone();
    for i in flips {
        out.samples[i].observed_label = 0;
    }
    Ok(out)
}

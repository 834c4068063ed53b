//! Closed-form Bayes posteriors under a [`PopulationSpec`], clean and with
//! underdiagnosis applied, plus Monte-Carlo true-positive rates for the two
//! limiting learning regimes.
//!
//! The *separable* regime assumes a model that learns one mapping per group
//! and thresholds `P_tr(y+ | x, a)` using the individual's own group. The
//! *pooled* regime assumes a model that cannot tell the groups apart and
//! thresholds the group-marginalised `P_tr(y+ | x)`.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::biasinject::NoiseSpec;
use crate::datagen::{Dataset, PopulationSpec};
use crate::error::{Error, Result};
use crate::metrics::roc_auc;
use crate::seeding;

pub const MIN_MC_SAMPLES: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosteriorBundle {
    /// P(a = 1 | x).
    pub p_group: f64,
    /// P(y+ | x, a) for a = 0, 1.
    pub p_class_given_group: [f64; 2],
    /// P(y+ | x).
    pub p_class: f64,
}

impl PosteriorBundle {
    /// P(a | x) for both groups.
    pub fn group_weights(&self) -> [f64; 2] {
        [1.0 - self.p_group, self.p_group]
    }

    /// Recombines the group-wise mappings with the group posterior.
    pub fn mixture(&self) -> f64 {
        let w = self.group_weights();
        self.p_class_given_group[0] * w[0] + self.p_class_given_group[1] * w[1]
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log P(a, y, x)` up to the shared Gaussian normalizer, indexed `[a][y]`.
fn log_joint(spec: &PopulationSpec, x: &[f64]) -> [[f64; 2]; 2] {
    let two_var = 2.0 * spec.noise_scale * spec.noise_scale;
    let mut out = [[0.0; 2]; 2];
    for a in 0..2u8 {
        let p_a = if a == 1 { spec.group_prior } else { 1.0 - spec.group_prior };
        for y in 0..2u8 {
            let p_y = if y == 1 {
                spec.class_prior[a as usize]
            } else {
                1.0 - spec.class_prior[a as usize]
            };
            let mean = spec.cell_mean(a, y);
            let dist2: f64 = x.iter().zip(&mean).map(|(xi, mi)| (xi - mi).powi(2)).sum();
            out[a as usize][y as usize] = p_a.ln() + p_y.ln() - dist2 / two_var;
        }
    }
    out
}

fn check_dim(spec: &PopulationSpec, x: &[f64]) -> Result<()> {
    if x.len() != spec.dim {
        return Err(Error::domain(format!(
            "point has dimension {}, population has dim {}",
            x.len(),
            spec.dim
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("point has non-finite coordinates"));
    }
    Ok(())
}

fn posteriors_unchecked(spec: &PopulationSpec, x: &[f64]) -> PosteriorBundle {
    let l = log_joint(spec, x);
    let total = log_sum_exp(&[l[0][0], l[0][1], l[1][0], l[1][1]]);
    PosteriorBundle {
        p_group: (log_sum_exp(&l[1]) - total).exp().clamp(0.0, 1.0),
        p_class_given_group: [logistic(l[0][1] - l[0][0]), logistic(l[1][1] - l[1][0])],
        p_class: (log_sum_exp(&[l[0][1], l[1][1]]) - total).exp().clamp(0.0, 1.0),
    }
}

/// Exact clean posteriors at `x`.
pub fn posteriors(spec: &PopulationSpec, x: &[f64]) -> Result<PosteriorBundle> {
    spec.validate()?;
    check_dim(spec, x)?;
    Ok(posteriors_unchecked(spec, x))
}

fn apply_noise(clean: PosteriorBundle, noise: &NoiseSpec) -> PosteriorBundle {
    let mut biased = clean;
    for a in 0..2u8 {
        biased.p_class_given_group[a as usize] =
            noise.scale_positive(a, clean.p_class_given_group[a as usize]);
    }
    // Corruption leaves x and a untouched, so P_tr(a | x) = P(a | x).
    biased.p_class = biased.mixture().clamp(0.0, 1.0);
    biased
}

/// Posteriors of the training distribution after underdiagnosis.
pub fn biased_posteriors(
    spec: &PopulationSpec,
    noise: &NoiseSpec,
    x: &[f64],
) -> Result<PosteriorBundle> {
    noise.validate()?;
    Ok(apply_noise(posteriors(spec, x)?, noise))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Separable,
    Pooled,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Separable => "separable",
            Regime::Pooled => "pooled",
        })
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "separable" => Ok(Regime::Separable),
            "pooled" => Ok(Regime::Pooled),
            other => Err(Error::domain(format!("unknown regime `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TprEstimate {
    pub tpr: f64,
    pub std_error: f64,
    pub n_mc: usize,
}

/// Monte-Carlo estimate of the fraction of truly positive members of `group`
/// whose regime-appropriate training posterior exceeds `threshold`.
pub fn theoretical_tpr(
    spec: &PopulationSpec,
    noise: Option<&NoiseSpec>,
    regime: Regime,
    group: u8,
    threshold: f64,
    n_mc: usize,
    seed: u64,
) -> Result<TprEstimate> {
    spec.validate()?;
    if let Some(noise) = noise {
        noise.validate()?;
    }
    if group > 1 {
        return Err(Error::domain(format!("group must be 0 or 1, got {group}")));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::domain(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    if n_mc < MIN_MC_SAMPLES {
        return Err(Error::domain(format!("n_mc must be at least {MIN_MC_SAMPLES}")));
    }
    let mean = spec.cell_mean(group, 1);
    let mut rng = seeding::rng(seed);
    let mut x = vec![0.0; spec.dim];
    let mut hits = 0usize;
    for _ in 0..n_mc {
        for (xi, mi) in x.iter_mut().zip(&mean) {
            let eps: f64 = rng.sample(StandardNormal);
            *xi = mi + spec.noise_scale * eps;
        }
        let clean = posteriors_unchecked(spec, &x);
        let bundle = match noise {
            Some(noise) => apply_noise(clean, noise),
            None => clean,
        };
        let score = match regime {
            Regime::Separable => bundle.p_class_given_group[group as usize],
            Regime::Pooled => bundle.p_class,
        };
        if score > threshold {
            hits += 1;
        }
    }
    let tpr = hits as f64 / n_mc as f64;
    Ok(TprEstimate {
        tpr,
        std_error: (tpr * (1.0 - tpr) / n_mc as f64).sqrt(),
        n_mc,
    })
}

/// AUC of the Bayes group posterior on a dataset drawn from `spec`.
pub fn bayes_group_auc(spec: &PopulationSpec, dataset: &Dataset) -> Result<f64> {
    spec.validate()?;
    let mut scores = Vec::with_capacity(dataset.len());
    for s in &dataset.samples {
        check_dim(spec, &s.features)?;
        scores.push(posteriors_unchecked(spec, &s.features).p_group);
    }
    roc_auc(&scores, &dataset.groups())
}

/// AUC of the Bayes class posterior `P(y+ | x)` against the true labels.
pub fn bayes_class_auc(spec: &PopulationSpec, dataset: &Dataset) -> Result<f64> {
    spec.validate()?;
    let mut scores = Vec::with_capacity(dataset.len());
    for s in &dataset.samples {
        check_dim(spec, &s.features)?;
        scores.push(posteriors_unchecked(spec, &s.features).p_class);
    }
    roc_auc(&scores, &dataset.true_labels())
}

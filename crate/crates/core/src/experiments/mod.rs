//! Seeded sweeps over separability levels: the group-separability audit, the
//! clean-versus-biased degradation experiment, the noise-rate ablation and
//! the SPLIT probe experiment.
//!
//! Every (level, seed) cell draws its data and model seeds from
//! `derive_seed(master_seed, [level, seed_index])`, so cells can run in any
//! order or in parallel and still produce identical records. The clean and
//! biased arms of a cell share the training set and the model seed; they
//! differ only in the injected labels.

mod persist;
mod report;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use persist::{load_run, persist_run, ResultRow, PLOT_DIR};
pub use report::render_report;

use crate::biasinject::{inject_underdiagnosis, NoiseSpec};
use crate::datagen::{load_dataset_csv, sample_population, Dataset, PopulationSpec, MIN_SAMPLES};
use crate::error::{Error, Result};
use crate::learner::{
    evaluate, holdout_split, split_probe_with_holdout, train_classifier, Arch, BatchSize, Model, Target,
    TrainConfig,
};
use crate::metrics::{slice_metrics, GroupMetrics};
use crate::seeding::{derive_seed, tag};
use crate::stats::{adjust_holm, kendall_tau, mann_whitney_u, Alternative, TestResult, TestRow};

pub const SCHEMA_VERSION: u32 = 1;

/// Allowed excess of a SPLIT AUC over the same-data separability AUC.
pub const CEILING_SLACK: f64 = 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Audit,
    Degradation,
    Ablation,
    Split,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::Audit => "audit",
            ExperimentKind::Degradation => "degradation",
            ExperimentKind::Ablation => "ablation",
            ExperimentKind::Split => "split",
        })
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "audit" => Ok(ExperimentKind::Audit),
            "degradation" => Ok(ExperimentKind::Degradation),
            "ablation" => Ok(ExperimentKind::Ablation),
            "split" => Ok(ExperimentKind::Split),
            other => Err(Error::domain(format!("unknown experiment `{other}`"))),
        }
    }
}

/// Training settings used by the experiments unless overridden.
pub fn experiment_train_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 0.2,
        patience: 20,
        batch_size: BatchSize::Size(256),
        ..TrainConfig::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Base population; its group separation is set per separability target.
    pub population: PopulationSpec,
    /// Optional real dataset used in place of the synthetic population. Its
    /// separability is measured rather than dialed.
    pub data_csv: Option<PathBuf>,
    pub separability_targets: Vec<f64>,
    pub noise_rates: Vec<f64>,
    pub n_train: usize,
    pub n_test: usize,
    pub n_seeds: usize,
    pub arch: Arch,
    /// The `seed` field is replaced by a per-cell seed.
    pub train_config: TrainConfig,
    pub target_group: u8,
    pub alpha: f64,
    pub threshold: f64,
    pub master_seed: u64,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            population: PopulationSpec::default(),
            data_csv: None,
            separability_targets: vec![0.55, 0.65, 0.75, 0.85, 0.92, 0.98],
            noise_rates: vec![0.25],
            n_train: 20_000,
            n_test: 10_000,
            n_seeds: 10,
            arch: Arch::Mlp,
            train_config: experiment_train_config(),
            target_group: 1,
            alpha: 0.05,
            threshold: 0.5,
            master_seed: 0,
            output_dir: None,
        }
    }
}

fn merge_json(base: &mut serde_json::Value, overlay: serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge_json(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

impl ExperimentConfig {
    /// Defaults for one experiment: the ablation sweeps seven noise rates
    /// over three seeds.
    pub fn for_kind(kind: ExperimentKind) -> Self {
        match kind {
            ExperimentKind::Ablation => ExperimentConfig {
                noise_rates: vec![0.0, 0.1, 0.2, 0.25, 0.3, 0.4, 0.5],
                n_seeds: 3,
                ..ExperimentConfig::default()
            },
            _ => ExperimentConfig::default(),
        }
    }

    /// Parses a (possibly partial) JSON config on top of the defaults for
    /// `kind`. Nested objects are merged key by key.
    pub fn from_json_with_defaults(text: &str, kind: ExperimentKind) -> Result<Self> {
        let overlay: serde_json::Value = serde_json::from_str(text)?;
        if !overlay.is_object() {
            return Err(Error::domain("experiment config must be a JSON object"));
        }
        let mut merged = serde_json::to_value(ExperimentConfig::for_kind(kind))?;
        merge_json(&mut merged, overlay);
        Ok(serde_json::from_value(merged)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::domain(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.population.validate()?;
        self.train_config.validate()?;
        if self.data_csv.is_none() {
            if self.separability_targets.is_empty() {
                return Err(Error::domain("separability_targets must be nonempty"));
            }
            if let Some(t) = self.separability_targets.iter().find(|t| !(0.5..1.0).contains(*t)) {
                return Err(Error::domain(format!("separability targets must lie in [0.5, 1), got {t}")));
            }
        }
        if self.noise_rates.is_empty() {
            return Err(Error::domain("noise_rates must be nonempty"));
        }
        if let Some(r) = self.noise_rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::domain(format!("noise rates must lie in [0, 1], got {r}")));
        }
        if self.n_train < MIN_SAMPLES || self.n_test < MIN_SAMPLES {
            return Err(Error::domain(format!("n_train and n_test must be at least {MIN_SAMPLES}")));
        }
        if self.n_seeds == 0 {
            return Err(Error::domain("n_seeds must be positive"));
        }
        if self.target_group > 1 {
            return Err(Error::domain("target_group must be 0 or 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::domain(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::domain(format!("threshold must lie in (0, 1), got {}", self.threshold)));
        }
        Ok(())
    }

    pub fn validate_for(&self, kind: ExperimentKind) -> Result<()> {
        self.validate()?;
        match kind {
            ExperimentKind::Audit => {}
            ExperimentKind::Degradation => {
                if self.n_seeds < 2 {
                    return Err(Error::domain("significance testing needs n_seeds >= 2"));
                }
                if self.noise_rates.len() != 1 {
                    return Err(Error::domain("the degradation experiment takes exactly one noise rate"));
                }
            }
            ExperimentKind::Ablation => {
                let mut rates = self.noise_rates.clone();
                rates.sort_by(f64::total_cmp);
                rates.dedup();
                if rates.len() < 3 {
                    return Err(Error::domain("the noise ablation needs at least 3 distinct noise rates"));
                }
            }
            ExperimentKind::Split => {
                if self.arch != Arch::Mlp {
                    return Err(Error::UnsupportedArchitecture(
                        "the SPLIT experiment needs arch = mlp to expose a representation".into(),
                    ));
                }
                if self.noise_rates.len() != 1 {
                    return Err(Error::domain("the SPLIT experiment takes exactly one noise rate"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Clean,
    Biased,
    /// Group classifier trained on the inputs.
    Audit,
    ProbeClean,
    ProbeBiased,
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arm::Clean => "clean",
            Arm::Biased => "biased",
            Arm::Audit => "audit",
            Arm::ProbeClean => "probe_clean",
            Arm::ProbeBiased => "probe_biased",
        })
    }
}

/// Metrics of one evaluation slice: `0`, `1` or `all`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    pub group: String,
    pub metrics: GroupMetrics,
}

/// One trained model evaluated on the clean test split of its cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub config_fingerprint: String,
    pub level: usize,
    pub separability: f64,
    pub rho: f64,
    pub arm: Arm,
    pub seed_index: usize,
    pub seed: u64,
    pub threshold: f64,
    pub slices: Vec<Slice>,
    pub duration_ms: f64,
}

impl RunRecord {
    pub fn slice(&self, group: &str) -> Option<&GroupMetrics> {
        self.slices.iter().find(|s| s.group == group).map(|s| &s.metrics)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    Tpr,
}

impl Metric {
    pub fn of(self, m: &GroupMetrics) -> Option<f64> {
        match self {
            Metric::Accuracy => m.accuracy,
            Metric::Tpr => m.tpr,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Accuracy => "accuracy",
            Metric::Tpr => "tpr",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub level: usize,
    pub separability_target: f64,
    pub auc_mean: f64,
    pub auc_sd: f64,
    pub n_seeds: usize,
}

/// Degradation of one metric for one slice at one level; `group` is `0`,
/// `1`, `all`, or `between` for the target-versus-other group comparison of
/// per-seed deltas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationRow {
    pub comparison_id: String,
    pub separability: f64,
    pub rho: f64,
    pub group: String,
    pub metric: Metric,
    /// Biased minus clean, percentage points.
    pub delta_mean: f64,
    pub delta_sd: f64,
    pub n_seeds: usize,
    pub statistic: f64,
    pub p: f64,
    pub p_adj: Option<f64>,
    pub significant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub separability: f64,
    pub rho: f64,
    pub group: String,
    pub metric: Metric,
    pub delta_mean: f64,
    pub delta_sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRow {
    pub level: usize,
    pub separability_target: f64,
    /// Same-data group classifier AUC, mean over seeds.
    pub separability_auc: f64,
    pub clean_split_auc: f64,
    pub biased_split_auc: f64,
    /// Largest SPLIT AUC minus same-data separability AUC over seeds and arms.
    pub max_excess: f64,
}

/// A Kendall association test between per-level means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssociationRow {
    pub comparison_id: String,
    pub label: String,
    pub n_points: usize,
    pub tau: f64,
    pub p: f64,
    pub significant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub experiment: ExperimentKind,
    pub config_fingerprint: String,
    pub results_rows: usize,
    pub tests_rows: usize,
    pub holm_family: Option<String>,
    pub total_duration_ms: f64,
    pub run_durations_ms: std::collections::BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub audit: Vec<AuditRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degradation: Vec<DegradationRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ablation: Vec<AblationRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub split: Vec<SplitRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub associations: Vec<AssociationRow>,
}

/// Everything one experiment invocation produces.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub experiment: ExperimentKind,
    pub config: ExperimentConfig,
    pub records: Vec<RunRecord>,
    pub tests: Vec<TestRow>,
    pub summary: Summary,
}

#[derive(Clone, Debug)]
struct Level {
    index: usize,
    separability: f64,
    target: Option<f64>,
}

struct Context<'a> {
    kind: ExperimentKind,
    config: &'a ExperimentConfig,
    fingerprint: String,
    levels: Vec<Level>,
    base: Option<Dataset>,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

impl<'a> Context<'a> {
    fn new(kind: ExperimentKind, config: &'a ExperimentConfig) -> Result<Self> {
        config.validate_for(kind)?;
        let (levels, base) = match &config.data_csv {
            None => (
                config
                    .separability_targets
                    .iter()
                    .enumerate()
                    .map(|(index, &t)| Level {
                        index,
                        separability: t,
                        target: Some(t),
                    })
                    .collect(),
                None,
            ),
            Some(path) => {
                let data = load_dataset_csv(path)?;
                data.require_cells()?;
                let separability = measure_separability(config, &data)?;
                (
                    vec![Level {
                        index: 0,
                        separability,
                        target: None,
                    }],
                    Some(data),
                )
            }
        };
        Ok(Context {
            kind,
            config,
            fingerprint: config.fingerprint(),
            levels,
            base,
        })
    }

    fn cell_seed(&self, level: &Level, seed_index: usize) -> u64 {
        derive_seed(self.config.master_seed, &[level.index as u64, seed_index as u64])
    }

    fn model_config(&self, cell: u64, role: &str) -> TrainConfig {
        self.config.train_config.with_seed(derive_seed(cell, &[tag(role)]))
    }

    fn noise(&self, cell: u64, rho: f64) -> NoiseSpec {
        NoiseSpec::new(self.config.target_group, rho, derive_seed(cell, &[tag("noise")]))
    }

    /// Pre-injection training set and clean test set of a cell.
    fn cell_data(&self, level: &Level, seed_index: usize) -> Result<(Dataset, Dataset)> {
        let cell = self.cell_seed(level, seed_index);
        let c = self.config;
        let (train, test) = match (&self.base, level.target) {
            (Some(base), _) => {
                let fraction = c.n_test as f64 / (c.n_train + c.n_test) as f64;
                let (tr, te) = holdout_split(base.len(), fraction, derive_seed(cell, &[tag("split")]))?;
                (base.select(&tr), base.select(&te))
            }
            (None, Some(target)) => {
                let spec = c.population.clone().with_separability(target)?;
                (
                    sample_population(&spec, c.n_train, derive_seed(cell, &[tag("train")]))?,
                    sample_population(&spec, c.n_test, derive_seed(cell, &[tag("test")]))?,
                )
            }
            (None, None) => unreachable!("synthetic levels carry a target"),
        };
        if !test.is_clean() {
            return Err(Error::domain("evaluation split contains corrupted labels"));
        }
        Ok((train, test))
    }

    fn record(
        &self,
        level: &Level,
        seed_index: usize,
        arm: Arm,
        rho: f64,
        slices: Vec<Slice>,
        started: Instant,
    ) -> RunRecord {
        let mut run_id = format!("{}/L{}/S{}/{arm}", self.kind, level.index, seed_index);
        if self.kind == ExperimentKind::Ablation && arm == Arm::Biased {
            run_id.push_str(&format!("/rho={rho}"));
        }
        RunRecord {
            run_id,
            config_fingerprint: self.fingerprint.clone(),
            level: level.index,
            separability: level.separability,
            rho,
            arm,
            seed_index,
            seed: self.cell_seed(level, seed_index),
            threshold: self.config.threshold,
            slices,
            duration_ms: elapsed_ms(started),
        }
    }

    fn disease_record(
        &self,
        level: &Level,
        seed_index: usize,
        arm: Arm,
        rho: f64,
        model: &Model,
        test: &Dataset,
        started: Instant,
    ) -> Result<RunRecord> {
        let report = evaluate(model, test, self.config.threshold)?;
        let [g0, g1] = report.groups;
        let slices = vec![
            Slice { group: "0".into(), metrics: g0 },
            Slice { group: "1".into(), metrics: g1 },
            Slice { group: "all".into(), metrics: report.overall },
        ];
        Ok(self.record(level, seed_index, arm, rho, slices, started))
    }

    /// Runs `f` on every (level, seed) cell, in parallel, keeping cell order.
    fn cells<T: Send>(&self, f: impl Fn(&Level, usize) -> Result<T> + Sync) -> Result<Vec<T>> {
        let cells: Vec<(usize, usize)> = (0..self.levels.len())
            .flat_map(|l| (0..self.config.n_seeds).map(move |s| (l, s)))
            .collect();
        cells
            .par_iter()
            .map(|&(l, s)| {
                let level = &self.levels[l];
                f(level, s).map_err(|e| e.within(format!("separability {}, seed {s}", level.separability)))
            })
            .collect()
    }

    fn output(
        &self,
        records: Vec<RunRecord>,
        tests: Vec<TestRow>,
        mut summary: Summary,
        started: Instant,
    ) -> RunOutput {
        summary.results_rows = records.iter().map(|r| r.slices.len()).sum();
        summary.tests_rows = tests.len();
        summary.total_duration_ms = elapsed_ms(started);
        summary.run_durations_ms = records.iter().map(|r| (r.run_id.clone(), r.duration_ms)).collect();
        RunOutput {
            experiment: self.kind,
            config: self.config.clone(),
            records,
            tests,
            summary,
        }
    }

    fn empty_summary(&self) -> Summary {
        Summary {
            schema_version: SCHEMA_VERSION,
            experiment: self.kind,
            config_fingerprint: self.fingerprint.clone(),
            results_rows: 0,
            tests_rows: 0,
            holm_family: None,
            total_duration_ms: 0.0,
            run_durations_ms: Default::default(),
            audit: Vec::new(),
            degradation: Vec::new(),
            ablation: Vec::new(),
            split: Vec::new(),
            associations: Vec::new(),
        }
    }
}

/// Test AUC of a group classifier on a seeded split of a real dataset.
fn measure_separability(config: &ExperimentConfig, data: &Dataset) -> Result<f64> {
    let seed = derive_seed(config.master_seed, &[tag("measure")]);
    let (tr, te) = holdout_split(data.len(), 0.3, seed)?;
    let model = train_classifier(&data.select(&tr), Target::Group, config.arch, &config.train_config.with_seed(seed))?;
    let test = data.select(&te);
    Ok(group_classifier_metrics(&model, &test, config.threshold)?
        .auc
        .unwrap_or(0.5))
}

fn group_classifier_metrics(model: &Model, test: &Dataset, threshold: f64) -> Result<GroupMetrics> {
    let scores = model.score_dataset(test)?;
    let preds: Vec<u8> = scores.iter().map(|&s| u8::from(s > threshold)).collect();
    slice_metrics(&preds, &scores, &test.groups())
}

/// Per-seed values of `metric` on slice `group` for the matching records.
fn seed_values(
    records: &[RunRecord],
    level: usize,
    arm: Arm,
    rho: Option<f64>,
    group: &str,
    metric: Metric,
) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = records
        .iter()
        .filter(|r| r.level == level && r.arm == arm && rho.is_none_or(|x| r.rho == x))
        .filter_map(|r| Some((r.seed_index, metric.of(r.slice(group)?)?)))
        .collect();
    out.sort_by_key(|&(s, _)| s);
    out
}

/// Per-seed biased-minus-clean deltas in percentage points.
fn seed_deltas(records: &[RunRecord], level: usize, rho: f64, group: &str, metric: Metric) -> Vec<(usize, f64)> {
    let clean = seed_values(records, level, Arm::Clean, None, group, metric);
    let biased = seed_values(records, level, Arm::Biased, Some(rho), group, metric);
    biased
        .iter()
        .filter_map(|&(s, b)| {
            let c = clean.iter().find(|&&(cs, _)| cs == s)?.1;
            Some((s, 100.0 * (b - c)))
        })
        .collect()
}

fn values(pairs: &[(usize, f64)]) -> Vec<f64> {
    pairs.iter().map(|&(_, v)| v).collect()
}

fn fmt_level(x: f64) -> String {
    format!("{x}")
}

/// Trains `n_seeds` group classifiers per separability level and reports
/// the mean and standard deviation of their test AUC, sorted ascending.
pub fn run_separability_audit(config: &ExperimentConfig) -> Result<RunOutput> {
    let started = Instant::now();
    let ctx = Context::new(ExperimentKind::Audit, config)?;
    let records = ctx.cells(|level, s| {
        let t0 = Instant::now();
        let (train, test) = ctx.cell_data(level, s)?;
        let cell = ctx.cell_seed(level, s);
        let model = train_classifier(&train, Target::Group, config.arch, &ctx.model_config(cell, "audit"))?;
        let m = group_classifier_metrics(&model, &test, config.threshold)?;
        Ok(ctx.record(level, s, Arm::Audit, 0.0, vec![Slice { group: "all".into(), metrics: m }], t0))
    })?;
    let mut summary = ctx.empty_summary();
    summary.audit = audit_rows(&ctx.levels, &records);
    Ok(ctx.output(records, Vec::new(), summary, started))
}

fn audit_rows(levels: &[Level], records: &[RunRecord]) -> Vec<AuditRow> {
    let mut rows: Vec<AuditRow> = levels
        .iter()
        .map(|level| {
            let aucs: Vec<f64> = records
                .iter()
                .filter(|r| r.level == level.index && r.arm == Arm::Audit)
                .filter_map(|r| r.slice("all")?.auc)
                .collect();
            let (auc_mean, auc_sd) = mean_sd(&aucs);
            AuditRow {
                level: level.index,
                separability_target: level.separability,
                auc_mean,
                auc_sd,
                n_seeds: aucs.len(),
            }
        })
        .collect();
    rows.sort_by(|a, b| a.auc_mean.total_cmp(&b.auc_mean).then(a.level.cmp(&b.level)));
    rows
}

/// Trains clean-arm and biased-arm disease models per (level, seed), tests
/// every group's degradation with one-sided Mann-Whitney tests and the
/// target-versus-other difference of deltas with a two-sided test, and
/// Holm-adjusts all of them as one family.
pub fn run_degradation_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    let started = Instant::now();
    let ctx = Context::new(ExperimentKind::Degradation, config)?;
    let rho = config.noise_rates[0];
    let records: Vec<RunRecord> = ctx
        .cells(|level, s| {
            let (train, test) = ctx.cell_data(level, s)?;
            let cell = ctx.cell_seed(level, s);
            let model_config = ctx.model_config(cell, "model");
            let t0 = Instant::now();
            let clean = train_classifier(&train, Target::ObservedLabel, config.arch, &model_config)?;
            let clean = ctx.disease_record(level, s, Arm::Clean, 0.0, &clean, &test, t0)?;
            let t0 = Instant::now();
            let biased_data = inject_underdiagnosis(&train, &ctx.noise(cell, rho))?;
            let biased = train_classifier(&biased_data, Target::ObservedLabel, config.arch, &model_config)?;
            let biased = ctx.disease_record(level, s, Arm::Biased, rho, &biased, &test, t0)?;
            Ok([clean, biased])
        })?
        .into_iter()
        .flatten()
        .collect();
    let (rows, tests) = degradation_tests(&ctx, &records, rho)?;
    let mut summary = ctx.empty_summary();
    summary.holm_family = Some(format!(
        "all {} group-level comparisons of this invocation",
        tests.len()
    ));
    summary.degradation = rows;
    Ok(ctx.output(records, tests, summary, started))
}

fn degradation_tests(ctx: &Context, records: &[RunRecord], rho: f64) -> Result<(Vec<DegradationRow>, Vec<TestRow>)> {
    let target = ctx.config.target_group.to_string();
    let other = (1 - ctx.config.target_group).to_string();
    let mut rows = Vec::new();
    let mut results: Vec<TestResult> = Vec::new();
    for level in &ctx.levels {
        for metric in [Metric::Accuracy, Metric::Tpr] {
            for group in ["0", "1", "all"] {
                let clean = values(&seed_values(records, level.index, Arm::Clean, None, group, metric));
                let biased = values(&seed_values(records, level.index, Arm::Biased, Some(rho), group, metric));
                let deltas = values(&seed_deltas(records, level.index, rho, group, metric));
                if clean.is_empty() || biased.is_empty() {
                    continue;
                }
                let test = mann_whitney_u(&biased, &clean, Alternative::Less)?.at_alpha(ctx.config.alpha);
                rows.push(degradation_row(level, rho, group, metric, &deltas, &test));
                results.push(test);
            }
            let d_target = values(&seed_deltas(records, level.index, rho, &target, metric));
            let d_other = values(&seed_deltas(records, level.index, rho, &other, metric));
            if d_target.is_empty() || d_other.is_empty() {
                continue;
            }
            let test = mann_whitney_u(&d_target, &d_other, Alternative::TwoSided)?.at_alpha(ctx.config.alpha);
            let diffs: Vec<f64> = d_target.iter().zip(&d_other).map(|(a, b)| a - b).collect();
            rows.push(degradation_row(level, rho, "between", metric, &diffs, &test));
            results.push(test);
        }
    }
    adjust_holm(&mut results)?;
    let mut tests = Vec::with_capacity(rows.len());
    for (row, r) in rows.iter_mut().zip(&results) {
        row.p_adj = r.adjusted_p;
        row.significant = r.significant;
        tests.push(TestRow::new(row.comparison_id.clone(), r));
    }
    Ok((rows, tests))
}

fn degradation_row(level: &Level, rho: f64, group: &str, metric: Metric, deltas: &[f64], test: &TestResult) -> DegradationRow {
    let (delta_mean, delta_sd) = mean_sd(deltas);
    DegradationRow {
        comparison_id: format!(
            "degradation/sep={}/rho={rho}/group={group}/{metric}",
            fmt_level(level.separability)
        ),
        separability: level.separability,
        rho,
        group: group.to_string(),
        metric,
        delta_mean,
        delta_sd,
        n_seeds: deltas.len(),
        statistic: test.statistic,
        p: test.p_value,
        p_adj: test.adjusted_p,
        significant: test.significant,
    }
}

/// Sweeps every noise rate at every separability level. Flip sets are
/// nested across rates because each cell permutes its positives once. For
/// each rate, Kendall's tau relates separability to the mean target-group
/// accuracy delta.
pub fn run_noise_ablation(config: &ExperimentConfig) -> Result<RunOutput> {
    let started = Instant::now();
    let ctx = Context::new(ExperimentKind::Ablation, config)?;
    let mut rates = config.noise_rates.clone();
    rates.sort_by(f64::total_cmp);
    rates.dedup();
    let records: Vec<RunRecord> = ctx
        .cells(|level, s| {
            let (train, test) = ctx.cell_data(level, s)?;
            let cell = ctx.cell_seed(level, s);
            let model_config = ctx.model_config(cell, "model");
            let t0 = Instant::now();
            let clean_model = train_classifier(&train, Target::ObservedLabel, config.arch, &model_config)?;
            let clean = ctx.disease_record(level, s, Arm::Clean, 0.0, &clean_model, &test, t0)?;
            let mut out = vec![clean];
            for &rho in &rates {
                let t0 = Instant::now();
                let biased = if rho == 0.0 {
                    clean_model.clone()
                } else {
                    let data = inject_underdiagnosis(&train, &ctx.noise(cell, rho))?;
                    train_classifier(&data, Target::ObservedLabel, config.arch, &model_config)?
                };
                out.push(ctx.disease_record(level, s, Arm::Biased, rho, &biased, &test, t0)?);
            }
            Ok(out)
        })?
        .into_iter()
        .flatten()
        .collect();

    let mut summary = ctx.empty_summary();
    let target = ctx.config.target_group.to_string();
    let mut tests = Vec::new();
    for &rho in &rates {
        for level in &ctx.levels {
            for metric in [Metric::Accuracy, Metric::Tpr] {
                for group in ["0", "1", "all"] {
                    let deltas = values(&seed_deltas(&records, level.index, rho, group, metric));
                    if deltas.is_empty() {
                        continue;
                    }
                    let (delta_mean, delta_sd) = mean_sd(&deltas);
                    summary.ablation.push(AblationRow {
                        separability: level.separability,
                        rho,
                        group: group.to_string(),
                        metric,
                        delta_mean,
                        delta_sd,
                    });
                }
            }
        }
        let points: Vec<(f64, f64)> = summary
            .ablation
            .iter()
            .filter(|r| r.rho == rho && r.group == target && r.metric == Metric::Accuracy)
            .map(|r| (r.separability, r.delta_mean))
            .collect();
        let id = format!("ablation/rho={rho}/kendall/group={target}/accuracy");
        if let Some((assoc, row)) = association(&id, &format!("rho={rho}"), &points, ctx.config.alpha)? {
            summary.associations.push(assoc);
            tests.push(row);
        }
    }
    Ok(ctx.output(records, tests, summary, started))
}

/// Kendall test over `(x, y)` points; `None` when either coordinate is
/// constant or fewer than two points exist.
fn association(id: &str, label: &str, points: &[(f64, f64)], alpha: f64) -> Result<Option<(AssociationRow, TestRow)>> {
    if points.len() < 2 {
        return Ok(None);
    }
    let x: Vec<f64> = points.iter().map(|p| p.0).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let r = match kendall_tau(&x, &y) {
        Ok(r) => r.at_alpha(alpha),
        Err(Error::DegenerateLabels(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    Ok(Some((
        AssociationRow {
            comparison_id: id.to_string(),
            label: label.to_string(),
            n_points: points.len(),
            tau: r.statistic,
            p: r.p_value,
            significant: r.significant,
        },
        TestRow::new(id, &r),
    )))
}

/// Trains clean and biased disease models and a same-data group classifier
/// per (level, seed), then probes both disease backbones for group
/// information and relates probe AUC to separability.
pub fn run_split_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    let started = Instant::now();
    let ctx = Context::new(ExperimentKind::Split, config)?;
    let rho = config.noise_rates[0];
    let records: Vec<RunRecord> = ctx
        .cells(|level, s| {
            let (train, test) = ctx.cell_data(level, s)?;
            let cell = ctx.cell_seed(level, s);
            let model_config = ctx.model_config(cell, "model");
            let probe_config = ctx.model_config(cell, "probe");
            let mut out = Vec::with_capacity(5);

            let t0 = Instant::now();
            let audit = train_classifier(&train, Target::Group, config.arch, &ctx.model_config(cell, "audit"))?;
            let m = group_classifier_metrics(&audit, &test, config.threshold)?;
            out.push(ctx.record(level, s, Arm::Audit, 0.0, vec![Slice { group: "all".into(), metrics: m }], t0));

            let biased_data = inject_underdiagnosis(&train, &ctx.noise(cell, rho))?;
            for (arm, probe_arm, r, data) in [
                (Arm::Clean, Arm::ProbeClean, 0.0, &train),
                (Arm::Biased, Arm::ProbeBiased, rho, &biased_data),
            ] {
                let t0 = Instant::now();
                let model = train_classifier(data, Target::ObservedLabel, config.arch, &model_config)?;
                out.push(ctx.disease_record(level, s, arm, r, &model, &test, t0)?);
                let t0 = Instant::now();
                let probe = split_probe_with_holdout(&model, &train, &test, &probe_config)?;
                let scores = test
                    .samples
                    .iter()
                    .map(|x| probe.probe.score(&model.representation(&x.features)?))
                    .collect::<Result<Vec<f64>>>()?;
                let preds: Vec<u8> = scores.iter().map(|&v| u8::from(v > config.threshold)).collect();
                let m = slice_metrics(&preds, &scores, &test.groups())?;
                out.push(ctx.record(level, s, probe_arm, r, vec![Slice { group: "all".into(), metrics: m }], t0));
            }
            Ok(out)
        })?
        .into_iter()
        .flatten()
        .collect();

    let mut summary = ctx.empty_summary();
    let auc_of = |r: &RunRecord| r.slice("all").and_then(|m| m.auc);
    for level in &ctx.levels {
        let by_arm = |arm: Arm| -> Vec<(usize, f64)> {
            let mut v: Vec<(usize, f64)> = records
                .iter()
                .filter(|r| r.level == level.index && r.arm == arm)
                .filter_map(|r| Some((r.seed_index, auc_of(r)?)))
                .collect();
            v.sort_by_key(|p| p.0);
            v
        };
        let audit = by_arm(Arm::Audit);
        let clean = by_arm(Arm::ProbeClean);
        let biased = by_arm(Arm::ProbeBiased);
        let mut max_excess = f64::NEG_INFINITY;
        for probe in clean.iter().chain(&biased) {
            if let Some(&(_, a)) = audit.iter().find(|p| p.0 == probe.0) {
                max_excess = max_excess.max(probe.1 - a);
            }
        }
        summary.split.push(SplitRow {
            level: level.index,
            separability_target: level.separability,
            separability_auc: mean_sd(&values(&audit)).0,
            clean_split_auc: mean_sd(&values(&clean)).0,
            biased_split_auc: mean_sd(&values(&biased)).0,
            max_excess,
        });
    }
    let mut tests = Vec::new();
    for (label, pick) in [
        ("clean", (|r: &SplitRow| r.clean_split_auc) as fn(&SplitRow) -> f64),
        ("biased", |r: &SplitRow| r.biased_split_auc),
    ] {
        let points: Vec<(f64, f64)> = summary.split.iter().map(|r| (r.separability_auc, pick(r))).collect();
        let id = format!("split/kendall/{label}");
        if let Some((assoc, row)) = association(&id, label, &points, config.alpha)? {
            summary.associations.push(assoc);
            tests.push(row);
        }
    }
    Ok(ctx.output(records, tests, summary, started))
}

/// Dispatches to the experiment named by `kind`.
pub fn run_experiment(kind: ExperimentKind, config: &ExperimentConfig) -> Result<RunOutput> {
    match kind {
        ExperimentKind::Audit => run_separability_audit(config),
        ExperimentKind::Degradation => run_degradation_experiment(config),
        ExperimentKind::Ablation => run_noise_ablation(config),
        ExperimentKind::Split => run_split_experiment(config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(kind: ExperimentKind) -> ExperimentConfig {
        ExperimentConfig {
            separability_targets: vec![0.6, 0.95],
            n_train: 400,
            n_test: 300,
            n_seeds: 2,
            train_config: TrainConfig {
                max_epochs: 20,
                ..experiment_train_config()
            },
            ..ExperimentConfig::for_kind(kind)
        }
    }

    #[test]
    fn defaults_validate() {
        for kind in [
            ExperimentKind::Audit,
            ExperimentKind::Degradation,
            ExperimentKind::Ablation,
            ExperimentKind::Split,
        ] {
            ExperimentConfig::for_kind(kind).validate_for(kind).unwrap();
        }
        assert_eq!(ExperimentConfig::default().n_seeds, 10);
        assert_eq!(ExperimentConfig::for_kind(ExperimentKind::Ablation).n_seeds, 3);
    }

    #[test]
    fn partial_json_merges_over_kind_defaults() {
        let c = ExperimentConfig::from_json_with_defaults(
            r#"{"n_seeds": 4, "train_config": {"patience": 2}}"#,
            ExperimentKind::Ablation,
        )
        .unwrap();
        assert_eq!(c.n_seeds, 4);
        assert_eq!(c.train_config.patience, 2);
        assert_eq!(c.train_config.batch_size, BatchSize::Size(256));
        assert_eq!(c.noise_rates.len(), 7);
        assert!(ExperimentConfig::from_json_with_defaults(r#"{"n_seed": 4}"#, ExperimentKind::Audit).is_err());
        let round = ExperimentConfig::from_json_with_defaults(&c.to_json(), ExperimentKind::Audit).unwrap();
        assert_eq!(round, c);
    }

    #[test]
    fn kind_specific_validation() {
        let mut c = tiny(ExperimentKind::Split);
        c.arch = Arch::Linear;
        assert!(matches!(run_split_experiment(&c), Err(Error::UnsupportedArchitecture(_))));
        let mut c = tiny(ExperimentKind::Degradation);
        c.n_seeds = 1;
        assert!(run_degradation_experiment(&c).is_err());
        let mut c = tiny(ExperimentKind::Ablation);
        c.noise_rates = vec![0.0, 0.25, 0.25];
        assert!(run_noise_ablation(&c).is_err());
        let mut c = tiny(ExperimentKind::Audit);
        c.separability_targets = vec![1.0];
        assert!(run_separability_audit(&c).is_err());
    }

    #[test]
    fn arms_share_the_pre_injection_dataset() {
        let config = tiny(ExperimentKind::Degradation);
        let ctx = Context::new(ExperimentKind::Degradation, &config).unwrap();
        let level = &ctx.levels[1];
        let (train_a, test_a) = ctx.cell_data(level, 1).unwrap();
        let (train_b, test_b) = ctx.cell_data(level, 1).unwrap();
        assert_eq!(train_a, train_b);
        assert_eq!(test_a, test_b);
        assert!(test_a.is_clean() && train_a.is_clean());
        let (other, _) = ctx.cell_data(level, 0).unwrap();
        assert_ne!(other, train_a);
        let cell = ctx.cell_seed(level, 1);
        let biased = inject_underdiagnosis(&train_a, &ctx.noise(cell, 0.25)).unwrap();
        for (c, b) in train_a.samples.iter().zip(&biased.samples) {
            assert_eq!(c.features, b.features);
            assert_eq!(c.true_label, b.true_label);
        }
    }

    #[test]
    fn degradation_family_is_holm_adjusted() {
        let out = run_degradation_experiment(&tiny(ExperimentKind::Degradation)).unwrap();
        // 2 levels x 2 metrics x (3 slices + between)
        assert_eq!(out.tests.len(), 16);
        assert_eq!(out.records.len(), 2 * 2 * 2);
        assert_eq!(out.summary.results_rows, 24);
        let ps: Vec<f64> = out.tests.iter().map(|t| t.p).collect();
        let adj = crate::stats::holm_bonferroni(&ps).unwrap();
        for (t, a) in out.tests.iter().zip(adj) {
            assert_eq!(t.p_adj, Some(a));
            assert_eq!(t.significant, a < 0.05);
        }
    }

    #[test]
    fn zero_noise_ablation_column_is_exactly_zero() {
        let out = run_noise_ablation(&tiny(ExperimentKind::Ablation)).unwrap();
        let zero: Vec<_> = out.summary.ablation.iter().filter(|r| r.rho == 0.0).collect();
        assert!(!zero.is_empty());
        assert!(zero.iter().all(|r| r.delta_mean == 0.0));
        assert!(out.summary.associations.iter().all(|a| a.label != "rho=0"));
    }

    #[test]
    fn parallel_and_serial_runs_agree() {
        let config = tiny(ExperimentKind::Audit);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let serial = pool.install(|| run_separability_audit(&config)).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let parallel = pool.install(|| run_separability_audit(&config)).unwrap();
        let strip = |o: &RunOutput| {
            o.records
                .iter()
                .map(|r| (r.run_id.clone(), r.slices.clone()))
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&serial), strip(&parallel));
        let means: Vec<f64> = serial.summary.audit.iter().map(|r| r.auc_mean).collect();
        assert!(means.windows(2).all(|w| w[0] <= w[1]));
    }
}

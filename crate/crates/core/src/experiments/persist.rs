//! Run directories: `config.json`, `results.csv`, `tests.csv`,
//! `summary.json` and `plotdata/*.csv`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Arm, ExperimentConfig, Metric, RunOutput, RunRecord, Slice, Summary};
use crate::error::{Error, Result};
use crate::metrics::GroupMetrics;
use crate::stats::TestRow;

pub const PLOT_DIR: &str = "plotdata";

const RESULTS_HEADER: [&str; 17] = [
    "run_id",
    "level",
    "separability",
    "rho",
    "arm",
    "seed_index",
    "seed",
    "group",
    "n_pos",
    "n_neg",
    "true_positives",
    "correct",
    "predicted_positive",
    "tpr",
    "accuracy",
    "auc",
    "threshold",
];
const TESTS_HEADER: [&str; 6] = ["comparison_id", "statistic", "p", "p_adj", "method", "significant"];

/// One `results.csv` row: a single evaluation slice of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub run_id: String,
    pub level: usize,
    pub separability: f64,
    pub rho: f64,
    pub arm: Arm,
    pub seed_index: usize,
    pub seed: u64,
    pub group: String,
    pub n_pos: usize,
    pub n_neg: usize,
    pub true_positives: usize,
    pub correct: usize,
    pub predicted_positive: usize,
    pub tpr: Option<f64>,
    pub accuracy: Option<f64>,
    pub auc: Option<f64>,
    pub threshold: f64,
}

impl ResultRow {
    fn new(r: &RunRecord, s: &Slice) -> Self {
        let m = &s.metrics;
        ResultRow {
            run_id: r.run_id.clone(),
            level: r.level,
            separability: r.separability,
            rho: r.rho,
            arm: r.arm,
            seed_index: r.seed_index,
            seed: r.seed,
            group: s.group.clone(),
            n_pos: m.n_pos,
            n_neg: m.n_neg,
            true_positives: m.true_positives,
            correct: m.correct,
            predicted_positive: m.predicted_positive,
            tpr: m.tpr,
            accuracy: m.accuracy,
            auc: m.auc,
            threshold: r.threshold,
        }
    }

    fn slice(&self) -> Slice {
        Slice {
            group: self.group.clone(),
            metrics: GroupMetrics {
                n_pos: self.n_pos,
                n_neg: self.n_neg,
                true_positives: self.true_positives,
                correct: self.correct,
                predicted_positive: self.predicted_positive,
                tpr: self.tpr,
                accuracy: self.accuracy,
                auc: self.auc,
            },
        }
    }
}

fn to_csv<T: Serialize>(header: &[&str], rows: &[T]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let enc = |e: csv::Error| Error::domain(format!("csv encoding failed: {e}"));
    w.write_record(header).map_err(enc)?;
    for r in rows {
        w.serialize(r).map_err(enc)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::domain(format!("csv encoding failed: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct Fig2Row {
    separability: f64,
    group: String,
    delta_mean: f64,
    delta_sd: f64,
    p_adj: Option<f64>,
    significant: bool,
}

#[derive(Serialize)]
struct Fig3Row {
    separability: f64,
    arm: &'static str,
    split_auc: f64,
}

#[derive(Serialize)]
struct FigA1Row {
    separability: f64,
    rho: f64,
    group: String,
    delta_mean: f64,
}

/// Plot-ready CSV files for the figure analogues this run feeds.
pub(crate) fn plot_files(out: &RunOutput) -> Result<Vec<(&'static str, String)>> {
    let s = &out.summary;
    let mut files = Vec::new();
    if !s.degradation.is_empty() {
        let rows: Vec<Fig2Row> = s
            .degradation
            .iter()
            .filter(|r| r.metric == Metric::Accuracy && r.group != "between")
            .map(|r| Fig2Row {
                separability: r.separability,
                group: r.group.clone(),
                delta_mean: r.delta_mean,
                delta_sd: r.delta_sd,
                p_adj: r.p_adj,
                significant: r.significant,
            })
            .collect();
        let header = ["separability", "group", "delta_mean", "delta_sd", "p_adj", "significant"];
        files.push(("fig2_analogue.csv", to_csv(&header, &rows)?));
    }
    if !s.split.is_empty() {
        let auc = |r: &RunRecord| r.slice("all").and_then(|m| m.auc);
        let mut rows = Vec::new();
        for audit in out.records.iter().filter(|r| r.arm == Arm::Audit) {
            let Some(separability) = auc(audit) else { continue };
            for (arm, name) in [(Arm::ProbeClean, "clean"), (Arm::ProbeBiased, "biased")] {
                let probe = out
                    .records
                    .iter()
                    .find(|r| r.arm == arm && r.level == audit.level && r.seed_index == audit.seed_index);
                if let Some(split_auc) = probe.and_then(auc) {
                    rows.push(Fig3Row {
                        separability,
                        arm: name,
                        split_auc,
                    });
                }
            }
        }
        files.push(("fig3_analogue.csv", to_csv(&["separability", "arm", "split_auc"], &rows)?));
    }
    if !s.ablation.is_empty() {
        let rows: Vec<FigA1Row> = s
            .ablation
            .iter()
            .filter(|r| r.metric == Metric::Accuracy)
            .map(|r| FigA1Row {
                separability: r.separability,
                rho: r.rho,
                group: r.group.clone(),
                delta_mean: r.delta_mean,
            })
            .collect();
        files.push(("figA1_analogue.csv", to_csv(&["separability", "rho", "group", "delta_mean"], &rows)?));
    }
    Ok(files)
}

/// Serializes the results table exactly as `persist_run` writes it.
pub(crate) fn results_csv(records: &[RunRecord]) -> Result<String> {
    let rows: Vec<ResultRow> = records
        .iter()
        .flat_map(|r| r.slices.iter().map(move |s| ResultRow::new(r, s)))
        .collect();
    to_csv(&RESULTS_HEADER, &rows)
}

/// Writes a run directory under `dir`, creating it if needed.
pub fn persist_run(out: &RunOutput, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let plots = dir.join(PLOT_DIR);
    fs::create_dir_all(&plots).map_err(|e| Error::io(&plots, e))?;
    write(&dir.join("config.json"), &out.config.to_json())?;
    write(&dir.join("results.csv"), &results_csv(&out.records)?)?;
    write(&dir.join("tests.csv"), &to_csv(&TESTS_HEADER, &out.tests)?)?;
    let summary = serde_json::to_string_pretty(&out.summary)?;
    write(&dir.join("summary.json"), &summary)?;
    for (name, contents) in plot_files(out)? {
        write(&plots.join(name), &contents)?;
    }
    Ok(())
}

fn integrity(file: &Path, message: impl Into<String>) -> Error {
    Error::Integrity {
        file: file.to_path_buf(),
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| integrity(path, format!("cannot read: {e}")))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read(path)?).map_err(|e| integrity(path, format!("corrupt JSON: {e}")))
}

fn read_csv<T: DeserializeOwned>(path: &Path, header: &[&str]) -> Result<Vec<T>> {
    let text = read(path)?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let found = reader
        .headers()
        .map_err(|e| integrity(path, format!("corrupt CSV: {e}")))?
        .clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(integrity(path, "unexpected header"));
    }
    reader
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| integrity(path, format!("corrupt row {}: {e}", i + 2))))
        .collect()
}

/// Reads a run directory written by [`persist_run`], checking row counts
/// and the config fingerprint against `summary.json`.
pub fn load_run(dir: impl AsRef<Path>) -> Result<RunOutput> {
    let dir = dir.as_ref();
    let path = |name: &str| -> PathBuf { dir.join(name) };
    let config: ExperimentConfig = read_json(&path("config.json"))?;
    let summary: Summary = read_json(&path("summary.json"))?;
    let rows: Vec<ResultRow> = read_csv(&path("results.csv"), &RESULTS_HEADER)?;
    let tests: Vec<TestRow> = read_csv(&path("tests.csv"), &TESTS_HEADER)?;

    if config.fingerprint() != summary.config_fingerprint {
        return Err(integrity(&path("config.json"), "config does not match the summary fingerprint"));
    }
    if rows.len() != summary.results_rows {
        return Err(integrity(
            &path("results.csv"),
            format!("{} rows, summary records {}", rows.len(), summary.results_rows),
        ));
    }
    if tests.len() != summary.tests_rows {
        return Err(integrity(
            &path("tests.csv"),
            format!("{} rows, summary records {}", tests.len(), summary.tests_rows),
        ));
    }

    let mut records: Vec<RunRecord> = Vec::new();
    for row in rows {
        match records.last_mut() {
            Some(last) if last.run_id == row.run_id => last.slices.push(row.slice()),
            _ => {
                let duration_ms = *summary
                    .run_durations_ms
                    .get(&row.run_id)
                    .ok_or_else(|| integrity(&path("summary.json"), format!("no duration for run {}", row.run_id)))?;
                records.push(RunRecord {
                    run_id: row.run_id.clone(),
                    config_fingerprint: summary.config_fingerprint.clone(),
                    level: row.level,
                    separability: row.separability,
                    rho: row.rho,
                    arm: row.arm,
                    seed_index: row.seed_index,
                    seed: row.seed,
                    threshold: row.threshold,
                    slices: vec![row.slice()],
                    duration_ms,
                });
            }
        }
    }
    if records.len() != summary.run_durations_ms.len() {
        return Err(integrity(
            &path("results.csv"),
            format!("{} runs, summary records {}", records.len(), summary.run_durations_ms.len()),
        ));
    }
    Ok(RunOutput {
        experiment: summary.experiment,
        config,
        records,
        tests,
        summary,
    })
}

//! Group-wise classification metrics and percentage-point degradation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::doubled_midranks;

fn check_binary(labels: &[u8]) -> Result<()> {
    match labels.iter().find(|&&l| l > 1) {
        Some(l) => Err(Error::domain(format!("labels must be 0 or 1, got {l}"))),
        None => Ok(()),
    }
}

/// Probability that a random positive outscores a random negative, ties
/// counted one half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::domain(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    check_binary(labels)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::domain("scores contain NaN"));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels(format!(
            "AUC needs both classes, got {n_pos} positives and {n_neg} negatives"
        )));
    }
    let ranks = doubled_midranks(scores);
    let rank_sum2: u64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1)
        .map(|(&r, _)| r)
        .sum();
    // 2U = 2R - P(P + 1), an exact integer.
    let u2 = rank_sum2 - n_pos * (n_pos + 1);
    Ok((u2 as f64 / 2.0) / (n_pos * n_neg) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub n_pos: usize,
    pub n_neg: usize,
    pub true_positives: usize,
    pub correct: usize,
    pub predicted_positive: usize,
    /// `None` when the slice holds no positives.
    pub tpr: Option<f64>,
    pub accuracy: Option<f64>,
    /// `None` unless both classes are present.
    pub auc: Option<f64>,
}

impl GroupMetrics {
    fn compute(predictions: &[u8], scores: &[f64], labels: &[u8]) -> Result<Self> {
        let n_pos = labels.iter().filter(|&&l| l == 1).count();
        let n_neg = labels.len() - n_pos;
        let mut true_positives = 0;
        let mut correct = 0;
        let mut predicted_positive = 0;
        for (&p, &y) in predictions.iter().zip(labels) {
            if p == y {
                correct += 1;
            }
            if p == 1 {
                predicted_positive += 1;
                if y == 1 {
                    true_positives += 1;
                }
            }
        }
        let auc = if n_pos > 0 && n_neg > 0 {
            Some(roc_auc(scores, labels)?)
        } else {
            None
        };
        Ok(GroupMetrics {
            n_pos,
            n_neg,
            true_positives,
            correct,
            predicted_positive,
            tpr: (n_pos > 0).then(|| true_positives as f64 / n_pos as f64),
            accuracy: (!labels.is_empty()).then(|| correct as f64 / labels.len() as f64),
            auc,
        })
    }

    pub fn n(&self) -> usize {
        self.n_pos + self.n_neg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub groups: [GroupMetrics; 2],
    pub overall: GroupMetrics,
    pub threshold: f64,
}

/// Metrics for a single slice without a group breakdown.
pub fn slice_metrics(predictions: &[u8], scores: &[f64], labels: &[u8]) -> Result<GroupMetrics> {
    if predictions.len() != labels.len() || scores.len() != labels.len() {
        return Err(Error::domain("predictions, scores and labels differ in length"));
    }
    check_binary(predictions)?;
    check_binary(labels)?;
    GroupMetrics::compute(predictions, scores, labels)
}

pub fn group_metrics(
    predictions: &[u8],
    scores: &[f64],
    true_labels: &[u8],
    groups: &[u8],
    threshold: f64,
) -> Result<MetricsReport> {
    let n = true_labels.len();
    if predictions.len() != n || scores.len() != n || groups.len() != n {
        return Err(Error::domain(format!(
            "length mismatch: {} predictions, {} scores, {} labels, {} groups",
            predictions.len(),
            scores.len(),
            n,
            groups.len()
        )));
    }
    check_binary(predictions)?;
    check_binary(true_labels)?;
    check_binary(groups)?;
    let slice = |g: u8| {
        let idx: Vec<usize> = (0..n).filter(|&i| groups[i] == g).collect();
        let pick_u8 = |v: &[u8]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        GroupMetrics::compute(&pick_u8(predictions), &s, &pick_u8(true_labels))
    };
    Ok(MetricsReport {
        groups: [slice(0)?, slice(1)?],
        overall: GroupMetrics::compute(predictions, scores, true_labels)?,
        threshold,
    })
}

/// One `results.csv` row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub seed: u64,
    /// `0`, `1` or `all`.
    pub group: String,
    pub n_pos: usize,
    pub n_neg: usize,
    pub tpr: Option<f64>,
    pub accuracy: Option<f64>,
    pub auc: Option<f64>,
    pub threshold: f64,
}

impl MetricsRow {
    pub fn from_slice(run_id: &str, seed: u64, group: &str, m: &GroupMetrics, threshold: f64) -> Self {
        MetricsRow {
            run_id: run_id.to_string(),
            seed,
            group: group.to_string(),
            n_pos: m.n_pos,
            n_neg: m.n_neg,
            tpr: m.tpr,
            accuracy: m.accuracy,
            auc: m.auc,
            threshold,
        }
    }
}

impl MetricsReport {
    pub fn group(&self, g: u8) -> &GroupMetrics {
        &self.groups[g as usize]
    }

    pub fn to_rows(&self, run_id: &str, seed: u64) -> Vec<MetricsRow> {
        vec![
            MetricsRow::from_slice(run_id, seed, "0", &self.groups[0], self.threshold),
            MetricsRow::from_slice(run_id, seed, "1", &self.groups[1], self.threshold),
            MetricsRow::from_slice(run_id, seed, "all", &self.overall, self.threshold),
        ]
    }
}

/// Biased minus clean, in percentage points.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricDeltas {
    pub tpr: Option<f64>,
    pub accuracy: Option<f64>,
    pub auc: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Degradation {
    pub groups: [MetricDeltas; 2],
    pub overall: MetricDeltas,
}

fn pp(clean: Option<f64>, biased: Option<f64>) -> Option<f64> {
    Some(100.0 * (biased? - clean?))
}

fn deltas(clean: &GroupMetrics, biased: &GroupMetrics) -> MetricDeltas {
    MetricDeltas {
        tpr: pp(clean.tpr, biased.tpr),
        accuracy: pp(clean.accuracy, biased.accuracy),
        auc: pp(clean.auc, biased.auc),
    }
}

pub fn degradation(clean: &MetricsReport, biased: &MetricsReport) -> Result<Degradation> {
    let pairs = [
        ("group 0", &clean.groups[0], &biased.groups[0]),
        ("group 1", &clean.groups[1], &biased.groups[1]),
        ("overall", &clean.overall, &biased.overall),
    ];
    for (name, c, b) in pairs {
        if (c.n_pos, c.n_neg) != (b.n_pos, b.n_neg) {
            return Err(Error::IncompatibleReports(format!(
                "{name}: clean has {}+/{}-, biased has {}+/{}-",
                c.n_pos, c.n_neg, b.n_pos, b.n_neg
            )));
        }
    }
    Ok(Degradation {
        groups: [
            deltas(&clean.groups[0], &biased.groups[0]),
            deltas(&clean.groups[1], &biased.groups[1]),
        ],
        overall: deltas(&clean.overall, &biased.overall),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let (mut wins2, mut pairs) = (0u64, 0u64);
        for (i, &si) in scores.iter().enumerate() {
            if labels[i] != 1 {
                continue;
            }
            for (j, &sj) in scores.iter().enumerate() {
                if labels[j] != 0 {
                    continue;
                }
                pairs += 1;
                wins2 += if si > sj { 2 } else if si == sj { 1 } else { 0 };
            }
        }
        (wins2 as f64 / 2.0) / pairs as f64
    }

    #[test]
    fn hand_counted_auc() {
        assert_eq!(roc_auc(&[0.9, 0.8, 0.1, 0.7], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.9, 0.4, 0.1, 0.7], &[1, 1, 0, 0]).unwrap(), 0.75);
        assert_eq!(roc_auc(&[0.5, 0.5], &[1, 0]).unwrap(), 0.5);
    }

    #[test]
    fn auc_errors() {
        assert!(matches!(roc_auc(&[0.1, 0.2], &[1, 1]), Err(Error::DegenerateLabels(_))));
        assert!(roc_auc(&[0.1], &[1, 0]).is_err());
        assert!(roc_auc(&[0.1, 0.2], &[1, 2]).is_err());
        assert!(roc_auc(&[f64::NAN, 0.2], &[1, 0]).is_err());
    }

    #[test]
    fn hand_counted_group_metrics() {
        let r = group_metrics(&[1, 0, 1, 0], &[0.9, 0.2, 0.8, 0.1], &[1, 1, 0, 0], &[0, 0, 1, 1], 0.5)
            .unwrap();
        assert_eq!(r.groups[0].tpr, Some(0.5));
        assert_eq!(r.groups[1].tpr, None);
        assert_eq!(r.groups[1].accuracy, Some(0.5));
        assert_eq!(r.groups[1].auc, None);
        assert_eq!(r.overall.accuracy, Some(0.5));
        assert_eq!(r.overall.tpr, Some(0.5));
    }

    #[test]
    fn perfect_predictions() {
        let labels = [1, 0, 1, 0, 1, 1];
        let groups = [0, 0, 1, 1, 1, 0];
        let scores = [0.9, 0.1, 0.8, 0.3, 0.7, 0.6];
        let r = group_metrics(&labels, &scores, &labels, &groups, 0.5).unwrap();
        for g in &r.groups {
            assert_eq!(g.tpr, Some(1.0));
            assert_eq!(g.accuracy, Some(1.0));
        }
    }

    #[test]
    fn length_mismatch() {
        assert!(group_metrics(&[1, 0], &[0.5, 0.5], &[1], &[0, 1], 0.5).is_err());
    }

    #[test]
    fn degradation_arithmetic() {
        let mk = |correct: usize| GroupMetrics {
            n_pos: 50,
            n_neg: 50,
            true_positives: 40,
            correct,
            predicted_positive: 45,
            tpr: Some(0.8),
            accuracy: Some(correct as f64 / 100.0),
            auc: Some(0.9),
        };
        let clean = MetricsReport { groups: [mk(90), mk(90)], overall: mk(90), threshold: 0.5 };
        let biased = MetricsReport { groups: [mk(90), mk(82)], overall: mk(86), threshold: 0.5 };
        let d = degradation(&clean, &biased).unwrap();
        assert!((d.groups[1].accuracy.unwrap() + 8.0).abs() < 1e-9);
        assert_eq!(d.groups[0].accuracy, Some(0.0));
        let same = degradation(&clean, &clean).unwrap();
        assert_eq!(same.groups[1], MetricDeltas { tpr: Some(0.0), accuracy: Some(0.0), auc: Some(0.0) });
        let back = degradation(&biased, &clean).unwrap();
        assert_eq!(back.groups[1].accuracy.map(|v| -v), d.groups[1].accuracy);

        let mut other = biased.clone();
        other.groups[0].n_pos = 49;
        assert!(matches!(degradation(&clean, &other), Err(Error::IncompatibleReports(_))));
    }

    #[test]
    fn rows_cover_groups_and_overall() {
        let r = group_metrics(&[1, 0, 1, 0], &[0.9, 0.2, 0.8, 0.1], &[1, 1, 0, 0], &[0, 0, 1, 1], 0.5)
            .unwrap();
        let rows = r.to_rows("run", 3);
        let groups: Vec<_> = rows.iter().map(|r| r.group.as_str()).collect();
        assert_eq!(groups, ["0", "1", "all"]);
    }

    fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
        (2usize..200).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..12).prop_map(|v| v as f64 / 4.0), n),
                prop::collection::vec(0u8..2, n),
            )
        })
    }

    proptest! {
        #[test]
        fn auc_equals_brute_force((scores, labels) in scored_labels()) {
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            prop_assert_eq!(roc_auc(&scores, &labels).unwrap(), brute_force_auc(&scores, &labels));
        }

        #[test]
        fn auc_complement((scores, labels) in scored_labels()) {
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            let flipped: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
            let sum = roc_auc(&scores, &labels).unwrap() + roc_auc(&scores, &flipped).unwrap();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }

        #[test]
        fn auc_rank_invariant((scores, labels) in scored_labels()) {
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            prop_assert_eq!(roc_auc(&scores, &labels).unwrap(), roc_auc(&warped, &labels).unwrap());
        }

        #[test]
        fn counts_add_up(
            preds in prop::collection::vec(0u8..2, 1..100),
            seed in any::<u64>(),
        ) {
            let n = preds.len();
            let labels: Vec<u8> = (0..n).map(|i| ((seed >> (i % 64)) & 1) as u8).collect();
            let groups: Vec<u8> = (0..n).map(|i| ((seed.rotate_left(7) >> (i % 64)) & 1) as u8).collect();
            let scores: Vec<f64> = preds.iter().map(|&p| p as f64).collect();
            let r = group_metrics(&preds, &scores, &labels, &groups, 0.5).unwrap();
            prop_assert_eq!(
                r.groups[0].predicted_positive + r.groups[1].predicted_positive,
                r.overall.predicted_positive
            );
            prop_assert_eq!(r.groups[0].correct + r.groups[1].correct, r.overall.correct);
            for g in &r.groups {
                prop_assert!(g.true_positives <= g.n_pos);
                if let Some(tpr) = g.tpr {
                    prop_assert_eq!((tpr * g.n_pos as f64).round() as usize, g.true_positives);
                }
            }
        }
    }
}

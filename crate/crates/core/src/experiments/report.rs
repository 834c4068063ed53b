//! Plain-text rendering of `summary.json`.

use std::fmt::Write as _;

use super::{Metric, Summary};

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |cells: &mut dyn Iterator<Item = &str>, out: &mut String| {
        let parts: Vec<String> = cells
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(&mut header.iter().copied(), &mut out);
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    line(&mut rule.iter().map(String::as_str), &mut out);
    for row in rows {
        line(&mut row.iter().map(String::as_str), &mut out);
    }
    out
}

fn p(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

fn group_rank(g: &str) -> usize {
    match g {
        "0" => 0,
        "1" => 1,
        "all" => 2,
        _ => 3,
    }
}

/// Renders the tables of a run summary: the audit sorted by ascending mean
/// AUC, degradation by separability then group, and the ablation grid and
/// SPLIT levels with their association tests.
pub fn render_report(summary: &Summary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "experiment: {}", summary.experiment);
    let _ = writeln!(out, "config: {}", &summary.config_fingerprint[..12.min(summary.config_fingerprint.len())]);
    if let Some(family) = &summary.holm_family {
        let _ = writeln!(out, "Holm-Bonferroni family: {family}");
    }
    out.push('\n');

    if !summary.audit.is_empty() {
        let rows: Vec<Vec<String>> = summary
            .audit
            .iter()
            .map(|r| {
                vec![
                    format!("{}", r.separability_target),
                    format!("{:.3}", r.auc_mean),
                    format!("{:.3}", r.auc_sd),
                    r.n_seeds.to_string(),
                ]
            })
            .collect();
        out.push_str(&table(&["separability", "auc_mean", "auc_sd", "seeds"], &rows));
    }

    if !summary.degradation.is_empty() {
        let mut sorted: Vec<_> = summary.degradation.iter().collect();
        sorted.sort_by(|a, b| {
            a.separability
                .total_cmp(&b.separability)
                .then((a.metric == Metric::Tpr).cmp(&(b.metric == Metric::Tpr)))
                .then(group_rank(&a.group).cmp(&group_rank(&b.group)))
        });
        let rows: Vec<Vec<String>> = sorted
            .iter()
            .map(|r| {
                vec![
                    format!("{}", r.separability),
                    format!("{}", r.rho),
                    r.metric.to_string(),
                    r.group.clone(),
                    format!("{:+.2}", r.delta_mean),
                    format!("{:.2}", r.delta_sd),
                    p(Some(r.p)),
                    p(r.p_adj),
                    if r.significant { "*".into() } else { String::new() },
                ]
            })
            .collect();
        out.push_str(&table(
            &["separability", "rho", "metric", "group", "delta_pp", "sd", "p", "p_adj", "sig"],
            &rows,
        ));
    }

    if !summary.ablation.is_empty() {
        let mut sorted: Vec<_> = summary.ablation.iter().filter(|r| r.metric == Metric::Accuracy).collect();
        sorted.sort_by(|a, b| {
            a.separability
                .total_cmp(&b.separability)
                .then(a.rho.total_cmp(&b.rho))
                .then(group_rank(&a.group).cmp(&group_rank(&b.group)))
        });
        let rows: Vec<Vec<String>> = sorted
            .iter()
            .map(|r| {
                vec![
                    format!("{}", r.separability),
                    format!("{}", r.rho),
                    r.group.clone(),
                    format!("{:+.2}", r.delta_mean),
                    format!("{:.2}", r.delta_sd),
                ]
            })
            .collect();
        out.push_str(&table(&["separability", "rho", "group", "accuracy_delta_pp", "sd"], &rows));
    }

    if !summary.split.is_empty() {
        let rows: Vec<Vec<String>> = summary
            .split
            .iter()
            .map(|r| {
                vec![
                    format!("{}", r.separability_target),
                    format!("{:.3}", r.separability_auc),
                    format!("{:.3}", r.clean_split_auc),
                    format!("{:.3}", r.biased_split_auc),
                    format!("{:+.3}", r.max_excess),
                ]
            })
            .collect();
        out.push_str(&table(
            &["separability", "audit_auc", "split_clean", "split_biased", "max_excess"],
            &rows,
        ));
    }

    if !summary.associations.is_empty() {
        out.push('\n');
        let rows: Vec<Vec<String>> = summary
            .associations
            .iter()
            .map(|a| {
                vec![
                    a.label.clone(),
                    a.n_points.to_string(),
                    format!("{:+.3}", a.tau),
                    p(Some(a.p)),
                    if a.significant { "*".into() } else { String::new() },
                ]
            })
            .collect();
        out.push_str(&table(&["kendall", "points", "tau", "p", "sig"], &rows));
    }
    out
}

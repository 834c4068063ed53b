//! Rank-based significance tests: Mann-Whitney U, Holm-Bonferroni step-down
//! adjustment and Kendall's tau-b.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{normal_cdf, normal_sf};

pub const DEFAULT_ALPHA: f64 = 0.05;

/// Largest combined sample size for which the exact null distribution of U
/// is enumerated (tie-free data only).
pub const EXACT_MW_MAX_TOTAL: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    MwExact,
    MwNormal,
    KendallNormal,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::MwExact => "mw_exact",
            Method::MwNormal => "mw_normal",
            Method::KendallNormal => "kendall_normal",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mw_exact" => Ok(Method::MwExact),
            "mw_normal" => Ok(Method::MwNormal),
            "kendall_normal" => Ok(Method::KendallNormal),
            other => Err(Error::domain(format!("unknown test method `{other}`"))),
        }
    }
}

/// Alternative hypothesis, stated for the first sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    /// First sample stochastically smaller.
    Less,
    Greater,
    TwoSided,
}

impl fmt::Display for Alternative {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Alternative::Less => "less",
            Alternative::Greater => "greater",
            Alternative::TwoSided => "two_sided",
        })
    }
}

impl FromStr for Alternative {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "less" => Ok(Alternative::Less),
            "greater" => Ok(Alternative::Greater),
            "two_sided" | "two-sided" => Ok(Alternative::TwoSided),
            other => Err(Error::domain(format!("unknown alternative `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub adjusted_p: Option<f64>,
    pub alpha: f64,
    pub significant: bool,
    pub method: Method,
}

impl TestResult {
    fn new(statistic: f64, p_value: f64, method: Method) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        TestResult {
            statistic,
            p_value,
            adjusted_p: None,
            alpha: DEFAULT_ALPHA,
            significant: p_value < DEFAULT_ALPHA,
            method,
        }
    }

    /// The p-value significance is judged on.
    pub fn decision_p(&self) -> f64 {
        self.adjusted_p.unwrap_or(self.p_value)
    }

    pub fn at_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self.significant = self.decision_p() < alpha;
        self
    }

    pub fn with_adjusted(mut self, adjusted_p: f64) -> Self {
        self.adjusted_p = Some(adjusted_p.max(self.p_value));
        self.significant = self.decision_p() < self.alpha;
        self
    }
}

/// Twice the 1-based midrank of every value, so tied blocks stay integral.
pub(crate) fn doubled_midranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0u64; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        for &i in &order[start..=end] {
            ranks[i] = (start + end + 2) as u64;
        }
        start = end + 1;
    }
    ranks
}

/// Sizes of the tied blocks in `values` (blocks of one included).
fn tie_blocks(values: &[f64]) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        blocks.push(j - i + 1);
        i = j + 1;
    }
    blocks
}

fn check_samples(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::domain("Mann-Whitney U needs two nonempty samples"));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::domain("samples contain NaN"));
    }
    Ok(())
}

/// U statistic of the first sample: pairs where `a` beats `b`, ties one half.
pub fn u_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    check_samples(a, b)?;
    let combined: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = doubled_midranks(&combined);
    let n_a = a.len() as u64;
    let r2: u64 = ranks[..a.len()].iter().sum();
    Ok((r2 - n_a * (n_a + 1)) as f64 / 2.0)
}

/// Null distribution counts of U for sample sizes `(m, n)`: entry `u` is the
/// number of rank assignments with statistic `u`.
fn exact_u_counts(m: usize, n: usize) -> Vec<u128> {
    // counts[i][j][u] built up over i <= m, j <= n with the recurrence
    // c(u; i, j) = c(u - j; i - 1, j) + c(u; i, j - 1).
    let max_u = m * n;
    let mut table: Vec<Vec<Vec<u128>>> = vec![vec![Vec::new(); n + 1]; m + 1];
    for i in 0..=m {
        for j in 0..=n {
            let mut row = vec![0u128; i * j + 1];
            if i == 0 || j == 0 {
                row[0] = 1;
            } else {
                for (u, slot) in row.iter_mut().enumerate() {
                    let from_a = if u >= j {
                        table[i - 1][j].get(u - j).copied().unwrap_or(0)
                    } else {
                        0
                    };
                    let from_b = table[i][j - 1].get(u).copied().unwrap_or(0);
                    *slot = from_a + from_b;
                }
            }
            table[i][j] = row;
        }
    }
    let out = std::mem::take(&mut table[m][n]);
    debug_assert_eq!(out.len(), max_u + 1);
    out
}

fn exact_p(u: f64, m: usize, n: usize, alternative: Alternative) -> f64 {
    let counts = exact_u_counts(m, n);
    let total: u128 = counts.iter().sum();
    let u = u.round() as usize;
    let lower: u128 = counts[..=u].iter().sum();
    let upper: u128 = counts[u..].iter().sum();
    let p_less = lower as f64 / total as f64;
    let p_greater = upper as f64 / total as f64;
    match alternative {
        Alternative::Less => p_less,
        Alternative::Greater => p_greater,
        Alternative::TwoSided => (2.0 * p_less.min(p_greater)).min(1.0),
    }
}

fn normal_p(u: f64, a: &[f64], b: &[f64], alternative: Alternative) -> f64 {
    let (m, n) = (a.len() as f64, b.len() as f64);
    let total = m + n;
    let combined: Vec<f64> = a.iter().chain(b).copied().collect();
    let tie_term: f64 = tie_blocks(&combined)
        .iter()
        .map(|&t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum();
    let var = m * n / 12.0 * ((total + 1.0) - tie_term / (total * (total - 1.0)).max(1.0));
    let mean = m * n / 2.0;
    if var <= 0.0 {
        return 1.0;
    }
    let sd = var.sqrt();
    match alternative {
        Alternative::Less => normal_cdf((u - mean + 0.5) / sd),
        Alternative::Greater => normal_sf((u - mean - 0.5) / sd),
        Alternative::TwoSided => (2.0 * normal_sf(((u - mean).abs() - 0.5) / sd)).min(1.0),
    }
}

/// Mann-Whitney U test. Uses the exact null distribution for tie-free data
/// with at most [`EXACT_MW_MAX_TOTAL`] observations, otherwise the normal
/// approximation with tie and continuity corrections.
pub fn mann_whitney_u(a: &[f64], b: &[f64], alternative: Alternative) -> Result<TestResult> {
    let combined: Vec<f64> = a.iter().chain(b).copied().collect();
    check_samples(a, b)?;
    let tie_free = tie_blocks(&combined).iter().all(|&t| t == 1);
    if tie_free && combined.len() <= EXACT_MW_MAX_TOTAL {
        mann_whitney_exact(a, b, alternative)
    } else {
        mann_whitney_normal(a, b, alternative)
    }
}

/// Exact-enumeration path; requires tie-free data.
pub fn mann_whitney_exact(a: &[f64], b: &[f64], alternative: Alternative) -> Result<TestResult> {
    let u = u_statistic(a, b)?;
    let combined: Vec<f64> = a.iter().chain(b).copied().collect();
    if tie_blocks(&combined).iter().any(|&t| t > 1) {
        return Err(Error::domain("exact Mann-Whitney path requires tie-free data"));
    }
    if combined.len() > 40 {
        return Err(Error::domain("exact Mann-Whitney enumeration limited to 40 observations"));
    }
    Ok(TestResult::new(u, exact_p(u, a.len(), b.len(), alternative), Method::MwExact))
}

/// Normal-approximation path.
pub fn mann_whitney_normal(a: &[f64], b: &[f64], alternative: Alternative) -> Result<TestResult> {
    let u = u_statistic(a, b)?;
    Ok(TestResult::new(u, normal_p(u, a, b, alternative), Method::MwNormal))
}

/// Holm-Bonferroni step-down adjusted p-values, in input order.
pub fn holm_bonferroni(p_values: &[f64]) -> Result<Vec<f64>> {
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::domain(format!("p-values must lie in [0, 1], got {p}")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]).then(i.cmp(&j)));
    let mut adjusted = vec![0.0; m];
    let mut running = 0.0f64;
    for (rank, &i) in order.iter().enumerate() {
        running = running.max((m - rank) as f64 * p_values[i]).min(1.0);
        adjusted[i] = running;
    }
    Ok(adjusted)
}

/// Applies Holm-Bonferroni across `results` in place.
pub fn adjust_holm(results: &mut [TestResult]) -> Result<()> {
    let ps: Vec<f64> = results.iter().map(|r| r.p_value).collect();
    for (r, adj) in results.iter_mut().zip(holm_bonferroni(&ps)?) {
        *r = r.with_adjusted(adj);
    }
    Ok(())
}

/// Counts merge-sort inversions of `v`, sorting it in place.
fn count_inversions(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = count_inversions(&mut v[..mid], buf) + count_inversions(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j].total_cmp(&v[i]) == Ordering::Less {
            swaps += (mid - i) as u64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

fn pairs(t: usize) -> u64 {
    (t as u64) * (t as u64).saturating_sub(1) / 2
}

/// Kendall's tau-b with a two-sided normal-approximation p-value on the
/// concordance count `S = C - D`. Runs in O(n log n).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<TestResult> {
    if x.len() != y.len() {
        return Err(Error::domain(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::domain("Kendall's tau needs at least two observations"));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::domain("inputs contain NaN"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]).then(y[i].total_cmp(&y[j])));

    let n0 = pairs(n);
    let (mut n1, mut n3) = (0u64, 0u64);
    let (mut i, mut run_x, mut run_xy) = (1, 1usize, 1usize);
    while i <= n {
        let same_x = i < n && x[order[i]] == x[order[i - 1]];
        let same_xy = same_x && y[order[i]] == y[order[i - 1]];
        if same_xy {
            run_xy += 1;
        } else {
            n3 += pairs(run_xy);
            run_xy = 1;
        }
        if same_x {
            run_x += 1;
        } else {
            n1 += pairs(run_x);
            run_x = 1;
        }
        i += 1;
    }

    let mut ys: Vec<f64> = order.iter().map(|&k| y[k]).collect();
    let mut buf = Vec::with_capacity(n);
    let swaps = count_inversions(&mut ys, &mut buf);
    let y_blocks = tie_blocks(&ys);
    let n2: u64 = y_blocks.iter().map(|&t| pairs(t)).sum();

    let s = n0 as i64 - n1 as i64 - n2 as i64 + n3 as i64 - 2 * swaps as i64;
    let (dx, dy) = (n0 - n1, n0 - n2);
    if dx == 0 || dy == 0 {
        return Err(Error::DegenerateLabels(
            "Kendall's tau is undefined for a constant input".into(),
        ));
    }
    let tau = s as f64 / (dx as f64 * dy as f64).sqrt();

    let x_blocks = tie_blocks(x);
    let nf = n as f64;
    let sum_a = |blocks: &[usize], f: &dyn Fn(f64) -> f64| -> f64 {
        blocks.iter().map(|&t| f(t as f64)).sum()
    };
    let v0 = nf * (nf - 1.0) * (2.0 * nf + 5.0);
    let vt = sum_a(&x_blocks, &|t| t * (t - 1.0) * (2.0 * t + 5.0));
    let vu = sum_a(&y_blocks, &|t| t * (t - 1.0) * (2.0 * t + 5.0));
    let v1 = sum_a(&x_blocks, &|t| t * (t - 1.0)) * sum_a(&y_blocks, &|t| t * (t - 1.0))
        / (2.0 * nf * (nf - 1.0));
    let v2 = if n > 2 {
        sum_a(&x_blocks, &|t| t * (t - 1.0) * (t - 2.0))
            * sum_a(&y_blocks, &|t| t * (t - 1.0) * (t - 2.0))
            / (9.0 * nf * (nf - 1.0) * (nf - 2.0))
    } else {
        0.0
    };
    let var_s = (v0 - vt - vu) / 18.0 + v1 + v2;
    let p = if var_s > 0.0 {
        2.0 * normal_sf((s as f64).abs() / var_s.sqrt())
    } else {
        1.0
    };
    Ok(TestResult::new(tau, p, Method::KendallNormal))
}

/// One `tests.csv` row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestRow {
    pub comparison_id: String,
    pub statistic: f64,
    pub p: f64,
    pub p_adj: Option<f64>,
    pub method: Method,
    pub significant: bool,
}

impl TestRow {
    pub fn new(comparison_id: impl Into<String>, r: &TestResult) -> Self {
        TestRow {
            comparison_id: comparison_id.into(),
            statistic: r.statistic,
            p: r.p_value,
            p_adj: r.adjusted_p,
            method: r.method,
            significant: r.significant,
        }
    }
}

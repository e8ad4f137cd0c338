//! Rank-based comparison of classifiers over many datasets: average ranks,
//! the Friedman test, pairwise Wilcoxon signed-rank tests with Holm's
//! step-down correction, cliques of indistinguishable classifiers and
//! critical-difference diagrams.
//!
//! Accuracy matrices are classifier-major (`matrix[classifier][dataset]`)
//! and generic over the value type, so exact rationals and `f64` both work.

mod cd;
mod cliques;
mod report;

use std::cmp::Ordering;

use num_traits::Signed;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

pub use cd::{axis_x, cd_svg, cd_text, render_cd_diagram, CD_AXIS_LEFT, CD_AXIS_WIDTH};
pub use cliques::{form_cliques, CdDiagram};
pub use report::{compare, StatReport};

use crate::data::AccuracyTable;
use crate::error::{Error, Result};

/// Largest number of non-zero differences handled by exact enumeration.
pub const EXACT_WILCOXON_MAX_N: usize = 25;
pub const DEFAULT_ALPHA: f64 = 0.05;

fn cmp<T: PartialOrd>(a: &T, b: &T) -> Ordering {
    a.partial_cmp(b).expect("comparable values")
}

/// Ranks of `values` in ascending order (smallest gets 1), ties sharing the
/// mean of the positions they occupy. Also returns the tie-group sizes.
fn ascending_ranks<T: PartialOrd>(values: &[T]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| cmp(&values[i], &values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut groups = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && cmp(&values[order[end]], &values[order[start]]) == Ordering::Equal {
            end += 1;
        }
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        groups.push(end - start);
        start = end;
    }
    (ranks, groups)
}

/// Rank classifiers on one dataset: highest accuracy gets rank 1.
pub fn rank_row<T: PartialOrd>(accuracies: &[T]) -> Vec<f64> {
    let k = accuracies.len() as f64;
    ascending_ranks(accuracies).0.into_iter().map(|r| k + 1.0 - r).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub classifiers: Vec<String>,
    pub datasets: Vec<String>,
    /// `ranks[dataset][classifier]`
    pub ranks: Vec<Vec<f64>>,
    pub average: Vec<f64>,
}

fn check_matrix<T>(matrix: &[Vec<T>]) -> Result<(usize, usize)> {
    let k = matrix.len();
    let n = matrix.first().map_or(0, Vec::len);
    if k < 2 || n < 1 || matrix.iter().any(|r| r.len() != n) {
        return Err(Error::Domain(format!("need a rectangular table with >= 2 classifiers and >= 1 dataset, got {k} x {n}")));
    }
    Ok((k, n))
}

fn column<T: Copy>(matrix: &[Vec<T>], d: usize) -> Vec<T> {
    matrix.iter().map(|row| row[d]).collect()
}

pub fn average_ranks_of<T: PartialOrd + Copy>(classifiers: &[String], datasets: &[String], matrix: &[Vec<T>]) -> Result<RankTable> {
    let (k, n) = check_matrix(matrix)?;
    let ranks: Vec<Vec<f64>> = (0..n).map(|d| rank_row(&column(matrix, d))).collect();
    let average = (0..k).map(|c| ranks.iter().map(|r| r[c]).sum::<f64>() / n as f64).collect();
    Ok(RankTable { classifiers: classifiers.to_vec(), datasets: datasets.to_vec(), ranks, average })
}

pub fn average_ranks(table: &AccuracyTable) -> Result<RankTable> {
    average_ranks_of(table.classifiers(), table.datasets(), &table.exact_matrix())
}

/// Datasets on which each classifier is strictly the most accurate.
pub fn wins<T: PartialOrd + Copy>(matrix: &[Vec<T>]) -> Result<Vec<usize>> {
    let (k, n) = check_matrix(matrix)?;
    let mut wins = vec![0; k];
    for d in 0..n {
        let col = column(matrix, d);
        let best = (0..k).max_by(|&i, &j| cmp(&col[i], &col[j])).expect("non-empty");
        if col.iter().filter(|v| cmp(*v, &col[best]) == Ordering::Equal).count() == 1 {
            wins[best] += 1;
        }
    }
    Ok(wins)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FriedmanResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n_classifiers: usize,
    pub n_datasets: usize,
}

/// Friedman chi-square over datasets (blocks) and classifiers (treatments),
/// corrected for ties, with a chi-square tail on `k - 1` degrees of freedom.
pub fn friedman_test_of<T: PartialOrd + Copy>(matrix: &[Vec<T>]) -> Result<FriedmanResult> {
    let (k, n) = check_matrix(matrix)?;
    if k < 3 || n < 2 {
        return Err(Error::Domain(format!("Friedman test needs >= 3 classifiers and >= 2 datasets, got {k} x {n}")));
    }
    let (kf, nf) = (k as f64, n as f64);
    let mut rank_sums = vec![0.0; k];
    let mut tie_term = 0.0;
    for d in 0..n {
        let (ranks, groups) = ascending_ranks(&column(matrix, d));
        for (s, r) in rank_sums.iter_mut().zip(ranks) {
            *s += r;
        }
        tie_term += groups.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>();
    }
    let correction = 1.0 - tie_term / (nf * kf * (kf * kf - 1.0));
    let result = |statistic: f64, p_value: f64| FriedmanResult { statistic, p_value, n_classifiers: k, n_datasets: n };
    if correction <= 1e-12 {
        return Ok(result(0.0, 1.0));
    }
    let ss: f64 = rank_sums.iter().map(|r| r * r).sum();
    let statistic = ((12.0 / (nf * kf * (kf + 1.0))) * ss - 3.0 * nf * (kf + 1.0)) / correction;
    let statistic = statistic.max(0.0);
    let chi = ChiSquared::new(kf - 1.0).expect("positive degrees of freedom");
    Ok(result(statistic, chi.sf(statistic).clamp(0.0, 1.0)))
}

pub fn friedman_test(table: &AccuracyTable) -> Result<FriedmanResult> {
    friedman_test_of(&table.exact_matrix())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WilcoxonMethod {
    Exact,
    Normal,
    /// Every difference was zero.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    pub w_plus: f64,
    pub w_minus: f64,
    /// `min(w_plus, w_minus)`
    pub statistic: f64,
    /// Non-zero differences.
    pub n: usize,
    pub p_value: f64,
    pub method: WilcoxonMethod,
}

/// Two-sided Wilcoxon signed-rank test on paired samples. Zero differences
/// are dropped and tied magnitudes share average ranks.
pub fn wilcoxon_signed_rank<T: Signed + PartialOrd + Copy>(a: &[T], b: &[T]) -> Result<WilcoxonResult> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Domain(format!("paired samples of lengths {} and {}", a.len(), b.len())));
    }
    let diffs: Vec<T> = a.iter().zip(b).map(|(&x, &y)| x - y).filter(|d| !d.is_zero()).collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(WilcoxonResult { w_plus: 0.0, w_minus: 0.0, statistic: 0.0, n: 0, p_value: 1.0, method: WilcoxonMethod::Degenerate });
    }
    let magnitudes: Vec<T> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks, groups) = ascending_ranks(&magnitudes);
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| d.is_positive()).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;
    let statistic = w_plus.min(w_minus);
    let (p_value, method) = if n <= EXACT_WILCOXON_MAX_N {
        (exact_p(&ranks, statistic), WilcoxonMethod::Exact)
    } else {
        (normal_p(n, &groups, statistic), WilcoxonMethod::Normal)
    };
    Ok(WilcoxonResult { w_plus, w_minus, statistic, n, p_value, method })
}

/// `min(1, 2 * P(W+ <= w))` under the sign-flip null, counting subsets of the
/// (doubled, hence integral) ranks by their sum.
fn exact_p(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0f64; max + 1];
    counts[0] = 1.0;
    for &r in &doubled {
        for s in (r..=max).rev() {
            counts[s] += counts[s - r];
        }
    }
    let limit = (2.0 * w).round() as usize;
    let hits: f64 = counts[..=limit.min(max)].iter().sum();
    (2.0 * hits / 2f64.powi(ranks.len() as i32)).min(1.0)
}

fn normal_p(n: usize, groups: &[usize], w: f64) -> f64 {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let ties: f64 = groups.iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * normal.sf(z)).min(1.0)
}

/// Holm's step-down procedure. Decisions come back in input order.
pub fn holm_correction(p_values: &[f64], alpha: f64) -> Vec<bool> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]));
    let mut reject = vec![false; m];
    for (i, &idx) in order.iter().enumerate() {
        if p_values[idx] <= alpha / (m - i) as f64 {
            reject[idx] = true;
        } else {
            break;
        }
    }
    reject
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTestResult {
    pub a: String,
    pub b: String,
    pub statistic: f64,
    pub p_value: f64,
    pub method: WilcoxonMethod,
    pub significant: bool,
}

/// Wilcoxon tests for every pair `i < j` with one Holm family over all of them.
pub fn pairwise_tests<T: Signed + PartialOrd + Copy>(classifiers: &[String], matrix: &[Vec<T>], alpha: f64) -> Result<Vec<PairwiseTestResult>> {
    let (k, _) = check_matrix(matrix)?;
    if classifiers.len() != k {
        return Err(Error::Domain("classifier names do not match the matrix".into()));
    }
    let mut results = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let w = wilcoxon_signed_rank(&matrix[i], &matrix[j])?;
            results.push(PairwiseTestResult {
                a: classifiers[i].clone(),
                b: classifiers[j].clone(),
                statistic: w.statistic,
                p_value: w.p_value,
                method: w.method,
                significant: false,
            });
        }
    }
    let decisions = holm_correction(&results.iter().map(|r| r.p_value).collect::<Vec<_>>(), alpha);
    for (r, d) in results.iter_mut().zip(decisions) {
        r.significant = d;
    }
    Ok(results)
}

#[cfg(test)]
mod tests;

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{average_ranks, form_cliques, friedman_test, pairwise_tests, wins, FriedmanResult, PairwiseTestResult};
use crate::data::AccuracyTable;
use crate::error::{Error, Result};
use crate::util::write_atomic;

/// Everything `compare` computes, serialized as `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub alpha: f64,
    pub classifiers: Vec<String>,
    pub datasets: Vec<String>,
    pub average_ranks: Vec<f64>,
    pub wins: Vec<usize>,
    pub friedman: Option<FriedmanResult>,
    pub pairwise: Vec<PairwiseTestResult>,
    /// Classifier names best rank first.
    pub rank_order: Vec<String>,
    pub cliques: Vec<Vec<String>>,
    pub notices: Vec<String>,
}

/// Ranks, wins, the Friedman test when it applies, Holm-corrected pairwise
/// Wilcoxon tests and cliques.
pub fn compare(table: &AccuracyTable, alpha: f64) -> Result<(StatReport, super::CdDiagram)> {
    if table.n_classifiers() < 2 {
        return Err(Error::Domain("comparison needs at least 2 classifiers".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha {alpha} outside (0, 1)")));
    }
    let matrix = table.exact_matrix();
    let ranks = average_ranks(table)?;
    let mut notices = Vec::new();
    let friedman = if table.n_classifiers() >= 3 && table.n_datasets() >= 2 {
        Some(friedman_test(table)?)
    } else {
        notices.push("Friedman test skipped: it needs at least 3 classifiers and 2 datasets".to_string());
        None
    };
    let pairwise = pairwise_tests(table.classifiers(), &matrix, alpha)?;
    let diagram = form_cliques(&ranks, &pairwise)?;
    let report = StatReport {
        alpha,
        classifiers: table.classifiers().to_vec(),
        datasets: table.datasets().to_vec(),
        average_ranks: ranks.average.clone(),
        wins: wins(&matrix)?,
        friedman,
        pairwise,
        rank_order: diagram.classifiers.clone(),
        cliques: diagram.clique_names(),
        notices,
    };
    Ok((report, diagram))
}

impl StatReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }
}

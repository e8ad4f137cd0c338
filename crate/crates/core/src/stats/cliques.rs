use serde::{Deserialize, Serialize};

use super::{PairwiseTestResult, RankTable};
use crate::error::{Error, Result};

/// Classifiers ordered by average rank (best first) and the maximal groups
/// with no significant difference inside them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdDiagram {
    pub classifiers: Vec<String>,
    pub average_ranks: Vec<f64>,
    /// Indices into `classifiers`, each sorted, two or more members.
    pub cliques: Vec<Vec<usize>>,
}

impl CdDiagram {
    pub fn clique_names(&self) -> Vec<Vec<String>> {
        self.cliques.iter().map(|c| c.iter().map(|&i| self.classifiers[i].clone()).collect()).collect()
    }
}

/// Maximal cliques of the "not significantly different" graph.
pub fn form_cliques(ranks: &RankTable, pairwise: &[PairwiseTestResult]) -> Result<CdDiagram> {
    let k = ranks.classifiers.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| ranks.average[i].total_cmp(&ranks.average[j]).then(i.cmp(&j)));
    let position = |name: &str| order.iter().position(|&i| ranks.classifiers[i] == name);

    let mut seen = vec![vec![false; k]; k];
    let mut similar = vec![vec![false; k]; k];
    for p in pairwise {
        let (Some(a), Some(b)) = (position(&p.a), position(&p.b)) else {
            return Err(Error::Spec(format!("pairwise result for unknown classifiers {} / {}", p.a, p.b)));
        };
        if a == b || seen[a][b] {
            return Err(Error::Spec(format!("pair {} / {} repeated or degenerate", p.a, p.b)));
        }
        seen[a][b] = true;
        seen[b][a] = true;
        similar[a][b] = !p.significant;
        similar[b][a] = !p.significant;
    }
    for a in 0..k {
        for b in a + 1..k {
            if !seen[a][b] {
                let name = |i: usize| &ranks.classifiers[order[i]];
                return Err(Error::Spec(format!("no pairwise result for {} / {}", name(a), name(b))));
            }
        }
    }

    let mut cliques = Vec::new();
    bron_kerbosch(&similar, Vec::new(), (0..k).collect(), Vec::new(), &mut cliques);
    let mut cliques: Vec<Vec<usize>> = cliques
        .into_iter()
        .filter(|c| c.len() >= 2)
        .map(|mut c| {
            c.sort_unstable();
            c
        })
        .collect();
    cliques.sort();
    Ok(CdDiagram {
        classifiers: order.iter().map(|&i| ranks.classifiers[i].clone()).collect(),
        average_ranks: order.iter().map(|&i| ranks.average[i]).collect(),
        cliques,
    })
}

fn bron_kerbosch(adj: &[Vec<bool>], r: Vec<usize>, mut p: Vec<usize>, mut x: Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if p.is_empty() && x.is_empty() {
        out.push(r);
        return;
    }
    let pivot = *p.iter().chain(&x).max_by_key(|&&u| p.iter().filter(|&&v| adj[u][v]).count()).expect("non-empty");
    let candidates: Vec<usize> = p.iter().copied().filter(|&v| !adj[pivot][v]).collect();
    for v in candidates {
        let mut r2 = r.clone();
        r2.push(v);
        let p2 = p.iter().copied().filter(|&u| adj[v][u]).collect();
        let x2 = x.iter().copied().filter(|&u| adj[v][u]).collect();
        bron_kerbosch(adj, r2, p2, x2, out);
        p.retain(|&u| u != v);
        x.push(v);
    }
}

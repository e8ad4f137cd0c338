//! Classifier-by-dataset accuracy tables.
//!
//! CSV layout: header `classifier_name,<dataset>,...`, then one row per
//! classifier. Cells keep the decimal text they were read from so that
//! equality between accuracies is exact.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::ToPrimitive;

use crate::error::{Error, Result};

const HEADER_KEY: &str = "classifier_name";

/// A decimal accuracy in `[0, 1]`, stored as its text and as an exact rational.
#[derive(Debug, Clone)]
pub struct Accuracy {
    text: String,
    exact: Ratio<i64>,
}

impl Accuracy {
    /// Accuracy of `correct` out of `total`, written with at most 6 decimals.
    pub fn from_counts(correct: usize, total: usize) -> Self {
        assert!(total > 0 && correct <= total);
        let scaled = (correct as u128 * 1_000_000 * 2 + total as u128) / (2 * total as u128);
        let text = if scaled == 1_000_000 {
            "1".to_string()
        } else {
            let frac = format!("{scaled:06}");
            let frac = frac.trim_end_matches('0');
            if frac.is_empty() {
                "0".to_string()
            } else {
                format!("0.{frac}")
            }
        };
        text.parse().expect("formatted accuracy parses")
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn exact(&self) -> Ratio<i64> {
        self.exact
    }

    pub fn value(&self) -> f64 {
        self.exact.to_f64().unwrap_or(f64::NAN)
    }
}

impl FromStr for Accuracy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let t = s.trim();
        let (int, frac) = match t.split_once('.') {
            Some((i, f)) => (i, f),
            None => (t, ""),
        };
        let digits_ok = |p: &str| p.chars().all(|c| c.is_ascii_digit());
        if (int.is_empty() && frac.is_empty()) || !digits_ok(int) || !digits_ok(frac) {
            return Err(format!("{s:?} is not a decimal accuracy"));
        }
        if frac.len() > 15 || int.len() > 3 {
            return Err(format!("{s:?} has too many digits"));
        }
        let scale = 10i64.pow(frac.len() as u32);
        let int_v: i64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| format!("{s:?}"))? };
        let frac_v: i64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| format!("{s:?}"))? };
        let exact = Ratio::new(int_v * scale + frac_v, scale);
        if exact > Ratio::from_integer(1) {
            return Err(format!("{s:?} exceeds 1"));
        }
        Ok(Self { text: t.to_string(), exact })
    }
}

impl PartialEq for Accuracy {
    fn eq(&self, other: &Self) -> bool {
        self.exact == other.exact
    }
}

impl Eq for Accuracy {}

impl PartialOrd for Accuracy {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Accuracy {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.exact.cmp(&other.exact)
    }
}

impl fmt::Display for Accuracy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccuracyTable {
    classifiers: Vec<String>,
    datasets: Vec<String>,
    /// `cells[classifier][dataset]`
    cells: Vec<Vec<Accuracy>>,
}

impl AccuracyTable {
    pub fn new(classifiers: Vec<String>, datasets: Vec<String>, cells: Vec<Vec<Accuracy>>) -> Result<Self> {
        let t = Self { classifiers, datasets, cells };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        if self.classifiers.is_empty() || self.datasets.is_empty() {
            return Err(Error::Format("accuracy table needs at least one classifier and one dataset".into()));
        }
        if self.cells.len() != self.classifiers.len() {
            return Err(Error::Format("row count does not match classifier count".into()));
        }
        for (name, row) in self.classifiers.iter().zip(&self.cells) {
            if row.len() != self.datasets.len() {
                return Err(Error::Format(format!("row {name} has {} cells, expected {}", row.len(), self.datasets.len())));
            }
        }
        for names in [&self.classifiers, &self.datasets] {
            let mut sorted: Vec<_> = names.iter().collect();
            sorted.sort();
            if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
                return Err(Error::Format(format!("duplicate name {}", w[0])));
            }
        }
        Ok(())
    }

    pub fn classifiers(&self) -> &[String] {
        &self.classifiers
    }

    pub fn datasets(&self) -> &[String] {
        &self.datasets
    }

    pub fn n_classifiers(&self) -> usize {
        self.classifiers.len()
    }

    pub fn n_datasets(&self) -> usize {
        self.datasets.len()
    }

    pub fn cell(&self, classifier: usize, dataset: usize) -> &Accuracy {
        &self.cells[classifier][dataset]
    }

    pub fn row(&self, classifier: usize) -> &[Accuracy] {
        &self.cells[classifier]
    }

    pub fn row_by_name(&self, classifier: &str) -> Option<&[Accuracy]> {
        self.classifiers.iter().position(|c| c == classifier).map(|i| self.row(i))
    }

    /// Exact values as a `[classifier][dataset]` matrix.
    pub fn exact_matrix(&self) -> Vec<Vec<Ratio<i64>>> {
        self.cells.iter().map(|r| r.iter().map(Accuracy::exact).collect()).collect()
    }

    /// Insert or replace a classifier row. The row must cover exactly the
    /// table's datasets, in any order.
    pub fn upsert_row(&mut self, classifier: &str, cells: &[(String, Accuracy)]) -> Result<()> {
        let mut row = Vec::with_capacity(self.datasets.len());
        if cells.len() != self.datasets.len() {
            return Err(Error::Format(format!(
                "row {classifier} covers {} datasets, table has {}",
                cells.len(),
                self.datasets.len()
            )));
        }
        for d in &self.datasets {
            let acc = cells
                .iter()
                .find(|(name, _)| name == d)
                .map(|(_, a)| a.clone())
                .ok_or_else(|| Error::Format(format!("row {classifier} is missing dataset {d}")))?;
            row.push(acc);
        }
        match self.classifiers.iter().position(|c| c == classifier) {
            Some(i) => self.cells[i] = row,
            None => {
                self.classifiers.push(classifier.to_string());
                self.cells.push(row);
            }
        }
        Ok(())
    }

    /// Join tables over disjoint datasets that share one classifier set.
    pub fn join(tables: &[AccuracyTable]) -> Result<Self> {
        let first = tables.first().ok_or_else(|| Error::Format("no tables to join".into()))?;
        let mut out = first.clone();
        for t in &tables[1..] {
            for d in &t.datasets {
                if out.datasets.contains(d) {
                    return Err(Error::Format(format!("dataset {d} appears in more than one table")));
                }
            }
            let mut sorted_a = out.classifiers.clone();
            let mut sorted_b = t.classifiers.clone();
            sorted_a.sort();
            sorted_b.sort();
            if sorted_a != sorted_b {
                return Err(Error::Format(format!(
                    "tables disagree on classifiers: {:?} vs {:?}",
                    out.classifiers, t.classifiers
                )));
            }
            out.datasets.extend(t.datasets.iter().cloned());
            for (ci, name) in out.classifiers.iter().enumerate() {
                let row = t.row_by_name(name).expect("same classifier set");
                out.cells[ci].extend(row.iter().cloned());
            }
        }
        Ok(out)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(HEADER_KEY);
        for d in &self.datasets {
            s.push(',');
            s.push_str(d);
        }
        s.push('\n');
        for (name, row) in self.classifiers.iter().zip(&self.cells) {
            s.push_str(name);
            for a in row {
                s.push(',');
                s.push_str(a.text());
            }
            s.push('\n');
        }
        s
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::Format("empty accuracy table".into()))?;
        let mut head = header.trim_end_matches('\r').split(',').map(str::trim);
        if head.next() != Some(HEADER_KEY) {
            return Err(Error::Parse { line: 1, msg: format!("first header cell must be {HEADER_KEY}") });
        }
        let datasets: Vec<String> = head.map(str::to_string).collect();
        if datasets.is_empty() || datasets.iter().any(String::is_empty) {
            return Err(Error::Parse { line: 1, msg: "missing dataset names in header".into() });
        }
        let mut classifiers = Vec::new();
        let mut cells = Vec::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            let parts: Vec<&str> = line.trim_end_matches('\r').split(',').map(str::trim).collect();
            if parts.len() != datasets.len() + 1 {
                return Err(Error::Format(format!(
                    "line {lineno}: expected {} cells, found {}",
                    datasets.len() + 1,
                    parts.len()
                )));
            }
            if parts[0].is_empty() {
                return Err(Error::Parse { line: lineno, msg: "empty classifier name".into() });
            }
            let row = parts[1..]
                .iter()
                .map(|c| {
                    if c.is_empty() {
                        Err(Error::Format(format!("line {lineno}: missing cell")))
                    } else {
                        c.parse::<Accuracy>().map_err(|msg| Error::Parse { line: lineno, msg })
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            classifiers.push(parts[0].to_string());
            cells.push(row);
        }
        if classifiers.is_empty() {
            return Err(Error::Format("accuracy table has a header but no rows".into()));
        }
        Self::new(classifiers, datasets, cells)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text)
    }

    /// Write via a temporary sibling file and rename, so readers never see a
    /// partial table.
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::util::write_atomic(path, self.to_csv().as_bytes())
    }
}

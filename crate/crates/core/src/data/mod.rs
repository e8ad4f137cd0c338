//! Loading and normalizing UCR-format univariate datasets.
//!
//! A dataset file holds one series per line: the raw class label first, then
//! the observations, separated by tabs or commas. The separator is picked
//! from the first line of each file.

pub mod synthetic;
mod table;

use std::fs;
use std::path::{Path, PathBuf};

pub use table::{Accuracy, AccuracyTable};

use crate::error::{Error, Result};
use crate::util::write_atomic;

/// Per-series standard deviation below which a series is treated as constant.
pub const FLAT_STD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub values: Vec<f64>,
    pub label: usize,
}

impl TimeSeries {
    pub fn new(values: Vec<f64>, label: usize) -> Self {
        Self { values, label }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Bijection between raw file labels and contiguous class indices `0..C`,
/// ordered by ascending raw label value.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    raw: Vec<f64>,
}

impl LabelMap {
    fn from_raw(labels: impl IntoIterator<Item = f64>) -> Self {
        let mut raw: Vec<f64> = labels.into_iter().collect();
        raw.sort_by(|a, b| a.total_cmp(b));
        raw.dedup();
        Self { raw }
    }

    pub fn n_classes(&self) -> usize {
        self.raw.len()
    }

    pub fn index_of(&self, raw: f64) -> Option<usize> {
        self.raw.binary_search_by(|probe| probe.total_cmp(&raw)).ok()
    }

    pub fn raw_label(&self, class: usize) -> Option<f64> {
        self.raw.get(class).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    /// Standardize every series to zero mean and unit variance after parsing.
    pub z_normalize: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { z_normalize: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    pub name: String,
    pub train: Vec<TimeSeries>,
    pub test: Vec<TimeSeries>,
    pub n_classes: usize,
    pub series_length: usize,
    pub labels: LabelMap,
}

impl TimeSeriesDataset {
    /// Assemble a dataset from already-indexed series, checking every invariant.
    pub fn from_parts(
        name: impl Into<String>,
        train: Vec<TimeSeries>,
        test: Vec<TimeSeries>,
        n_classes: usize,
    ) -> Result<Self> {
        let labels = LabelMap::from_raw((0..n_classes).map(|c| c as f64));
        let ds = Self {
            name: name.into(),
            series_length: train.first().map_or(0, TimeSeries::len),
            train,
            test,
            n_classes,
            labels,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 {
            return Err(Error::Format("dataset has no classes".into()));
        }
        if self.train.is_empty() || self.test.is_empty() {
            return Err(Error::Format(format!("dataset {} has an empty split", self.name)));
        }
        if self.series_length < 2 {
            return Err(Error::Format("series length must be at least 2".into()));
        }
        let mut seen = vec![false; self.n_classes];
        for (split, rows) in [("train", &self.train), ("test", &self.test)] {
            for (i, s) in rows.iter().enumerate() {
                if s.len() != self.series_length {
                    return Err(Error::Format(format!(
                        "{split} series {i} has length {} (expected {})",
                        s.len(),
                        self.series_length
                    )));
                }
                if s.label >= self.n_classes {
                    return Err(Error::Label(format!(
                        "{split} series {i} has label {} but only {} classes",
                        s.label, self.n_classes
                    )));
                }
                if s.values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Format(format!("{split} series {i} has a non-finite value")));
                }
                if split == "train" {
                    seen[s.label] = true;
                }
            }
        }
        if let Some(c) = seen.iter().position(|&s| !s) {
            return Err(Error::Label(format!("class {c} has no training series")));
        }
        Ok(())
    }
}

/// A parsed file before label remapping: raw labels and their rows.
struct RawSplit {
    rows: Vec<(f64, Vec<f64>)>,
}

fn parse_split(path: &Path) -> Result<RawSplit> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_split_text(&text)
}

fn parse_cell(cell: &str, line: usize) -> Result<f64> {
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| Error::Parse { line, msg: format!("non-numeric cell {cell:?}") })?;
    if !v.is_finite() {
        return Err(Error::Parse { line, msg: format!("non-finite cell {cell:?}") });
    }
    Ok(v)
}

fn parse_split_text(text: &str) -> Result<RawSplit> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).peekable();
    let sep = match lines.peek() {
        Some((_, first)) if first.contains('\t') => '\t',
        Some(_) => ',',
        None => return Err(Error::Format("empty dataset file".into())),
    };
    let mut rows = Vec::new();
    let mut width = None;
    for (idx, line) in lines {
        let lineno = idx + 1;
        let mut cells = line.trim_end_matches('\r').split(sep);
        let label = parse_cell(cells.next().unwrap_or_default(), lineno)?;
        let values = cells.map(|c| parse_cell(c, lineno)).collect::<Result<Vec<_>>>()?;
        match width {
            None if values.len() < 2 => {
                return Err(Error::Format(format!(
                    "line {lineno}: series needs at least 2 values, found {}",
                    values.len()
                )))
            }
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::Format(format!(
                    "line {lineno}: ragged row with {} values (expected {w})",
                    values.len()
                )))
            }
            Some(_) => {}
        }
        rows.push((label, values));
    }
    Ok(RawSplit { rows })
}

fn index_rows(split: RawSplit, map: &LabelMap, options: LoadOptions) -> Result<Vec<TimeSeries>> {
    split
        .rows
        .into_iter()
        .map(|(raw, values)| {
            let label = map
                .index_of(raw)
                .ok_or_else(|| Error::Label(format!("label {raw} does not occur in the training split")))?;
            let s = TimeSeries::new(values, label);
            Ok(if options.z_normalize { z_normalize(&s) } else { s })
        })
        .collect()
}

/// Load only the training file, e.g. for commands that must not touch test data.
pub fn load_ucr_split(path: &Path, options: LoadOptions) -> Result<(Vec<TimeSeries>, LabelMap)> {
    let raw = parse_split(path)?;
    let map = LabelMap::from_raw(raw.rows.iter().map(|(l, _)| *l));
    let series = index_rows(raw, &map, options)?;
    Ok((series, map))
}

pub fn load_ucr_dataset(train_path: &Path, test_path: &Path) -> Result<TimeSeriesDataset> {
    load_ucr_dataset_with(train_path, test_path, LoadOptions::default())
}

pub fn load_ucr_dataset_with(
    train_path: &Path,
    test_path: &Path,
    options: LoadOptions,
) -> Result<TimeSeriesDataset> {
    let (train, labels) = load_ucr_split(train_path, options)?;
    let test = index_rows(parse_split(test_path)?, &labels, options)?;
    let name = dataset_name(train_path);
    let ds = TimeSeriesDataset {
        name,
        series_length: train[0].len(),
        train,
        test,
        n_classes: labels.n_classes(),
        labels,
    };
    ds.validate()?;
    Ok(ds)
}

fn dataset_name(train_path: &Path) -> String {
    let stem = train_path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    stem.strip_suffix("_TRAIN").unwrap_or(stem).to_string()
}

/// Which split of an archive dataset a file holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Locate `<name>_TRAIN.tsv` (or `.csv`) either directly in `dir` or in
/// `dir/<name>/`, the layout used by the archive releases.
pub fn find_split_file(dir: &Path, name: &str, split: Split) -> Result<PathBuf> {
    let suffix = match split {
        Split::Train => "TRAIN",
        Split::Test => "TEST",
    };
    for base in [dir.join(name), dir.to_path_buf()] {
        for ext in ["tsv", "csv"] {
            let candidate = base.join(format!("{name}_{suffix}.{ext}"));
            if candidate.is_file() {
                return Ok(candidate);
            }
        }
    }
    Err(Error::io(
        dir.join(format!("{name}_{suffix}.tsv")),
        std::io::Error::new(std::io::ErrorKind::NotFound, "dataset file not found"),
    ))
}

/// Write a split in tab-separated archive format (class index as label).
pub fn write_ucr_split(path: &Path, series: &[TimeSeries]) -> Result<()> {
    let mut out = String::new();
    for s in series {
        out.push_str(&s.label.to_string());
        for v in &s.values {
            out.push('\t');
            out.push_str(&format!("{v:?}"));
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Standardize to zero mean and unit population variance. Series whose
/// standard deviation is below [`FLAT_STD`] map to the zero vector.
pub fn z_normalize(series: &TimeSeries) -> TimeSeries {
    let n = series.values.len() as f64;
    let mean = series.values.iter().sum::<f64>() / n;
    let var = series.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let values = if std < FLAT_STD {
        vec![0.0; series.values.len()]
    } else {
        series.values.iter().map(|v| (v - mean) / std).collect()
    };
    TimeSeries::new(values, series.label)
}

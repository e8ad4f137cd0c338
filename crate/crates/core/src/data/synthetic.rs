//! Seeded synthetic two-class datasets: a noisy sine wave, with or without
//! Gaussian bumps added.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{z_normalize, TimeSeries, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::rng::run_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    /// Class 1 carries one bump at the centre.
    SineBump,
    /// Class 1 carries bumps at one and three quarters of the length.
    SineTwoBumps,
    /// Sine vs bump with stronger noise and flipped training labels.
    NoisySineBump,
}

impl SynthKind {
    pub const ALL: [SynthKind; 3] = [SynthKind::SineBump, SynthKind::SineTwoBumps, SynthKind::NoisySineBump];

    pub fn dataset_name(self) -> &'static str {
        match self {
            SynthKind::SineBump => "SineBump",
            SynthKind::SineTwoBumps => "SineTwoBumps",
            SynthKind::NoisySineBump => "NoisySineBump",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            SynthKind::SineBump => "sine-bump",
            SynthKind::SineTwoBumps => "sine-two-bumps",
            SynthKind::NoisySineBump => "noisy-sine-bump",
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SynthKind::ALL
            .into_iter()
            .find(|k| k.slug() == s || k.dataset_name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Domain(format!("unknown synthetic dataset {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub length: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { length: 64, n_train: 50, n_test: 50, seed: 0 }
    }
}

const CYCLES: f64 = 2.0;
const PHASE_JITTER: f64 = 0.3;
const BUMP_AMPLITUDE: f64 = 1.5;
const BUMP_WIDTH: f64 = 0.0625;
const BUMP_SHIFT: f64 = 0.03;

struct Recipe {
    noise: f64,
    label_noise: f64,
    bumps: &'static [f64],
}

fn recipe(kind: SynthKind) -> Recipe {
    match kind {
        SynthKind::SineBump => Recipe { noise: 0.1, label_noise: 0.0, bumps: &[0.5] },
        SynthKind::SineTwoBumps => Recipe { noise: 0.1, label_noise: 0.0, bumps: &[0.25, 0.75] },
        SynthKind::NoisySineBump => Recipe { noise: 0.4, label_noise: 0.1, bumps: &[0.5] },
    }
}

fn draw<R: Rng>(rng: &mut R, length: usize, label: usize, r: &Recipe) -> TimeSeries {
    let noise = Normal::new(0.0, r.noise).expect("positive noise");
    let phase = rng.random_range(-PHASE_JITTER..PHASE_JITTER);
    let shift = rng.random_range(-BUMP_SHIFT..BUMP_SHIFT);
    let n = length as f64;
    let width = BUMP_WIDTH * n;
    let values = (0..length)
        .map(|t| {
            let t = t as f64;
            let mut v = (2.0 * PI * CYCLES * t / n + phase).sin();
            if label == 1 {
                for &centre in r.bumps {
                    let z = (t - (centre + shift) * n) / width;
                    v += BUMP_AMPLITUDE * (-0.5 * z * z).exp();
                }
            }
            v + noise.sample(rng)
        })
        .collect();
    z_normalize(&TimeSeries::new(values, label))
}

fn split<R: Rng>(rng: &mut R, count: usize, length: usize, r: &Recipe) -> Vec<TimeSeries> {
    let mut labels: Vec<usize> = (0..count).map(|i| i % 2).collect();
    labels.shuffle(rng);
    labels.into_iter().map(|y| draw(rng, length, y, r)).collect()
}

/// Generate a balanced two-class dataset. Label noise, when the recipe has
/// any, flips that fraction of training labels; test labels stay clean.
pub fn generate(kind: SynthKind, config: &SynthConfig) -> Result<TimeSeriesDataset> {
    if config.length < 8 || config.n_train < 2 || config.n_test < 1 {
        return Err(Error::Domain("synthetic datasets need length >= 8, >= 2 train and >= 1 test series".into()));
    }
    let r = recipe(kind);
    let mut rng = run_rng(config.seed);
    let mut train = split(&mut rng, config.n_train, config.length, &r);
    let test = split(&mut rng, config.n_test, config.length, &r);
    let flips = (r.label_noise * config.n_train as f64).round() as usize;
    let mut idx: Vec<usize> = (0..config.n_train).collect();
    idx.shuffle(&mut rng);
    for &i in &idx[..flips] {
        train[i].label = 1 - train[i].label;
    }
    TimeSeriesDataset::from_parts(kind.dataset_name(), train, test, 2)
}

//! Central finite-difference oracle for layer and model gradients.
//!
//! Only forward passes are used to build the numerical gradient, so the
//! oracle stays independent of the analytic backward code it checks.

use rand::Rng;

use super::layer::{ForwardCtx, Layer, Mode};
use super::tensor::Tensor;
use crate::error::Result;
use crate::rng::{run_rng, RunRng};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for the relative error of near-zero gradients.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
}

impl GradCheckReport {
    fn new() -> Self {
        Self { max_rel_error: 0.0, checked: 0 }
    }

    pub fn record(&mut self, analytic: f64, numeric: f64) {
        self.max_rel_error = self.max_rel_error.max(relative_error(analytic, numeric));
        self.checked += 1;
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.checked += other.checked;
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central difference of `f` with respect to every entry of `x`.
pub fn numeric_gradient(x: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + FD_STEP;
            let up = f(x);
            x[i] = orig - FD_STEP;
            let down = f(x);
            x[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Check a single layer in training mode on the objective `sum(r * y)` with a
/// random projection `r`. Dropout masks are replayed from `seed`.
pub fn check_layer(layer: &Layer<f64>, inputs: &[Tensor<f64>], seed: u64) -> Result<GradCheckReport> {
    let forward = |layer: &Layer<f64>, inputs: &[Tensor<f64>]| {
        let refs: Vec<&Tensor<f64>> = inputs.iter().collect();
        let mut rng = run_rng(seed);
        layer.forward(&refs, &mut ForwardCtx { mode: Mode::Train, rng: &mut rng })
    };
    let (y, cache) = forward(layer, inputs)?;
    let mut proj_rng = run_rng(seed ^ 0x9e37_79b9_7f4a_7c15);
    let r: Vec<f64> = (0..y.len()).map(|_| proj_rng.random_range(-1.0..1.0)).collect();
    let objective = |y: &Tensor<f64>| y.data().iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
    let g = Tensor::from_vec(y.shape(), r.clone())?;
    let (gx, gp) = layer.backward(&cache, &g)?;

    let mut report = GradCheckReport::new();
    for (k, analytic) in gx.iter().enumerate() {
        let mut perturbed = inputs.to_vec();
        let mut flat = perturbed[k].data().to_vec();
        let numeric = numeric_gradient(&mut flat, |vals| {
            perturbed[k] = Tensor::from_vec(inputs[k].shape(), vals.to_vec()).unwrap();
            objective(&forward(layer, &perturbed).unwrap().0)
        });
        for (a, n) in analytic.data().iter().zip(numeric) {
            report.record(*a, n);
        }
    }
    for (p, analytic) in gp.iter().enumerate() {
        let mut probe = layer.clone();
        let mut flat = layer.params()[p].data().to_vec();
        let shape = layer.params()[p].shape().to_vec();
        let numeric = numeric_gradient(&mut flat, |vals| {
            *probe.params_mut()[p] = Tensor::from_vec(&shape, vals.to_vec()).unwrap();
            objective(&forward(&probe, inputs).unwrap().0)
        });
        for (a, n) in analytic.data().iter().zip(numeric) {
            report.record(*a, n);
        }
    }
    Ok(report)
}

/// Uniform random tensor in `[-1, 1)`.
pub fn random_tensor(shape: &[usize], rng: &mut RunRng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape product")
}

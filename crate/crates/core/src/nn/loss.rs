use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Tolerance on probability rows fed to cross-entropy.
pub const DISTRIBUTION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean over the batch of `-ln p(true class)`.
    CrossEntropy,
    /// Mean over all entries of the squared difference to the one-hot target.
    Mse,
}

/// Loss value and its gradient with respect to `output` (`batch x classes`).
pub fn loss<T: Scalar>(kind: LossKind, output: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let (b, c) = output.dims2()?;
    if labels.len() != b {
        return Err(Error::Shape(format!("{} labels for a batch of {b}", labels.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Domain(format!("label {l} outside {c} classes")));
    }
    let mut grad = Tensor::zeros(&[b, c]);
    let bn = T::of(b as f64);
    let value = match kind {
        LossKind::CrossEntropy => {
            let mut total = T::zero();
            for (bi, &l) in labels.iter().enumerate() {
                let row = output.row(bi);
                let sum: T = row.iter().copied().sum();
                if (sum.as_f64() - 1.0).abs() > DISTRIBUTION_TOL || row.iter().any(|&p| p < T::zero()) {
                    return Err(Error::Domain(format!("row {bi} is not a probability distribution")));
                }
                let p = row[l].max(T::min_positive_value());
                total = total - p.ln();
                grad.data_mut()[bi * c + l] = -T::one() / (p * bn);
            }
            total / bn
        }
        LossKind::Mse => {
            let n = T::of((b * c) as f64);
            let two = T::of(2.0);
            let mut total = T::zero();
            for (bi, &l) in labels.iter().enumerate() {
                for j in 0..c {
                    let target = if j == l { T::one() } else { T::zero() };
                    let d = output.data()[bi * c + j] - target;
                    total = total + d * d;
                    grad.data_mut()[bi * c + j] = two * d / n;
                }
            }
            total / n
        }
    };
    Ok((value, grad))
}

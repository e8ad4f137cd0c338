//! End-to-end finite-difference check of a model graph plus its loss.

use rand::Rng;

use super::graph::ModelGraph;
use super::hyper::{ArchSpec, ConvStackHyper, EncoderHyper, McdcnnHyper, MlpHyper, TimeCnnHyper};
use super::ArchKind;
use crate::error::Result;
use crate::nn::gradcheck::{numeric_gradient, GradCheckReport};
use crate::nn::{loss, Mode, Tensor};
use crate::rng::run_rng;

/// Narrow variants of every architecture, small enough to perturb every
/// parameter one at a time.
pub fn tiny_spec(kind: ArchKind) -> ArchSpec {
    match kind {
        ArchKind::Mlp => ArchSpec::Mlp(MlpHyper { hidden: vec![7, 6, 5], dropout: vec![0.1, 0.2, 0.2, 0.3] }),
        ArchKind::Fcn => ArchSpec::Fcn(ConvStackHyper { filters: vec![4, 5, 4], kernels: vec![8, 5, 3] }),
        ArchKind::ResNet => ArchSpec::Resnet(ConvStackHyper { filters: vec![3, 4, 4], kernels: vec![8, 5, 3] }),
        ArchKind::Encoder => ArchSpec::Encoder(EncoderHyper { filters: vec![3, 4, 6], kernels: vec![5, 11, 21], dropout: 0.2, pool: 2 }),
        ArchKind::Mcdcnn => ArchSpec::Mcdcnn(McdcnnHyper { filters: vec![3, 3], kernel: 5, pool: 2, dense: 9 }),
        ArchKind::TimeCnn => ArchSpec::Timecnn(TimeCnnHyper { filters: vec![3, 4], kernel: 7, pool: 3 }),
    }
}

/// Compare analytic gradients of the training loss against central
/// differences for the input and every parameter. Training mode, with the
/// dropout masks replayed from `seed` on every evaluation. Zero-initialized
/// biases put ReLU inputs exactly on the kink when a row is fully dropped, so
/// vector parameters are jittered away from their initial values first.
pub fn check_model(model: &ModelGraph<f64>, batch: &Tensor<f64>, labels: &[usize], seed: u64) -> Result<GradCheckReport> {
    let mut model = model.clone();
    let mut jitter = run_rng(seed ^ 0x5eed);
    for p in model.params_mut() {
        if p.rank() == 1 {
            for v in p.data_mut() {
                *v += jitter.random_range(-0.1..0.1);
            }
        }
    }
    let model = &model;
    let kind = model.loss_kind();
    let value = |m: &ModelGraph<f64>, x: &Tensor<f64>| -> f64 {
        let (out, _) = m.forward(x, Mode::Train, &mut run_rng(seed)).unwrap();
        loss(kind, &out, labels).unwrap().0
    };
    let (out, cache) = model.forward(batch, Mode::Train, &mut run_rng(seed))?;
    let (_, g) = loss(kind, &out, labels)?;
    let (gin, gparams) = model.backward(&cache, &g)?;

    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0 };
    let mut flat = batch.data().to_vec();
    let numeric = numeric_gradient(&mut flat, |vals| value(model, &Tensor::from_vec(batch.shape(), vals.to_vec()).unwrap()));
    for (a, n) in gin.data().iter().zip(numeric) {
        report.record(*a, n);
    }
    let mut probe = model.clone();
    for (p, analytic) in gparams.iter().enumerate() {
        let shape = model.params()[p].shape().to_vec();
        let mut flat = model.params()[p].data().to_vec();
        let numeric = numeric_gradient(&mut flat, |vals| {
            *probe.params_mut()[p] = Tensor::from_vec(&shape, vals.to_vec()).unwrap();
            value(&probe, batch)
        });
        *probe.params_mut()[p] = model.params()[p].clone();
        for (a, n) in analytic.data().iter().zip(numeric) {
            report.record(*a, n);
        }
    }
    Ok(report)
}

/// Random batch and labels for [`check_model`].
pub fn random_problem(batch: usize, length: usize, n_classes: usize, seed: u64) -> (Tensor<f64>, Vec<usize>) {
    let mut rng = run_rng(seed);
    let data = (0..batch * length).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels = (0..batch).map(|_| rng.random_range(0..n_classes)).collect();
    (Tensor::from_vec(&[batch, 1, length], data).expect("sized"), labels)
}

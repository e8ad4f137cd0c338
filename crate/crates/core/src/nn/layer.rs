//! Layer kinds with explicit forward and reverse-mode backward passes.
//!
//! Every forward call returns a [`Cache`] that the matching backward call
//! consumes. Backward refuses caches produced by a different layer kind or
//! for different parameter shapes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init::glorot_uniform_with;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Batch-norm running-statistics momentum.
pub const BN_MOMENTUM: f64 = 0.99;
/// Variance floor added inside the batch-norm square root.
pub const BN_EPSILON: f64 = 1e-7;
/// Initial PReLU slope for negative inputs.
pub const PRELU_INIT: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Zero padding keeping the length; the odd cell goes on the right.
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv1d,
    BatchNorm,
    Dense,
    Relu,
    Sigmoid,
    Prelu,
    Dropout,
    MaxPool,
    AvgPool,
    GlobalAvgPool,
    Softmax,
    Add,
    AttentionFuse,
    Concat,
    Flatten,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<T> {
    /// `out x in x kernel`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub padding: Padding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    /// `out x in`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv1d(Conv1d<T>),
    BatchNorm(BatchNorm<T>),
    Dense(Dense<T>),
    Relu,
    Sigmoid,
    /// Per-channel learned negative slope.
    Prelu { alpha: Tensor<T> },
    /// Inverted dropout: kept units are scaled by `1 / (1 - rate)` in training.
    Dropout { rate: f64 },
    MaxPool { width: usize },
    AvgPool { width: usize },
    GlobalAvgPool,
    Softmax,
    /// Sum of all inputs (residual merge).
    Add,
    /// Splits channels in half: the second half is softmaxed over time and
    /// weights the first half, which is then summed over time.
    AttentionFuse,
    /// Concatenation along the channel / feature axis.
    Concat,
    Flatten,
}

/// Everything a backward pass needs from its forward pass.
#[derive(Debug, Clone)]
pub struct Cache<T> {
    kind: LayerKind,
    param_shapes: Vec<Vec<usize>>,
    input_shapes: Vec<Vec<usize>>,
    saved: Saved<T>,
}

#[derive(Debug, Clone)]
enum Saved<T> {
    None,
    Input(Tensor<T>),
    Output(Tensor<T>),
    BatchNorm { xhat: Tensor<T>, inv_std: Vec<T>, batch_stats: Option<(Vec<T>, Vec<T>)> },
    Mask(Vec<T>),
    Argmax(Vec<usize>),
    Attention { input: Tensor<T>, weights: Vec<T> },
}

/// Forward-pass context: mode plus the run RNG dropout draws from.
pub struct ForwardCtx<'a, R: Rng> {
    pub mode: Mode,
    pub rng: &'a mut R,
}

fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

impl<T: Scalar> Conv1d<T> {
    pub fn new<R: Rng>(in_ch: usize, out_ch: usize, kernel: usize, padding: Padding, rng: &mut R) -> Result<Self> {
        let weight = glorot_uniform_with(in_ch * kernel, out_ch * kernel, &[out_ch, in_ch, kernel], rng)?;
        Ok(Self { weight, bias: Tensor::zeros(&[out_ch]), padding })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    fn left_pad(&self) -> usize {
        match self.padding {
            Padding::Same => (self.kernel() - 1) / 2,
            Padding::Valid => 0,
        }
    }

    pub fn output_len(&self, input_len: usize) -> Result<usize> {
        match self.padding {
            Padding::Same => Ok(input_len),
            Padding::Valid if input_len >= self.kernel() => Ok(input_len - self.kernel() + 1),
            Padding::Valid => Err(shape_err(format!(
                "valid convolution with kernel {} on length {input_len}",
                self.kernel()
            ))),
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, c, t) = x.dims3()?;
        if c != self.in_channels() {
            return Err(shape_err(format!("conv1d expects {} channels, got {c}", self.in_channels())));
        }
        let (oc, k, left) = (self.out_channels(), self.kernel(), self.left_pad());
        let tout = self.output_len(t)?;
        let w = self.weight.data();
        let mut y = Tensor::zeros(&[b, oc, tout]);
        let yd = y.data_mut();
        let xd = x.data();
        for bi in 0..b {
            for o in 0..oc {
                let out = &mut yd[(bi * oc + o) * tout..(bi * oc + o + 1) * tout];
                out.fill(self.bias.data()[o]);
                for i in 0..c {
                    let xi = &xd[(bi * c + i) * t..(bi * c + i + 1) * t];
                    for kk in 0..k {
                        let wv = w[(o * c + i) * k + kk];
                        // output position p reads input p + kk - left
                        let lo = left.saturating_sub(kk);
                        let hi = tout.min((t + left).saturating_sub(kk));
                        if lo >= hi {
                            continue;
                        }
                        let off = lo + kk - left;
                        for (yo, &xv) in out[lo..hi].iter_mut().zip(&xi[off..off + hi - lo]) {
                            *yo = *yo + wv * xv;
                        }
                    }
                }
            }
        }
        Ok(y)
    }

    fn backward(&self, x: &Tensor<T>, g: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
        let (b, c, t) = x.dims3()?;
        let (oc, k, left) = (self.out_channels(), self.kernel(), self.left_pad());
        let tout = self.output_len(t)?;
        if g.shape() != [b, oc, tout] {
            return Err(shape_err(format!("conv1d grad shape {:?} != {:?}", g.shape(), [b, oc, tout])));
        }
        let w = self.weight.data();
        let mut gx = Tensor::zeros(x.shape());
        let mut gw = Tensor::zeros(self.weight.shape());
        let mut gb = Tensor::zeros(self.bias.shape());
        let (xd, gd) = (x.data(), g.data());
        for bi in 0..b {
            for o in 0..oc {
                let go = &gd[(bi * oc + o) * tout..(bi * oc + o + 1) * tout];
                gb.data_mut()[o] = gb.data()[o] + go.iter().copied().sum::<T>();
                for i in 0..c {
                    let base = (bi * c + i) * t;
                    for kk in 0..k {
                        let lo = left.saturating_sub(kk);
                        let hi = tout.min((t + left).saturating_sub(kk));
                        if lo >= hi {
                            continue;
                        }
                        let off = base + lo + kk - left;
                        let wi = (o * c + i) * k + kk;
                        let wv = w[wi];
                        let mut acc = T::zero();
                        for (&gv, &xv) in go[lo..hi].iter().zip(&xd[off..off + hi - lo]) {
                            acc = acc + gv * xv;
                        }
                        gw.data_mut()[wi] = gw.data()[wi] + acc;
                        for (gxv, &gv) in gx.data_mut()[off..off + hi - lo].iter_mut().zip(&go[lo..hi]) {
                            *gxv = *gxv + wv * gv;
                        }
                    }
                }
            }
        }
        Ok((gx, gw, gb))
    }
}

impl<T: Scalar> Dense<T> {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Result<Self> {
        let weight = glorot_uniform_with(inputs, outputs, &[outputs, inputs], rng)?;
        Ok(Self { weight, bias: Tensor::zeros(&[outputs]) })
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, f) = x.dims2()?;
        if f != self.inputs() {
            return Err(shape_err(format!("dense expects {} features, got {f}", self.inputs())));
        }
        let o = self.outputs();
        let mut y = Tensor::zeros(&[b, o]);
        for bi in 0..b {
            let xr = x.row(bi);
            for j in 0..o {
                let wr = &self.weight.data()[j * f..(j + 1) * f];
                let dot: T = wr.iter().zip(xr).map(|(&w, &v)| w * v).sum();
                y.data_mut()[bi * o + j] = dot + self.bias.data()[j];
            }
        }
        Ok(y)
    }

    fn backward(&self, x: &Tensor<T>, g: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
        let (b, f) = x.dims2()?;
        let o = self.outputs();
        if g.shape() != [b, o] {
            return Err(shape_err(format!("dense grad shape {:?} != {:?}", g.shape(), [b, o])));
        }
        let mut gx = Tensor::zeros(&[b, f]);
        let mut gw = Tensor::zeros(&[o, f]);
        let mut gb = Tensor::zeros(&[o]);
        let w = self.weight.data();
        for bi in 0..b {
            let xr = x.row(bi);
            for j in 0..o {
                let gv = g.data()[bi * o + j];
                gb.data_mut()[j] = gb.data()[j] + gv;
                let gwr = &mut gw.data_mut()[j * f..(j + 1) * f];
                for (a, &xv) in gwr.iter_mut().zip(xr) {
                    *a = *a + gv * xv;
                }
                let gxr = &mut gx.data_mut()[bi * f..(bi + 1) * f];
                for (a, &wv) in gxr.iter_mut().zip(&w[j * f..(j + 1) * f]) {
                    *a = *a + gv * wv;
                }
            }
        }
        Ok((gx, gw, gb))
    }
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::filled(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], T::one()),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Fold batch statistics into the running estimates with [`BN_MOMENTUM`].
    fn absorb(&mut self, mean: &[T], var: &[T]) {
        let m = T::of(BN_MOMENTUM);
        for (r, &v) in self.running_mean.data_mut().iter_mut().zip(mean) {
            *r = m * *r + (T::one() - m) * v;
        }
        for (r, &v) in self.running_var.data_mut().iter_mut().zip(var) {
            *r = m * *r + (T::one() - m) * v;
        }
    }

    pub fn reset_running_stats(&mut self) {
        self.running_mean = Tensor::zeros(self.running_mean.shape());
        self.running_var = Tensor::filled(self.running_var.shape(), T::one());
    }
}

/// `(outer, channels, inner)` view of a 2-D or 3-D activation, normalizing
/// over `outer x inner` per channel.
fn channel_view<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match x.shape() {
        &[b, c, t] => Ok((b, c, t)),
        &[b, f] => Ok((b, f, 1)),
        s => Err(shape_err(format!("expected 2-D or 3-D activation, got {s:?}"))),
    }
}

fn batch_norm_forward<T: Scalar>(bn: &BatchNorm<T>, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Saved<T>)> {
    let (b, c, t) = channel_view(x)?;
    if c != bn.channels() {
        return Err(shape_err(format!("batch norm expects {} channels, got {c}", bn.channels())));
    }
    let n = T::of((b * t) as f64);
    let eps = T::of(BN_EPSILON);
    let mut xhat = Tensor::zeros(x.shape());
    let mut inv_std = vec![T::zero(); c];
    let mut stats = (vec![T::zero(); c], vec![T::zero(); c]);
    let xd = x.data();
    for ch in 0..c {
        let idx = |bi: usize, ti: usize| (bi * c + ch) * t + ti;
        let (mean, var) = match mode {
            Mode::Train => {
                let mut s = T::zero();
                for bi in 0..b {
                    for ti in 0..t {
                        s = s + xd[idx(bi, ti)];
                    }
                }
                let mean = s / n;
                let mut v = T::zero();
                for bi in 0..b {
                    for ti in 0..t {
                        let d = xd[idx(bi, ti)] - mean;
                        v = v + d * d;
                    }
                }
                let var = v / n;
                stats.0[ch] = mean;
                stats.1[ch] = var;
                (mean, var)
            }
            Mode::Eval => (bn.running_mean.data()[ch], bn.running_var.data()[ch]),
        };
        let is = T::one() / (var + eps).sqrt();
        inv_std[ch] = is;
        for bi in 0..b {
            for ti in 0..t {
                let i = idx(bi, ti);
                xhat.data_mut()[i] = (xd[i] - mean) * is;
            }
        }
    }
    let mut y = xhat.clone();
    for ch in 0..c {
        let (gm, bt) = (bn.gamma.data()[ch], bn.beta.data()[ch]);
        for bi in 0..b {
            for ti in 0..t {
                let i = (bi * c + ch) * t + ti;
                y.data_mut()[i] = gm * xhat.data()[i] + bt;
            }
        }
    }
    let batch_stats = (mode == Mode::Train).then_some(stats);
    Ok((y, Saved::BatchNorm { xhat, inv_std, batch_stats }))
}

fn batch_norm_backward<T: Scalar>(
    bn: &BatchNorm<T>,
    xhat: &Tensor<T>,
    inv_std: &[T],
    train: bool,
    g: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    if g.shape() != xhat.shape() {
        return Err(shape_err("batch norm grad shape mismatch"));
    }
    let (b, c, t) = channel_view(g)?;
    let n = T::of((b * t) as f64);
    let mut gx = Tensor::zeros(g.shape());
    let mut gg = Tensor::zeros(&[c]);
    let mut gbeta = Tensor::zeros(&[c]);
    for ch in 0..c {
        let idxs = || (0..b).flat_map(move |bi| (0..t).map(move |ti| (bi * c + ch) * t + ti));
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for i in idxs() {
            sum_g = sum_g + g.data()[i];
            sum_gx = sum_gx + g.data()[i] * xhat.data()[i];
        }
        gg.data_mut()[ch] = sum_gx;
        gbeta.data_mut()[ch] = sum_g;
        let gm = bn.gamma.data()[ch];
        let is = inv_std[ch];
        for i in idxs() {
            gx.data_mut()[i] = if train {
                // d/dx of gamma * (x - mean(x)) / std(x) + beta
                gm * is * (g.data()[i] - sum_g / n - xhat.data()[i] * sum_gx / n)
            } else {
                gm * is * g.data()[i]
            };
        }
    }
    Ok((gx, gg, gbeta))
}

fn pool_dims<T: Scalar>(x: &Tensor<T>, width: usize) -> Result<(usize, usize, usize, usize)> {
    let (b, c, t) = x.dims3()?;
    if width == 0 || t / width == 0 {
        return Err(shape_err(format!("pool width {width} does not fit length {t}")));
    }
    Ok((b, c, t, t / width))
}

fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c) = x.dims2()?;
    let mut y = Tensor::zeros(&[b, c]);
    for bi in 0..b {
        let r = x.row(bi);
        let m = r.iter().copied().fold(T::neg_infinity(), T::max);
        let e: Vec<T> = r.iter().map(|&v| (v - m).exp()).collect();
        let s: T = e.iter().copied().sum();
        for (j, ev) in e.into_iter().enumerate() {
            y.data_mut()[bi * c + j] = ev / s;
        }
    }
    Ok(y)
}

fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv1d(_) => LayerKind::Conv1d,
            Layer::BatchNorm(_) => LayerKind::BatchNorm,
            Layer::Dense(_) => LayerKind::Dense,
            Layer::Relu => LayerKind::Relu,
            Layer::Sigmoid => LayerKind::Sigmoid,
            Layer::Prelu { .. } => LayerKind::Prelu,
            Layer::Dropout { .. } => LayerKind::Dropout,
            Layer::MaxPool { .. } => LayerKind::MaxPool,
            Layer::AvgPool { .. } => LayerKind::AvgPool,
            Layer::GlobalAvgPool => LayerKind::GlobalAvgPool,
            Layer::Softmax => LayerKind::Softmax,
            Layer::Add => LayerKind::Add,
            Layer::AttentionFuse => LayerKind::AttentionFuse,
            Layer::Concat => LayerKind::Concat,
            Layer::Flatten => LayerKind::Flatten,
        }
    }

    pub fn prelu(channels: usize) -> Self {
        Layer::Prelu { alpha: Tensor::filled(&[channels], T::of(PRELU_INIT)) }
    }

    pub fn dropout(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Domain(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Layer::Dropout { rate })
    }

    /// Trainable parameters in a fixed order.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Conv1d(c) => vec![&c.weight, &c.bias],
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::BatchNorm(bn) => vec![&bn.gamma, &bn.beta],
            Layer::Prelu { alpha } => vec![alpha],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Conv1d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::BatchNorm(bn) => vec![&mut bn.gamma, &mut bn.beta],
            Layer::Prelu { alpha } => vec![alpha],
            _ => Vec::new(),
        }
    }

    /// Non-trainable state saved alongside the parameters.
    pub fn buffers(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::BatchNorm(bn) => vec![&bn.running_mean, &bn.running_var],
            _ => Vec::new(),
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::BatchNorm(bn) => vec![&mut bn.running_mean, &mut bn.running_var],
            _ => Vec::new(),
        }
    }

    /// Parameters then buffers, the checkpoint payload order.
    pub fn state_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::BatchNorm(bn) => vec![&mut bn.gamma, &mut bn.beta, &mut bn.running_mean, &mut bn.running_var],
            other => other.params_mut(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.params().iter().map(|p| p.shape().to_vec()).collect()
    }

    pub fn arity_ok(&self, n: usize) -> bool {
        match self {
            Layer::Add | Layer::Concat => n >= 1,
            _ => n == 1,
        }
    }

    /// Apply training-mode side effects recorded in `cache` (batch-norm
    /// running statistics). A no-op for every other layer and for eval caches.
    pub fn commit(&mut self, cache: &Cache<T>) -> Result<()> {
        if cache.kind != self.kind() {
            return Err(Error::State(format!("cannot commit a {:?} cache to {:?}", cache.kind, self.kind())));
        }
        if let (Layer::BatchNorm(bn), Saved::BatchNorm { batch_stats: Some((mean, var)), .. }) = (self, &cache.saved) {
            bn.absorb(mean, var);
        }
        Ok(())
    }

    pub fn forward<R: Rng>(&self, inputs: &[&Tensor<T>], ctx: &mut ForwardCtx<'_, R>) -> Result<(Tensor<T>, Cache<T>)> {
        if !self.arity_ok(inputs.len()) {
            return Err(shape_err(format!("{:?} cannot take {} inputs", self.kind(), inputs.len())));
        }
        let x = inputs[0];
        let (y, saved) = match self {
            Layer::Conv1d(conv) => (conv.forward(x)?, Saved::Input(x.clone())),
            Layer::Dense(d) => (d.forward(x)?, Saved::Input(x.clone())),
            Layer::BatchNorm(bn) => batch_norm_forward(bn, x, ctx.mode)?,
            Layer::Relu => (x.map(|v| if v > T::zero() { v } else { T::zero() }), Saved::Input(x.clone())),
            Layer::Sigmoid => {
                let y = x.map(sigmoid);
                (y.clone(), Saved::Output(y))
            }
            Layer::Prelu { alpha } => {
                let (b, c, t) = channel_view(x)?;
                if c != alpha.len() {
                    return Err(shape_err(format!("prelu expects {} channels, got {c}", alpha.len())));
                }
                let mut y = x.clone();
                for bi in 0..b {
                    for ch in 0..c {
                        let a = alpha.data()[ch];
                        for v in &mut y.data_mut()[(bi * c + ch) * t..(bi * c + ch + 1) * t] {
                            if *v <= T::zero() {
                                *v = a * *v;
                            }
                        }
                    }
                }
                (y, Saved::Input(x.clone()))
            }
            Layer::Dropout { rate } => match ctx.mode {
                Mode::Eval => (x.clone(), Saved::None),
                Mode::Train => {
                    let keep = T::one() / T::of(1.0 - *rate);
                    let mask: Vec<T> = (0..x.len())
                        .map(|_| if ctx.rng.random::<f64>() < *rate { T::zero() } else { keep })
                        .collect();
                    let mut y = x.clone();
                    for (v, &m) in y.data_mut().iter_mut().zip(&mask) {
                        *v = *v * m;
                    }
                    (y, Saved::Mask(mask))
                }
            },
            Layer::MaxPool { width } => {
                let (b, c, t, to) = pool_dims(x, *width)?;
                let mut y = Tensor::zeros(&[b, c, to]);
                let mut arg = vec![0; b * c * to];
                for row in 0..b * c {
                    for p in 0..to {
                        let start = row * t + p * *width;
                        let mut best = start;
                        for i in start + 1..start + *width {
                            if x.data()[i] > x.data()[best] {
                                best = i;
                            }
                        }
                        y.data_mut()[row * to + p] = x.data()[best];
                        arg[row * to + p] = best;
                    }
                }
                (y, Saved::Argmax(arg))
            }
            Layer::AvgPool { width } => {
                let (b, c, t, to) = pool_dims(x, *width)?;
                let w = T::of(*width as f64);
                let mut y = Tensor::zeros(&[b, c, to]);
                for row in 0..b * c {
                    for p in 0..to {
                        let start = row * t + p * *width;
                        let s: T = x.data()[start..start + *width].iter().copied().sum();
                        y.data_mut()[row * to + p] = s / w;
                    }
                }
                (y, Saved::None)
            }
            Layer::GlobalAvgPool => {
                let (b, c, t) = x.dims3()?;
                let n = T::of(t as f64);
                let data = x.data().chunks(t).map(|ch| ch.iter().copied().sum::<T>() / n).collect();
                (Tensor::from_vec(&[b, c], data)?, Saved::None)
            }
            Layer::Softmax => {
                let y = softmax_rows(x)?;
                (y.clone(), Saved::Output(y))
            }
            Layer::Add => {
                let mut y = x.clone();
                for other in &inputs[1..] {
                    if other.shape() != x.shape() {
                        return Err(shape_err(format!("add of {:?} and {:?}", x.shape(), other.shape())));
                    }
                    y.add_assign(other);
                }
                (y, Saved::None)
            }
            Layer::AttentionFuse => {
                let (b, c, t) = x.dims3()?;
                if c % 2 != 0 {
                    return Err(shape_err(format!("attention fuse needs an even channel count, got {c}")));
                }
                let d = c / 2;
                let mut weights = vec![T::zero(); b * d * t];
                let mut y = Tensor::zeros(&[b, d]);
                for bi in 0..b {
                    for ch in 0..d {
                        let vals = &x.data()[(bi * c + ch) * t..(bi * c + ch + 1) * t];
                        let scores = &x.data()[(bi * c + d + ch) * t..(bi * c + d + ch + 1) * t];
                        let m = scores.iter().copied().fold(T::neg_infinity(), T::max);
                        let w = &mut weights[(bi * d + ch) * t..(bi * d + ch + 1) * t];
                        let mut s = T::zero();
                        for (wi, &sv) in w.iter_mut().zip(scores) {
                            *wi = (sv - m).exp();
                            s = s + *wi;
                        }
                        let mut acc = T::zero();
                        for (wi, &v) in w.iter_mut().zip(vals) {
                            *wi = *wi / s;
                            acc = acc + *wi * v;
                        }
                        y.data_mut()[bi * d + ch] = acc;
                    }
                }
                (y, Saved::Attention { input: x.clone(), weights })
            }
            Layer::Concat => {
                let b = x.shape()[0];
                let tail = &x.shape()[2..];
                let mut channels = 0;
                for inp in inputs {
                    if inp.rank() != x.rank() || inp.shape()[0] != b || &inp.shape()[2..] != tail {
                        return Err(shape_err(format!("concat of {:?} and {:?}", x.shape(), inp.shape())));
                    }
                    channels += inp.shape()[1];
                }
                let inner: usize = tail.iter().product();
                let mut data = Vec::with_capacity(b * channels * inner);
                for bi in 0..b {
                    for inp in inputs {
                        let w = inp.shape()[1] * inner;
                        data.extend_from_slice(&inp.data()[bi * w..(bi + 1) * w]);
                    }
                }
                let mut shape = vec![b, channels];
                shape.extend_from_slice(tail);
                (Tensor::from_vec(&shape, data)?, Saved::None)
            }
            Layer::Flatten => {
                let b = x.shape()[0];
                let f = x.len() / b.max(1);
                (x.clone().reshaped(&[b, f])?, Saved::None)
            }
        };
        if !y.is_finite() {
            return Err(Error::numerics(format!("{:?} produced a non-finite value", self.kind())));
        }
        let cache = Cache {
            kind: self.kind(),
            param_shapes: self.param_shapes(),
            input_shapes: inputs.iter().map(|i| i.shape().to_vec()).collect(),
            saved,
        };
        Ok((y, cache))
    }

    /// Reverse-mode pass. Returns one gradient per forward input and one per
    /// entry of [`Layer::params`].
    pub fn backward(&self, cache: &Cache<T>, g: &Tensor<T>) -> Result<(Vec<Tensor<T>>, Vec<Tensor<T>>)> {
        if cache.kind != self.kind() || cache.param_shapes != self.param_shapes() {
            return Err(Error::State(format!(
                "cache from {:?} does not belong to this {:?} layer",
                cache.kind,
                self.kind()
            )));
        }
        let in_shape = &cache.input_shapes[0];
        let stale = || Error::State(format!("{:?} cache is missing saved state", self.kind()));
        let (gx, gp) = match (self, &cache.saved) {
            (Layer::Conv1d(conv), Saved::Input(x)) => {
                let (gx, gw, gb) = conv.backward(x, g)?;
                (vec![gx], vec![gw, gb])
            }
            (Layer::Dense(d), Saved::Input(x)) => {
                let (gx, gw, gb) = d.backward(x, g)?;
                (vec![gx], vec![gw, gb])
            }
            (Layer::BatchNorm(bn), Saved::BatchNorm { xhat, inv_std, batch_stats }) => {
                let (gx, gg, gb) = batch_norm_backward(bn, xhat, inv_std, batch_stats.is_some(), g)?;
                (vec![gx], vec![gg, gb])
            }
            (Layer::Relu, Saved::Input(x)) => {
                let mut gx = g.clone();
                for (gv, &xv) in gx.data_mut().iter_mut().zip(x.data()) {
                    if xv <= T::zero() {
                        *gv = T::zero();
                    }
                }
                (vec![gx], vec![])
            }
            (Layer::Sigmoid, Saved::Output(y)) => {
                let mut gx = g.clone();
                for (gv, &yv) in gx.data_mut().iter_mut().zip(y.data()) {
                    *gv = *gv * yv * (T::one() - yv);
                }
                (vec![gx], vec![])
            }
            (Layer::Prelu { alpha }, Saved::Input(x)) => {
                let (b, c, t) = channel_view(x)?;
                let mut gx = g.clone();
                let mut ga = Tensor::zeros(alpha.shape());
                for bi in 0..b {
                    for ch in 0..c {
                        let a = alpha.data()[ch];
                        for i in (bi * c + ch) * t..(bi * c + ch + 1) * t {
                            let xv = x.data()[i];
                            if xv <= T::zero() {
                                ga.data_mut()[ch] = ga.data()[ch] + g.data()[i] * xv;
                                gx.data_mut()[i] = g.data()[i] * a;
                            }
                        }
                    }
                }
                (vec![gx], vec![ga])
            }
            (Layer::Dropout { .. }, Saved::None) => (vec![g.clone()], vec![]),
            (Layer::Dropout { .. }, Saved::Mask(mask)) => {
                let mut gx = g.clone();
                for (gv, &m) in gx.data_mut().iter_mut().zip(mask) {
                    *gv = *gv * m;
                }
                (vec![gx], vec![])
            }
            (Layer::MaxPool { .. }, Saved::Argmax(arg)) => {
                let mut gx = Tensor::zeros(in_shape);
                for (&src, &gv) in arg.iter().zip(g.data()) {
                    gx.data_mut()[src] = gx.data()[src] + gv;
                }
                (vec![gx], vec![])
            }
            (Layer::AvgPool { width }, Saved::None) => {
                let mut gx = Tensor::zeros(in_shape);
                let (t, to) = (in_shape[2], g.shape()[2]);
                let w = T::of(*width as f64);
                for row in 0..in_shape[0] * in_shape[1] {
                    for p in 0..to {
                        let gv = g.data()[row * to + p] / w;
                        for i in row * t + p * width..row * t + (p + 1) * width {
                            gx.data_mut()[i] = gv;
                        }
                    }
                }
                (vec![gx], vec![])
            }
            (Layer::GlobalAvgPool, Saved::None) => {
                let t = in_shape[2];
                let n = T::of(t as f64);
                let mut gx = Tensor::zeros(in_shape);
                for (chunk, &gv) in gx.data_mut().chunks_mut(t).zip(g.data()) {
                    chunk.fill(gv / n);
                }
                (vec![gx], vec![])
            }
            (Layer::Softmax, Saved::Output(y)) => {
                let (b, c) = y.dims2()?;
                let mut gx = Tensor::zeros(&[b, c]);
                for bi in 0..b {
                    let (yr, gr) = (y.row(bi), g.row(bi));
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..c {
                        gx.data_mut()[bi * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                (vec![gx], vec![])
            }
            (Layer::Add, Saved::None) => (cache.input_shapes.iter().map(|_| g.clone()).collect(), vec![]),
            (Layer::AttentionFuse, Saved::Attention { input, weights }) => {
                let (b, c, t) = input.dims3()?;
                let d = c / 2;
                let mut gx = Tensor::zeros(input.shape());
                for bi in 0..b {
                    for ch in 0..d {
                        let gv = g.data()[bi * d + ch];
                        let w = &weights[(bi * d + ch) * t..(bi * d + ch + 1) * t];
                        let vals = &input.data()[(bi * c + ch) * t..(bi * c + ch + 1) * t];
                        // d out / d w_t = v_t; softmax Jacobian folds in the mean
                        let mean: T = w.iter().zip(vals).map(|(&wi, &v)| wi * v).sum();
                        for ti in 0..t {
                            gx.data_mut()[(bi * c + ch) * t + ti] = gv * w[ti];
                            gx.data_mut()[(bi * c + d + ch) * t + ti] = gv * w[ti] * (vals[ti] - mean);
                        }
                    }
                }
                (vec![gx], vec![])
            }
            (Layer::Concat, Saved::None) => {
                let b = in_shape[0];
                let inner: usize = in_shape[2..].iter().product();
                let total: usize = cache.input_shapes.iter().map(|s| s[1]).sum::<usize>() * inner;
                let mut offset = 0;
                let mut grads = Vec::new();
                for s in &cache.input_shapes {
                    let w = s[1] * inner;
                    let mut data = Vec::with_capacity(b * w);
                    for bi in 0..b {
                        data.extend_from_slice(&g.data()[bi * total + offset..bi * total + offset + w]);
                    }
                    grads.push(Tensor::from_vec(s, data)?);
                    offset += w;
                }
                (grads, vec![])
            }
            (Layer::Flatten, Saved::None) => (vec![g.clone().reshaped(in_shape)?], vec![]),
            _ => return Err(stale()),
        };
        for (gi, shape) in gx.iter().zip(&cache.input_shapes) {
            if gi.shape() != shape.as_slice() {
                return Err(shape_err(format!("gradient shape {:?} != input shape {shape:?}", gi.shape())));
            }
        }
        Ok((gx, gp))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_layer, random_tensor};
    use crate::rng::{run_rng, RunRng};

    fn run(layer: &Layer<f64>, inputs: &[&Tensor<f64>], mode: Mode) -> (Tensor<f64>, Cache<f64>) {
        let mut rng = run_rng(0);
        layer.forward(inputs, &mut ForwardCtx { mode, rng: &mut rng }).unwrap()
    }

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    fn conv(w: &[f64], in_ch: usize, out_ch: usize, padding: Padding) -> Layer<f64> {
        let k = w.len() / (in_ch * out_ch);
        Layer::Conv1d(Conv1d { weight: t(&[out_ch, in_ch, k], w), bias: Tensor::zeros(&[out_ch]), padding })
    }

    #[test]
    fn conv_is_cross_correlation() {
        let layer = conv(&[1.0, 0.0, -1.0], 1, 1, Padding::Valid);
        let (y, _) = run(&layer, &[&t(&[1, 1, 4], &[1.0, 2.0, 3.0, 4.0])], Mode::Eval);
        assert_eq!(y.data(), &[-2.0, -2.0]);
    }

    #[test]
    fn same_padding_puts_extra_cell_right() {
        // kernel 4: one zero on the left, two on the right
        let layer = conv(&[1.0, 0.0, 0.0, 0.0], 1, 1, Padding::Same);
        let (y, _) = run(&layer, &[&t(&[1, 1, 3], &[5.0, 6.0, 7.0])], Mode::Eval);
        assert_eq!(y.data(), &[0.0, 5.0, 6.0]);
        let layer = conv(&[0.0, 0.0, 0.0, 1.0], 1, 1, Padding::Same);
        let (y, _) = run(&layer, &[&t(&[1, 1, 3], &[5.0, 6.0, 7.0])], Mode::Eval);
        assert_eq!(y.data(), &[7.0, 0.0, 0.0]);
    }

    #[test]
    fn global_average_pool_and_softmax() {
        let (y, _) = run(&Layer::GlobalAvgPool, &[&t(&[1, 1, 3], &[2.0, 4.0, 6.0])], Mode::Eval);
        assert_eq!(y.data(), &[4.0]);
        let (y, _) = run(&Layer::Softmax, &[&t(&[1, 2], &[0.0, 0.0])], Mode::Eval);
        assert_eq!(y.data(), &[0.5, 0.5]);
    }

    #[test]
    fn dense_backward_is_transpose() {
        let layer = Layer::Dense(Dense { weight: t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), bias: Tensor::zeros(&[2]) });
        let (_, cache) = run(&layer, &[&t(&[1, 3], &[0.1, 0.2, 0.3])], Mode::Train);
        let (gx, _) = layer.backward(&cache, &t(&[1, 2], &[1.0, -1.0])).unwrap();
        assert_eq!(gx[0].data(), &[-3.0, -3.0, -3.0]);
    }

    #[test]
    fn relu_blocks_negative_inputs() {
        let (_, cache) = run(&Layer::Relu, &[&t(&[1, 3], &[-1.0, 2.0, -0.5])], Mode::Train);
        let (gx, _) = Layer::<f64>::Relu.backward(&cache, &t(&[1, 3], &[1.0, 1.0, 1.0])).unwrap();
        assert_eq!(gx[0].data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn dense_three_to_two_has_eight_params() {
        let layer: Layer<f64> = Layer::Dense(Dense::new(3, 2, &mut run_rng(1)).unwrap());
        assert_eq!(layer.param_count(), 8);
        let layer: Layer<f64> = Layer::Conv1d(Conv1d::new(1, 64, 8, Padding::Same, &mut run_rng(1)).unwrap());
        assert_eq!(layer.param_count(), 576);
    }

    #[test]
    fn batch_norm_train_output_is_standardized() {
        let mut rng = run_rng(5);
        let x = random_tensor(&[4, 3, 10], &mut rng).map(|v| 3.0 * v + 1.5);
        let layer = Layer::BatchNorm(BatchNorm::new(3));
        let (y, _) = run(&layer, &[&x], Mode::Train);
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4).flat_map(|b| (0..10).map(move |ti| (b, ti))).map(|(b, ti)| y.data()[(b * 3 + ch) * 10 + ti]).collect();
            let mean = vals.iter().sum::<f64>() / 40.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 40.0;
            assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-6, "channel {ch}: {mean} {var}");
        }
    }

    #[test]
    fn batch_norm_commit_moves_running_stats() {
        let mut layer = Layer::BatchNorm(BatchNorm::new(1));
        let x = t(&[1, 1, 4], &[1.0, 3.0, 1.0, 3.0]);
        let (_, cache) = run(&layer, &[&x], Mode::Train);
        layer.commit(&cache).unwrap();
        let Layer::BatchNorm(bn) = &layer else { unreachable!() };
        assert!((bn.running_mean.data()[0] - 0.02).abs() < 1e-12);
        assert!((bn.running_var.data()[0] - (0.99 + 0.01)).abs() < 1e-12);
    }

    #[test]
    fn dropout_is_identity_in_eval() {
        let x = random_tensor(&[3, 2, 5], &mut run_rng(9));
        let layer = Layer::dropout(0.5).unwrap();
        let (y, _) = run(&layer, &[&x], Mode::Eval);
        assert_eq!(y, x);
        let (y, _) = run(&layer, &[&x], Mode::Train);
        assert!(y.data().iter().zip(x.data()).all(|(a, b)| *a == 0.0 || (*a - 2.0 * b).abs() < 1e-15));
        assert!(Layer::<f64>::dropout(1.0).is_err());
    }

    #[test]
    fn stale_cache_is_state_error() {
        let (_, cache) = run(&Layer::Relu, &[&t(&[1, 2], &[1.0, 2.0])], Mode::Train);
        let err = Layer::<f64>::Sigmoid.backward(&cache, &t(&[1, 2], &[1.0, 1.0])).unwrap_err();
        assert!(matches!(err, Error::State(_)));
        let d1: Layer<f64> = Layer::Dense(Dense::new(2, 3, &mut run_rng(0)).unwrap());
        let d2: Layer<f64> = Layer::Dense(Dense::new(2, 4, &mut run_rng(0)).unwrap());
        let (_, cache) = run(&d1, &[&t(&[1, 2], &[1.0, 2.0])], Mode::Train);
        assert!(matches!(d2.backward(&cache, &Tensor::zeros(&[1, 3])), Err(Error::State(_))));
    }

    #[test]
    fn shape_mismatch_is_shape_error() {
        let layer: Layer<f64> = Layer::Conv1d(Conv1d::new(2, 3, 3, Padding::Same, &mut run_rng(0)).unwrap());
        let mut rng = run_rng(0);
        let err = layer.forward(&[&Tensor::zeros(&[1, 1, 8])], &mut ForwardCtx { mode: Mode::Eval, rng: &mut rng });
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn attention_fuse_uniform_scores_average_values() {
        let x = t(&[1, 2, 4], &[1.0, 2.0, 3.0, 6.0, 0.0, 0.0, 0.0, 0.0]);
        let (y, _) = run(&Layer::AttentionFuse, &[&x], Mode::Eval);
        assert!((y.data()[0] - 3.0).abs() < 1e-12);
    }

    /// One representative instance of every layer kind with matching inputs.
    pub(crate) fn every_kind(rng: &mut RunRng) -> Vec<(Layer<f64>, Vec<Tensor<f64>>)> {
        let x3 = |rng: &mut RunRng, c| random_tensor(&[3, c, 7], rng);
        let mut bn = BatchNorm::new(2);
        bn.gamma = random_tensor(&[2], rng);
        bn.beta = random_tensor(&[2], rng);
        vec![
            (Layer::Conv1d(Conv1d::new(2, 3, 4, Padding::Same, rng).unwrap()), vec![x3(rng, 2)]),
            (Layer::Conv1d(Conv1d::new(2, 3, 3, Padding::Valid, rng).unwrap()), vec![x3(rng, 2)]),
            (Layer::BatchNorm(bn.clone()), vec![x3(rng, 2)]),
            (Layer::BatchNorm(bn), vec![random_tensor(&[4, 2], rng)]),
            (Layer::Dense(Dense::new(5, 3, rng).unwrap()), vec![random_tensor(&[2, 5], rng)]),
            (Layer::Relu, vec![x3(rng, 2)]),
            (Layer::Sigmoid, vec![x3(rng, 2)]),
            (Layer::Prelu { alpha: random_tensor(&[2], rng) }, vec![x3(rng, 2)]),
            (Layer::dropout(0.3).unwrap(), vec![x3(rng, 2)]),
            (Layer::MaxPool { width: 2 }, vec![x3(rng, 2)]),
            (Layer::AvgPool { width: 3 }, vec![x3(rng, 2)]),
            (Layer::GlobalAvgPool, vec![x3(rng, 2)]),
            (Layer::Softmax, vec![random_tensor(&[3, 4], rng)]),
            (Layer::Add, vec![x3(rng, 2), x3(rng, 2)]),
            (Layer::AttentionFuse, vec![x3(rng, 4)]),
            (Layer::Concat, vec![x3(rng, 2), x3(rng, 1)]),
            (Layer::Flatten, vec![x3(rng, 2)]),
        ]
    }

    #[test]
    fn every_layer_kind_passes_gradient_check() {
        let mut rng = run_rng(42);
        let cases = every_kind(&mut rng);
        let kinds: std::collections::HashSet<_> = cases.iter().map(|(l, _)| l.kind()).collect();
        assert_eq!(kinds.len(), 15);
        for (i, (layer, inputs)) in cases.iter().enumerate() {
            let report = check_layer(layer, inputs, i as u64).unwrap();
            assert!(report.max_rel_error < 1e-4, "{:?}: {report:?}", layer.kind());
            assert!(report.checked > 0);
        }
    }
}

//! Small convolutional classifier for scalogram images.
//!
//! conv3x3(8) → relu → maxpool2 → conv3x3(16) → relu → maxpool2 → dense → softmax.
//! Tensors are channel-major (`C x H x W`) flat vectors; all parameters live
//! in one flat buffer so optimizers and checkpoints treat them uniformly.

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};
use crate::scalogram::ScalogramImage;
use crate::target::TargetLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CnnArchitecture {
    pub input_size: usize,
    pub in_channels: usize,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub n_classes: usize,
}

impl Default for CnnArchitecture {
    fn default() -> Self {
        Self {
            input_size: 64,
            in_channels: 3,
            conv1_filters: 8,
            conv2_filters: 16,
            n_classes: TargetLabel::COUNT,
        }
    }
}

/// Offsets of each parameter block inside the flat buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub conv1_w: usize,
    pub conv1_b: usize,
    pub conv2_w: usize,
    pub conv2_b: usize,
    pub dense_w: usize,
    pub dense_b: usize,
    pub total: usize,
}

impl CnnArchitecture {
    /// The 8x8-input variant used for gradient checks.
    pub fn reduced() -> Self {
        Self {
            input_size: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size < 4 || self.input_size % 4 != 0 {
            return Err(Error::Config(format!(
                "input size must be a positive multiple of 4, got {}",
                self.input_size
            )));
        }
        if self.in_channels == 0 || self.conv1_filters == 0 || self.conv2_filters == 0 {
            return Err(Error::Config("channel and filter counts must be >= 1".into()));
        }
        if self.n_classes != TargetLabel::COUNT {
            return Err(Error::Config(format!(
                "output dimension must be {}, got {}",
                TargetLabel::COUNT,
                self.n_classes
            )));
        }
        Ok(())
    }

    pub fn flat_features(&self) -> usize {
        let s = self.input_size / 4;
        self.conv2_filters * s * s
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.input_size * self.input_size
    }

    pub fn layout(&self) -> Layout {
        let c1w = self.conv1_filters * self.in_channels * 9;
        let c2w = self.conv2_filters * self.conv1_filters * 9;
        let dw = self.n_classes * self.flat_features();
        let conv1_w = 0;
        let conv1_b = conv1_w + c1w;
        let conv2_w = conv1_b + self.conv1_filters;
        let conv2_b = conv2_w + c2w;
        let dense_w = conv2_b + self.conv2_filters;
        let dense_b = dense_w + dw;
        Layout {
            conv1_w,
            conv1_b,
            conv2_w,
            conv2_b,
            dense_w,
            dense_b,
            total: dense_b + self.n_classes,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: CnnArchitecture,
    pub data: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(arch: CnnArchitecture) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            arch,
            data: vec![0.0; arch.param_count()],
        })
    }

    pub fn from_vec(arch: CnnArchitecture, data: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if data.len() != arch.param_count() {
            return Err(Error::Dimension(format!(
                "architecture needs {} parameters, got {}",
                arch.param_count(),
                data.len()
            )));
        }
        Ok(Self { arch, data })
    }

    pub fn layout(&self) -> Layout {
        self.arch.layout()
    }

    /// `(name, start, end)` for each block.
    pub fn blocks(&self) -> [(&'static str, usize, usize); 6] {
        let l = self.layout();
        [
            ("conv1.weight", l.conv1_w, l.conv1_b),
            ("conv1.bias", l.conv1_b, l.conv2_w),
            ("conv2.weight", l.conv2_w, l.conv2_b),
            ("conv2.bias", l.conv2_b, l.dense_w),
            ("dense.weight", l.dense_w, l.dense_b),
            ("dense.bias", l.dense_b, l.total),
        ]
    }
}

/// He-uniform weights, zero biases.
pub fn init(arch: CnnArchitecture, seed: u64) -> Result<ModelParams> {
    let mut p = ModelParams::zeros(arch)?;
    let l = arch.layout();
    let fills = [
        (l.conv1_w, l.conv1_b, arch.in_channels * 9),
        (l.conv2_w, l.conv2_b, arch.conv1_filters * 9),
        (l.dense_w, l.dense_b, arch.flat_features()),
    ];
    for (layer, (start, end, fan_in)) in fills.into_iter().enumerate() {
        let bound = (6.0 / fan_in as f64).sqrt();
        let mut rng = rng::stream(seed, Domain::WeightInit, layer as u64);
        for w in &mut p.data[start..end] {
            *w = rng.gen_range(-bound..bound);
        }
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: [f64; TargetLabel::COUNT],
    pub label: TargetLabel,
}

/// HWC image → CHW flat vector.
pub fn to_chw(pixels: &Array3<f64>) -> Vec<f64> {
    let (h, w, c) = pixels.dim();
    let mut out = vec![0.0; c * h * w];
    for ((y, x, k), &v) in pixels.indexed_iter() {
        out[(k * h + y) * w + x] = v;
    }
    out
}

fn conv_forward(input: &[f64], cin: usize, n: usize, weights: &[f64], bias: &[f64], cout: usize) -> Vec<f64> {
    let plane = n * n;
    let mut out = vec![0.0; cout * plane];
    for o in 0..cout {
        let dst = &mut out[o * plane..(o + 1) * plane];
        dst.fill(bias[o]);
        for c in 0..cin {
            let src = &input[c * plane..(c + 1) * plane];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = weights[((o * cin + c) * 3 + ky) * 3 + kx];
                    shifted_axpy(dst, src, n, ky as isize - 1, kx as isize - 1, wv);
                }
            }
        }
    }
    out
}

/// `dst[y, x] += a * src[y + dy, x + dx]` wherever the source is in range.
fn shifted_axpy(dst: &mut [f64], src: &[f64], n: usize, dy: isize, dx: isize, a: f64) {
    let (y0, y1) = ((-dy).max(0) as usize, (n as isize - dy).min(n as isize) as usize);
    let (x0, x1) = ((-dx).max(0) as usize, (n as isize - dx).min(n as isize) as usize);
    for y in y0..y1 {
        let sy = (y as isize + dy) as usize;
        let d = &mut dst[y * n + x0..y * n + x1];
        let s = &src[sy * n + (x0 as isize + dx) as usize..sy * n + (x1 as isize + dx) as usize];
        for (p, q) in d.iter_mut().zip(s) {
            *p += a * q;
        }
    }
}

/// `Σ dst[y, x] * src[y + dy, x + dx]` over the valid overlap.
fn shifted_dot(a: &[f64], src: &[f64], n: usize, dy: isize, dx: isize) -> f64 {
    let (y0, y1) = ((-dy).max(0) as usize, (n as isize - dy).min(n as isize) as usize);
    let (x0, x1) = ((-dx).max(0) as usize, (n as isize - dx).min(n as isize) as usize);
    let mut acc = 0.0;
    for y in y0..y1 {
        let sy = (y as isize + dy) as usize;
        let d = &a[y * n + x0..y * n + x1];
        let s = &src[sy * n + (x0 as isize + dx) as usize..sy * n + (x1 as isize + dx) as usize];
        acc += d.iter().zip(s).map(|(p, q)| p * q).sum::<f64>();
    }
    acc
}

/// Accumulates weight and bias gradients; returns the input gradient when asked.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    dout: &[f64],
    cin: usize,
    n: usize,
    weights: &[f64],
    cout: usize,
    dw: &mut [f64],
    db: &mut [f64],
    want_dinput: bool,
) -> Option<Vec<f64>> {
    let plane = n * n;
    let mut dinput = want_dinput.then(|| vec![0.0; cin * plane]);
    for o in 0..cout {
        let g = &dout[o * plane..(o + 1) * plane];
        db[o] += g.iter().sum::<f64>();
        for c in 0..cin {
            let src = &input[c * plane..(c + 1) * plane];
            for ky in 0..3 {
                for kx in 0..3 {
                    let (dy, dx) = (ky as isize - 1, kx as isize - 1);
                    let idx = ((o * cin + c) * 3 + ky) * 3 + kx;
                    dw[idx] += shifted_dot(g, src, n, dy, dx);
                    if let Some(di) = dinput.as_mut() {
                        // input[y+dy, x+dx] received w * dout[y, x].
                        shifted_axpy(&mut di[c * plane..(c + 1) * plane], g, n, -dy, -dx, weights[idx]);
                    }
                }
            }
        }
    }
    dinput
}

fn relu_inplace(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// 2x2 max pool; returns the pooled values and the flat argmax per output.
fn maxpool(input: &[f64], ch: usize, n: usize) -> (Vec<f64>, Vec<usize>) {
    let m = n / 2;
    let mut out = vec![0.0; ch * m * m];
    let mut arg = vec![0usize; ch * m * m];
    for c in 0..ch {
        for y in 0..m {
            for x in 0..m {
                let base = c * n * n;
                let mut best = base + 2 * y * n + 2 * x;
                for (oy, ox) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + oy) * n + 2 * x + ox;
                    if input[i] > input[best] {
                        best = i;
                    }
                }
                let o = (c * m + y) * m + x;
                out[o] = input[best];
                arg[o] = best;
            }
        }
    }
    (out, arg)
}

struct Trace {
    z1: Vec<f64>,
    p1: Vec<f64>,
    arg1: Vec<usize>,
    z2: Vec<f64>,
    p2: Vec<f64>,
    arg2: Vec<usize>,
    probs: Vec<f64>,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn forward_trace(params: &ModelParams, x: &[f64]) -> Trace {
    let a = params.arch;
    let l = params.layout();
    let d = &params.data;
    let n = a.input_size;
    let z1 = conv_forward(x, a.in_channels, n, &d[l.conv1_w..l.conv1_b], &d[l.conv1_b..l.conv2_w], a.conv1_filters);
    let mut a1 = z1.clone();
    relu_inplace(&mut a1);
    let (p1, arg1) = maxpool(&a1, a.conv1_filters, n);
    let n2 = n / 2;
    let z2 = conv_forward(&p1, a.conv1_filters, n2, &d[l.conv2_w..l.conv2_b], &d[l.conv2_b..l.dense_w], a.conv2_filters);
    let mut a2 = z2.clone();
    relu_inplace(&mut a2);
    let (p2, arg2) = maxpool(&a2, a.conv2_filters, n2);
    let f = a.flat_features();
    let logits: Vec<f64> = (0..a.n_classes)
        .map(|k| {
            let w = &d[l.dense_w + k * f..l.dense_w + (k + 1) * f];
            d[l.dense_b + k] + w.iter().zip(&p2).map(|(p, q)| p * q).sum::<f64>()
        })
        .collect();
    Trace {
        z1,
        p1,
        arg1,
        z2,
        p2,
        arg2,
        probs: softmax(&logits),
    }
}

fn check_input(arch: &CnnArchitecture, x: &[f64]) -> Result<()> {
    if x.len() != arch.input_len() {
        return Err(Error::Dimension(format!(
            "network expects {} input values ({}x{}x{}), got {}",
            arch.input_len(),
            arch.input_size,
            arch.input_size,
            arch.in_channels,
            x.len()
        )));
    }
    Ok(())
}

fn to_prediction(probs: &[f64]) -> Prediction {
    let mut p = [0.0; TargetLabel::COUNT];
    p.copy_from_slice(&probs[..TargetLabel::COUNT]);
    let mut best = 0;
    for k in 1..p.len() {
        if p[k] > p[best] {
            best = k;
        }
    }
    Prediction {
        probs: p,
        label: TargetLabel::from_index(best).expect("class index in range"),
    }
}

/// Forward pass on a CHW input vector.
pub fn forward_chw(params: &ModelParams, x: &[f64]) -> Result<Prediction> {
    check_input(&params.arch, x)?;
    Ok(to_prediction(&forward_trace(params, x).probs))
}

pub fn forward(params: &ModelParams, image: &ScalogramImage) -> Result<Prediction> {
    let (h, w, c) = image.pixels.dim();
    let a = params.arch;
    if h != a.input_size || w != a.input_size || c != a.in_channels {
        return Err(Error::Dimension(format!(
            "image is {h}x{w}x{c}, network expects {}x{}x{}",
            a.input_size, a.input_size, a.in_channels
        )));
    }
    forward_chw(params, &to_chw(&image.pixels))
}

/// One training example: CHW input and class index.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Vec<f64>,
    pub label: usize,
}

impl Example {
    pub fn from_image(image: &ScalogramImage, label: TargetLabel) -> Self {
        Self {
            input: to_chw(&image.pixels),
            label: label.index(),
        }
    }
}

/// Mean cross-entropy over `batch` and its gradient with respect to every
/// parameter. Also returns how many examples were classified correctly.
pub fn gradients(params: &ModelParams, batch: &[&Example]) -> Result<(Vec<f64>, f64, usize)> {
    if batch.is_empty() {
        return Err(Error::Data("gradient batch is empty".into()));
    }
    let a = params.arch;
    let l = params.layout();
    let d = &params.data;
    let f = a.flat_features();
    let n = a.input_size;
    let n2 = n / 2;
    let scale = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; l.total];
    let mut loss = 0.0;
    let mut correct = 0;
    for ex in batch {
        check_input(&a, &ex.input)?;
        if ex.label >= a.n_classes {
            return Err(Error::Data(format!("label index {} out of range", ex.label)));
        }
        let t = forward_trace(params, &ex.input);
        loss -= t.probs[ex.label].max(f64::MIN_POSITIVE).ln() * scale;
        if to_prediction(&t.probs).label.index() == ex.label {
            correct += 1;
        }

        let dlogits: Vec<f64> = t
            .probs
            .iter()
            .enumerate()
            .map(|(k, &p)| (p - if k == ex.label { 1.0 } else { 0.0 }) * scale)
            .collect();
        let mut dp2 = vec![0.0; f];
        for (k, &g) in dlogits.iter().enumerate() {
            grad[l.dense_b + k] += g;
            let w = &d[l.dense_w + k * f..l.dense_w + (k + 1) * f];
            let gw = &mut grad[l.dense_w + k * f..l.dense_w + (k + 1) * f];
            for i in 0..f {
                gw[i] += g * t.p2[i];
                dp2[i] += g * w[i];
            }
        }

        let mut dz2 = vec![0.0; t.z2.len()];
        for (o, &src) in t.arg2.iter().enumerate() {
            if t.z2[src] > 0.0 {
                dz2[src] += dp2[o];
            }
        }
        let (gw2, rest) = grad[l.conv2_w..l.dense_w].split_at_mut(l.conv2_b - l.conv2_w);
        let dp1 = conv_backward(
            &t.p1,
            &dz2,
            a.conv1_filters,
            n2,
            &d[l.conv2_w..l.conv2_b],
            a.conv2_filters,
            gw2,
            rest,
            true,
        )
        .expect("input gradient requested");

        let mut dz1 = vec![0.0; t.z1.len()];
        for (o, &src) in t.arg1.iter().enumerate() {
            if t.z1[src] > 0.0 {
                dz1[src] += dp1[o];
            }
        }
        let (gw1, rest) = grad[l.conv1_w..l.conv2_w].split_at_mut(l.conv1_b - l.conv1_w);
        conv_backward(
            &ex.input,
            &dz1,
            a.in_channels,
            n,
            &d[l.conv1_w..l.conv1_b],
            a.conv1_filters,
            gw1,
            rest,
            false,
        );
    }
    Ok((grad, loss, correct))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 30,
            batch_size: 16,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // A zero rate is allowed: it is a useful no-op for testing.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean of the per-batch training losses.
    pub loss: f64,
    /// Fraction classified correctly during the epoch, before each update.
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochStats>,
}

/// SGD with momentum from `init(arch, config.rng_seed)`.
pub fn train(data: &[Example], arch: CnnArchitecture, config: &TrainConfig) -> Result<TrainOutcome> {
    let params = init(arch, config.rng_seed)?;
    train_from(params, data, config)
}

pub fn train_from(mut params: ModelParams, data: &[Example], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let mut seen = [false; TargetLabel::COUNT];
    for ex in data {
        check_input(&params.arch, &ex.input)?;
        *seen
            .get_mut(ex.label)
            .ok_or_else(|| Error::Data(format!("label index {} out of range", ex.label)))? = true;
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(Error::Data(format!(
            "training set has no sample of class {}",
            TargetLabel::ALL[k]
        )));
    }

    let mut velocity = vec![0.0; params.data.len()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut rng = rng::stream(config.rng_seed, Domain::Shuffle, epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        let mut correct = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &data[i]).collect();
            let (grad, loss, ok) = gradients(&params, &batch)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch, fold: None });
            }
            loss_sum += loss;
            batches += 1;
            correct += ok;
            for ((p, v), g) in params.data.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = config.momentum * *v - config.learning_rate * g;
                *p += *v;
            }
            if params.data.iter().any(|p| !p.is_finite()) {
                return Err(Error::Divergence { epoch, fold: None });
            }
        }
        history.push(EpochStats {
            epoch,
            loss: loss_sum / batches as f64,
            accuracy: correct as f64 / data.len() as f64,
        });
    }
    Ok(TrainOutcome { params, history })
}

/// Fraction of `data` whose argmax matches the label.
pub fn accuracy(params: &ModelParams, data: &[Example]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Data("no examples to score".into()));
    }
    let mut ok = 0;
    for ex in data {
        if forward_chw(params, &ex.input)?.label.index() == ex.label {
            ok += 1;
        }
    }
    Ok(ok as f64 / data.len() as f64)
}

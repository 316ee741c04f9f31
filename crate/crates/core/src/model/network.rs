//! Graph interpreter: forward inference, training forward with caches, backward.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::arch::{window_output, ArchitectureConfig, LayerKind, LayerSpec, Padding, Shape, INPUT};
use super::scalar::{gemm, Scalar};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-3;
/// Weight of the previous running statistic in each update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics for normalisation, running statistics updated.
    Train,
    /// Running statistics, no state change.
    Eval,
}

#[derive(Debug, Clone)]
pub struct Param<S> {
    pub name: String,
    pub values: Vec<S>,
    pub grads: Vec<S>,
    pub trainable: bool,
}

/// Row-major `[batch, classes]` class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix {
    classes: usize,
    data: Vec<f64>,
}

impl ProbabilityMatrix {
    pub fn new(classes: usize, data: Vec<f64>) -> Result<Self> {
        if classes == 0 || data.len() % classes != 0 {
            return Err(Error::Shape(format!("{} values do not form rows of {classes}", data.len())));
        }
        Ok(Self { classes, data })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.classes
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.classes..(i + 1) * self.classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.classes)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Debug, Clone, Copy)]
struct Window {
    kh: usize,
    kw: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
}

impl Window {
    fn new(spec: &LayerSpec, input: Shape) -> Self {
        let (kh, kw) = spec.kernel.expect("windowed layer");
        let stride = spec.stride.expect("windowed layer");
        let pad = spec.padding.unwrap_or(Padding::Valid);
        let (out_h, pad_top) = window_output(input.0, kh, stride, pad).expect("validated shape");
        let (out_w, pad_left) = window_output(input.1, kw, stride, pad).expect("validated shape");
        Self {
            kh,
            kw,
            stride,
            pad_top,
            pad_left,
            in_h: input.0,
            in_w: input.1,
            out_h,
            out_w,
        }
    }

    fn is_identity(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad_top == 0 && self.pad_left == 0
    }

    /// Input coordinate for output `o` and kernel tap `k`, if inside the image.
    fn src(o: usize, k: usize, stride: usize, pad: usize, size: usize) -> Option<usize> {
        let p = (o * stride + k).checked_sub(pad)?;
        (p < size).then_some(p)
    }

    fn iy(&self, oy: usize, ky: usize) -> Option<usize> {
        Self::src(oy, ky, self.stride, self.pad_top, self.in_h)
    }

    fn ix(&self, ox: usize, kx: usize) -> Option<usize> {
        Self::src(ox, kx, self.stride, self.pad_left, self.in_w)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Conv { win: Window, cin: usize, cout: usize, w: usize, b: Option<usize> },
    Separable { win: Window, cin: usize, cout: usize, dw: usize, pw: usize, b: Option<usize> },
    BatchNorm { c: usize, gamma: usize, beta: usize, mean: usize, var: usize },
    Relu,
    MaxPool { win: Window, c: usize },
    GlobalAvgPool,
    Dense { fin: usize, fout: usize, w: usize, b: Option<usize> },
    Softmax,
    Add,
}

#[derive(Debug, Clone)]
struct Layer {
    op: Op,
    /// Activation slots read; slot 0 is the graph input, slot `i + 1` is layer `i`.
    inputs: Vec<usize>,
    out: Shape,
}

enum Cache<S> {
    None,
    Cols(Vec<S>),
    Depthwise(Tensor<S>),
    Bn { xhat: Vec<S>, inv_std: Vec<S> },
    Argmax(Vec<usize>),
}

/// Activations and intermediate buffers of one training-mode forward pass.
pub struct Trace<S> {
    acts: Vec<Option<Tensor<S>>>,
    caches: Vec<Cache<S>>,
}

/// Loss and accuracy of one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    pub loss: f64,
    pub correct: usize,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct Network<S> {
    arch: ArchitectureConfig,
    layers: Vec<Layer>,
    params: Vec<Param<S>>,
    slots: HashMap<String, usize>,
}

fn new_param<S: Scalar>(params: &mut Vec<Param<S>>, name: String, values: Vec<S>, trainable: bool) -> usize {
    let grads = vec![S::zero(); values.len()];
    params.push(Param {
        name,
        values,
        grads,
        trainable,
    });
    params.len() - 1
}

fn he_uniform<S: Scalar>(rng: &mut ChaCha8Rng, len: usize, fan_in: usize) -> Vec<S> {
    let limit = (6.0 / fan_in.max(1) as f64).sqrt();
    (0..len).map(|_| S::lit(rng.random_range(-limit..limit))).collect()
}

impl<S: Scalar> Network<S> {
    /// Builds the graph and initialises weights deterministically from `seed`.
    pub fn new(arch: &ArchitectureConfig, seed: u64) -> Result<Self> {
        let shapes = arch.infer_shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut slots = HashMap::new();
        slots.insert(INPUT.to_string(), 0usize);
        let slot_shape = |s: usize| if s == 0 { arch.input_shape } else { shapes[s - 1] };
        let mut params = Vec::new();
        let mut layers = Vec::with_capacity(arch.nodes.len());
        for (i, node) in arch.nodes.iter().enumerate() {
            let inputs: Vec<usize> = node.inputs.iter().map(|n| slots[n.as_str()]).collect();
            let in_shape = slot_shape(inputs[0]);
            let spec = &node.spec;
            let id = &node.id;
            let zeros = |n: usize| vec![S::zero(); n];
            let op = match spec.kind {
                LayerKind::Conv => {
                    let win = Window::new(spec, in_shape);
                    let (cin, cout) = (spec.in_channels, spec.out_channels);
                    let fan_in = win.kh * win.kw * cin;
                    let w = new_param(&mut params, format!("{id}/kernel"), he_uniform(&mut rng, fan_in * cout, fan_in), true);
                    let b = spec.bias.then(|| new_param(&mut params, format!("{id}/bias"), zeros(cout), true));
                    Op::Conv { win, cin, cout, w, b }
                }
                LayerKind::SeparableConv => {
                    let win = Window::new(spec, in_shape);
                    let (cin, cout) = (spec.in_channels, spec.out_channels);
                    let taps = win.kh * win.kw;
                    let dw = new_param(&mut params, format!("{id}/depthwise"), he_uniform(&mut rng, taps * cin, taps), true);
                    let pw = new_param(&mut params, format!("{id}/pointwise"), he_uniform(&mut rng, cin * cout, cin), true);
                    let b = spec.bias.then(|| new_param(&mut params, format!("{id}/bias"), zeros(cout), true));
                    Op::Separable { win, cin, cout, dw, pw, b }
                }
                LayerKind::BatchNorm => {
                    let c = spec.in_channels;
                    let ones = vec![S::one(); c];
                    let gamma = new_param(&mut params, format!("{id}/gamma"), ones.clone(), true);
                    let beta = new_param(&mut params, format!("{id}/beta"), zeros(c), true);
                    let mean = new_param(&mut params, format!("{id}/moving_mean"), zeros(c), false);
                    let var = new_param(&mut params, format!("{id}/moving_variance"), ones, false);
                    Op::BatchNorm { c, gamma, beta, mean, var }
                }
                LayerKind::Relu => Op::Relu,
                LayerKind::MaxPool => Op::MaxPool {
                    win: Window::new(spec, in_shape),
                    c: in_shape.2,
                },
                LayerKind::GlobalAvgPool => Op::GlobalAvgPool,
                LayerKind::FullyConnected => {
                    let (fin, fout) = (spec.in_channels, spec.out_channels);
                    let w = new_param(&mut params, format!("{id}/kernel"), he_uniform(&mut rng, fin * fout, fin), true);
                    let b = spec.bias.then(|| new_param(&mut params, format!("{id}/bias"), zeros(fout), true));
                    Op::Dense { fin, fout, w, b }
                }
                LayerKind::Softmax => Op::Softmax,
                LayerKind::Add => Op::Add,
            };
            slots.insert(id.clone(), i + 1);
            layers.push(Layer {
                op,
                inputs,
                out: shapes[i],
            });
        }
        Ok(Self {
            arch: arch.clone(),
            layers,
            params,
            slots,
        })
    }

    pub fn architecture(&self) -> &ArchitectureConfig {
        &self.arch
    }

    pub fn input_shape(&self) -> Shape {
        self.arch.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    pub fn params(&self) -> &[Param<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<S>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param<S>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param<S>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    fn check_input(&self, x: &Tensor<S>) -> Result<()> {
        let (h, w, c) = self.arch.input_shape;
        if (x.h, x.w, x.c) != (h, w, c) {
            return Err(Error::Shape(format!(
                "input is {}x{}x{}, network expects {h}x{w}x{c}",
                x.h, x.w, x.c
            )));
        }
        Ok(())
    }

    /// Inference with running statistics.
    pub fn forward(&self, x: &Tensor<S>) -> Result<ProbabilityMatrix> {
        self.check_input(x)?;
        let k = self.arch.num_classes;
        if x.n == 0 {
            return ProbabilityMatrix::new(k, Vec::new());
        }
        let mut remaining = vec![0usize; self.layers.len() + 1];
        for l in &self.layers {
            for &s in &l.inputs {
                remaining[s] += 1;
            }
        }
        let mut acts: Vec<Option<Tensor<S>>> = vec![None; self.layers.len() + 1];
        for (i, layer) in self.layers.iter().enumerate() {
            let (out, _) = {
                let ins: Vec<&Tensor<S>> = layer
                    .inputs
                    .iter()
                    .map(|&s| if s == 0 { x } else { acts[s].as_ref().expect("live activation") })
                    .collect();
                self.run_layer(layer, &ins, Mode::Eval, false)
            };
            for &s in &layer.inputs {
                remaining[s] -= 1;
                if remaining[s] == 0 {
                    acts[s] = None;
                }
            }
            acts[i + 1] = Some(out);
        }
        let out = acts.pop().flatten().expect("final activation");
        ProbabilityMatrix::new(k, out.data.iter().map(|v| v.f64()).collect())
    }

    /// Forward pass keeping every activation. In [`Mode::Train`] batch
    /// statistics are used and running statistics are updated afterwards.
    pub fn forward_trace(&mut self, x: &Tensor<S>, mode: Mode) -> Result<Trace<S>> {
        self.check_input(x)?;
        if x.n == 0 {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let mut acts: Vec<Option<Tensor<S>>> = Vec::with_capacity(self.layers.len() + 1);
        acts.push(Some(x.clone()));
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut stats = Vec::new();
        for layer in &self.layers {
            let ins: Vec<&Tensor<S>> = layer.inputs.iter().map(|&s| acts[s].as_ref().expect("kept")).collect();
            let (out, cache) = self.run_layer(layer, &ins, mode, true);
            if let (Op::BatchNorm { mean, var, .. }, Cache::Bn { .. }) = (&layer.op, &cache) {
                stats.push((*mean, *var, batch_moments(ins[0])));
            }
            caches.push(cache);
            acts.push(Some(out));
        }
        if mode == Mode::Train {
            let m = S::lit(BN_MOMENTUM);
            for (mi, vi, (bm, bv, count)) in stats {
                let unbias = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
                for (r, b) in self.params[mi].values.iter_mut().zip(&bm) {
                    *r = m * *r + (S::one() - m) * S::lit(*b);
                }
                for (r, b) in self.params[vi].values.iter_mut().zip(&bv) {
                    *r = m * *r + (S::one() - m) * S::lit(*b * unbias);
                }
            }
        }
        Ok(Trace { acts, caches })
    }

    /// Activation produced by node `id` (or the graph input) in a trace.
    pub fn activation<'a>(&self, trace: &'a Trace<S>, id: &str) -> Option<&'a Tensor<S>> {
        let s = *self.slots.get(id)?;
        trace.acts.get(s)?.as_ref()
    }

    /// Probabilities at the end of a trace.
    pub fn trace_output(&self, trace: &Trace<S>) -> ProbabilityMatrix {
        let out = trace.acts.last().and_then(|a| a.as_ref()).expect("complete trace");
        ProbabilityMatrix::new(self.arch.num_classes, out.data.iter().map(|v| v.f64()).collect()).expect("shape")
    }

    /// Mean cross-entropy of a trace against `labels` without touching gradients.
    pub fn loss(&self, trace: &Trace<S>, labels: &[usize]) -> Result<BatchLoss> {
        let logits = self.logits(trace);
        let (loss, correct, _) = cross_entropy(logits, self.arch.num_classes, labels)?;
        Ok(BatchLoss {
            loss,
            correct,
            count: labels.len(),
        })
    }

    fn logits<'a>(&self, trace: &'a Trace<S>) -> &'a Tensor<S> {
        let last = self.layers.last().expect("non-empty graph");
        trace.acts[last.inputs[0]].as_ref().expect("kept")
    }

    /// Mean cross-entropy of the trace against `labels`; overwrites every
    /// parameter gradient with the gradient of that loss.
    pub fn backward(&mut self, mut trace: Trace<S>, labels: &[usize]) -> Result<BatchLoss> {
        let k = self.arch.num_classes;
        let (loss, correct, dlogits) = cross_entropy(self.logits(&trace), k, labels)?;
        for p in &mut self.params {
            p.grads.iter_mut().for_each(|g| *g = S::zero());
        }
        let nl = self.layers.len();
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; nl + 1];
        grads[self.layers[nl - 1].inputs[0]] = Some(dlogits);
        for i in (0..nl - 1).rev() {
            let Some(g) = grads[i + 1].take() else { continue };
            let cache = std::mem::replace(&mut trace.caches[i], Cache::None);
            let layer = &self.layers[i];
            let need_dx: Vec<bool> = layer.inputs.iter().map(|&s| s != 0).collect();
            let dxs = {
                let ins: Vec<&Tensor<S>> = layer.inputs.iter().map(|&s| trace.acts[s].as_ref().expect("kept")).collect();
                let out = trace.acts[i + 1].as_ref().expect("kept");
                backward_layer(&layer.op, &ins, out, g, cache, &mut self.params, &need_dx)
            };
            trace.acts[i + 1] = None;
            for (&s, dx) in layer.inputs.iter().zip(dxs) {
                if let Some(dx) = dx {
                    match &mut grads[s] {
                        Some(acc) => acc.data.iter_mut().zip(&dx.data).for_each(|(a, b)| *a += *b),
                        slot => *slot = Some(dx),
                    }
                }
            }
        }
        Ok(BatchLoss {
            loss,
            correct,
            count: labels.len(),
        })
    }

    fn run_layer(&self, layer: &Layer, ins: &[&Tensor<S>], mode: Mode, keep: bool) -> (Tensor<S>, Cache<S>) {
        let x = ins[0];
        let n = x.n;
        let (oh, ow, oc) = layer.out;
        let p = &self.params;
        match &layer.op {
            Op::Conv { win, cin, cout, w, b } => {
                let (y, cols) = conv_forward(x, win, *cin, *cout, &p[*w].values);
                let mut y = y;
                if let Some(b) = b {
                    add_bias(&mut y.data, &p[*b].values);
                }
                (y, if keep { cols.map_or(Cache::None, Cache::Cols) } else { Cache::None })
            }
            Op::Separable { win, cin, cout, dw, pw, b } => {
                let d = depthwise_forward(x, win, *cin, &p[*dw].values);
                let mut y = Tensor::zeros(n, oh, ow, *cout);
                gemm(n * oh * ow, *cin, *cout, &d.data, false, &p[*pw].values, false, S::zero(), &mut y.data);
                if let Some(b) = b {
                    add_bias(&mut y.data, &p[*b].values);
                }
                (y, if keep { Cache::Depthwise(d) } else { Cache::None })
            }
            Op::BatchNorm { c, gamma, beta, mean, var } => {
                let (g, bt) = (&p[*gamma].values, &p[*beta].values);
                let c = *c;
                let mut y = Vec::with_capacity(x.data.len());
                match mode {
                    Mode::Eval => {
                        let scale: Vec<S> = (0..c)
                            .map(|i| g[i] / (p[*var].values[i] + S::lit(BN_EPSILON)).sqrt())
                            .collect();
                        let rm = &p[*mean].values;
                        for row in x.data.chunks(c) {
                            y.extend((0..c).map(|i| (row[i] - rm[i]) * scale[i] + bt[i]));
                        }
                        (x.with_data(y), Cache::None)
                    }
                    Mode::Train => {
                        let (bm, bv, _) = batch_moments(x);
                        let inv_std: Vec<S> = bv.iter().map(|v| S::lit(1.0 / (v + BN_EPSILON).sqrt())).collect();
                        let mean: Vec<S> = bm.iter().map(|&m| S::lit(m)).collect();
                        let mut xhat = Vec::with_capacity(if keep { x.data.len() } else { 0 });
                        for row in x.data.chunks(c) {
                            for i in 0..c {
                                let h = (row[i] - mean[i]) * inv_std[i];
                                if keep {
                                    xhat.push(h);
                                }
                                y.push(g[i] * h + bt[i]);
                            }
                        }
                        let y = x.with_data(y);
                        (y, if keep { Cache::Bn { xhat, inv_std } } else { Cache::None })
                    }
                }
            }
            Op::Relu => {
                let data = x.data.iter().map(|&v| if v > S::zero() { v } else { S::zero() }).collect();
                (x.with_data(data), Cache::None)
            }
            Op::MaxPool { win, c } => {
                let (y, arg) = maxpool_forward(x, win, *c);
                (y, if keep { Cache::Argmax(arg) } else { Cache::None })
            }
            Op::GlobalAvgPool => {
                let mut y = Tensor::zeros(n, 1, 1, x.c);
                let hw = x.h * x.w;
                let inv = S::lit(1.0 / hw as f64);
                for s in 0..n {
                    let out = &mut y.data[s * x.c..(s + 1) * x.c];
                    for row in x.sample(s).chunks(x.c) {
                        out.iter_mut().zip(row).for_each(|(o, v)| *o += *v);
                    }
                    out.iter_mut().for_each(|o| *o *= inv);
                }
                (y, Cache::None)
            }
            Op::Dense { fin, fout, w, b } => {
                let mut y = Tensor::zeros(n, 1, 1, *fout);
                gemm(n, *fin, *fout, &x.data, false, &p[*w].values, false, S::zero(), &mut y.data);
                if let Some(b) = b {
                    add_bias(&mut y.data, &p[*b].values);
                }
                (y, Cache::None)
            }
            Op::Softmax => {
                let mut y = x.clone();
                for row in y.data.chunks_mut(oc) {
                    softmax_row(row);
                }
                (y, Cache::None)
            }
            Op::Add => {
                let data = x.data.iter().zip(&ins[1].data).map(|(&a, &b)| a + b).collect();
                (x.with_data(data), Cache::None)
            }
        }
    }
}

fn add_bias<S: Scalar>(data: &mut [S], bias: &[S]) {
    for row in data.chunks_mut(bias.len()) {
        row.iter_mut().zip(bias).for_each(|(v, b)| *v += *b);
    }
}

fn softmax_row<S: Scalar>(row: &mut [S]) {
    let m = row.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
    let mut sum = S::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// Per-channel mean and biased variance over N, H, W, accumulated in f64.
fn batch_moments<S: Scalar>(x: &Tensor<S>) -> (Vec<f64>, Vec<f64>, usize) {
    let c = x.c;
    let count = x.data.len() / c;
    let mut mean = vec![0f64; c];
    for row in x.data.chunks(c) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v.f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    let mut var = vec![0f64; c];
    for row in x.data.chunks(c) {
        for i in 0..c {
            let d = row[i].f64() - mean[i];
            var[i] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= count as f64);
    (mean, var, count)
}

/// Returns (mean loss, correct count, d loss / d logits).
fn cross_entropy<S: Scalar>(logits: &Tensor<S>, k: usize, labels: &[usize]) -> Result<(f64, usize, Tensor<S>)> {
    let n = logits.n;
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for a batch of {n}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidInput(format!("label {bad} outside 0..{k}")));
    }
    let mut grad = Tensor::zeros(logits.n, logits.h, logits.w, logits.c);
    let mut total = 0f64;
    let mut correct = 0;
    let inv_n = 1.0 / n as f64;
    for (s, &label) in labels.iter().enumerate() {
        let row = &logits.data[s * k..(s + 1) * k];
        let vals: Vec<f64> = row.iter().map(|v| v.f64()).collect();
        let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - vals[label];
        let mut best = 0;
        for j in 1..k {
            if vals[j] > vals[best] {
                best = j;
            }
        }
        if best == label {
            correct += 1;
        }
        let g = &mut grad.data[s * k..(s + 1) * k];
        for j in 0..k {
            let p = (vals[j] - lse).exp();
            let t = if j == label { 1.0 } else { 0.0 };
            g[j] = S::lit((p - t) * inv_n);
        }
    }
    Ok((total * inv_n, correct, grad))
}

fn im2col<S: Scalar>(x: &Tensor<S>, win: &Window, cin: usize) -> Vec<S> {
    let kdim = win.kh * win.kw * cin;
    let mut cols = vec![S::zero(); x.n * win.out_h * win.out_w * kdim];
    let mut r = 0;
    for s in 0..x.n {
        let img = x.sample(s);
        for oy in 0..win.out_h {
            for ox in 0..win.out_w {
                let row = &mut cols[r * kdim..(r + 1) * kdim];
                for ky in 0..win.kh {
                    let Some(iy) = win.iy(oy, ky) else { continue };
                    for kx in 0..win.kw {
                        let Some(ix) = win.ix(ox, kx) else { continue };
                        let src = (iy * win.in_w + ix) * cin;
                        let dst = (ky * win.kw + kx) * cin;
                        row[dst..dst + cin].copy_from_slice(&img[src..src + cin]);
                    }
                }
                r += 1;
            }
        }
    }
    cols
}

fn col2im<S: Scalar>(cols: &[S], win: &Window, cin: usize, n: usize) -> Tensor<S> {
    let kdim = win.kh * win.kw * cin;
    let mut dx = Tensor::zeros(n, win.in_h, win.in_w, cin);
    let slen = win.in_h * win.in_w * cin;
    let mut r = 0;
    for s in 0..n {
        let img = &mut dx.data[s * slen..(s + 1) * slen];
        for oy in 0..win.out_h {
            for ox in 0..win.out_w {
                let row = &cols[r * kdim..(r + 1) * kdim];
                for ky in 0..win.kh {
                    let Some(iy) = win.iy(oy, ky) else { continue };
                    for kx in 0..win.kw {
                        let Some(ix) = win.ix(ox, kx) else { continue };
                        let dst = (iy * win.in_w + ix) * cin;
                        let src = (ky * win.kw + kx) * cin;
                        img[dst..dst + cin].iter_mut().zip(&row[src..src + cin]).for_each(|(a, b)| *a += *b);
                    }
                }
                r += 1;
            }
        }
    }
    dx
}

fn conv_forward<S: Scalar>(x: &Tensor<S>, win: &Window, cin: usize, cout: usize, w: &[S]) -> (Tensor<S>, Option<Vec<S>>) {
    let rows = x.n * win.out_h * win.out_w;
    let mut y = Tensor::zeros(x.n, win.out_h, win.out_w, cout);
    if win.is_identity() {
        gemm(rows, cin, cout, &x.data, false, w, false, S::zero(), &mut y.data);
        (y, None)
    } else {
        let cols = im2col(x, win, cin);
        gemm(rows, win.kh * win.kw * cin, cout, &cols, false, w, false, S::zero(), &mut y.data);
        (y, Some(cols))
    }
}

fn depthwise_forward<S: Scalar>(x: &Tensor<S>, win: &Window, c: usize, dw: &[S]) -> Tensor<S> {
    let mut y = Tensor::zeros(x.n, win.out_h, win.out_w, c);
    let olen = win.out_h * win.out_w * c;
    for s in 0..x.n {
        let img = x.sample(s);
        let out = &mut y.data[s * olen..(s + 1) * olen];
        for oy in 0..win.out_h {
            for ox in 0..win.out_w {
                let o = &mut out[(oy * win.out_w + ox) * c..][..c];
                for ky in 0..win.kh {
                    let Some(iy) = win.iy(oy, ky) else { continue };
                    for kx in 0..win.kw {
                        let Some(ix) = win.ix(ox, kx) else { continue };
                        let xs = &img[(iy * win.in_w + ix) * c..][..c];
                        let ws = &dw[(ky * win.kw + kx) * c..][..c];
                        for i in 0..c {
                            o[i] += xs[i] * ws[i];
                        }
                    }
                }
            }
        }
    }
    y
}

/// Returns (d input, d depthwise kernel) for a depthwise stage.
fn depthwise_backward<S: Scalar>(x: &Tensor<S>, win: &Window, c: usize, dw: &[S], g: &Tensor<S>, need_dx: bool) -> (Option<Tensor<S>>, Vec<S>) {
    let mut ddw = vec![S::zero(); dw.len()];
    let mut dx = need_dx.then(|| Tensor::zeros(x.n, x.h, x.w, c));
    let ilen = x.sample_len();
    for s in 0..x.n {
        let img = x.sample(s);
        let gs = g.sample(s);
        for oy in 0..win.out_h {
            for ox in 0..win.out_w {
                let go = &gs[(oy * win.out_w + ox) * c..][..c];
                for ky in 0..win.kh {
                    let Some(iy) = win.iy(oy, ky) else { continue };
                    for kx in 0..win.kw {
                        let Some(ix) = win.ix(ox, kx) else { continue };
                        let off = (iy * win.in_w + ix) * c;
                        let tap = (ky * win.kw + kx) * c;
                        let xs = &img[off..off + c];
                        let dws = &mut ddw[tap..tap + c];
                        for i in 0..c {
                            dws[i] += xs[i] * go[i];
                        }
                        if let Some(dx) = dx.as_mut() {
                            let d = &mut dx.data[s * ilen + off..][..c];
                            let ws = &dw[tap..tap + c];
                            for i in 0..c {
                                d[i] += ws[i] * go[i];
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, ddw)
}

fn maxpool_forward<S: Scalar>(x: &Tensor<S>, win: &Window, c: usize) -> (Tensor<S>, Vec<usize>) {
    let mut y = Tensor::zeros(x.n, win.out_h, win.out_w, c);
    y.data.iter_mut().for_each(|v| *v = S::neg_infinity());
    let mut arg = vec![usize::MAX; y.data.len()];
    let ilen = x.sample_len();
    let mut o = 0;
    for s in 0..x.n {
        for oy in 0..win.out_h {
            for ox in 0..win.out_w {
                let out = &mut y.data[o..o + c];
                let idx = &mut arg[o..o + c];
                for ky in 0..win.kh {
                    let Some(iy) = win.iy(oy, ky) else { continue };
                    for kx in 0..win.kw {
                        let Some(ix) = win.ix(ox, kx) else { continue };
                        let base = s * ilen + (iy * win.in_w + ix) * c;
                        for i in 0..c {
                            let v = x.data[base + i];
                            if v > out[i] || idx[i] == usize::MAX {
                                out[i] = v;
                                idx[i] = base + i;
                            }
                        }
                    }
                }
                o += c;
            }
        }
    }
    (y, arg)
}

/// Accumulates parameter gradients and returns per-input gradients.
fn backward_layer<S: Scalar>(
    op: &Op,
    ins: &[&Tensor<S>],
    out: &Tensor<S>,
    g: Tensor<S>,
    cache: Cache<S>,
    params: &mut [Param<S>],
    need_dx: &[bool],
) -> Vec<Option<Tensor<S>>> {
    let x = ins[0];
    let n = x.n;
    match op {
        Op::Conv { win, cin, cout, w, b } => {
            let rows = n * win.out_h * win.out_w;
            let kdim = win.kh * win.kw * cin;
            if let Some(b) = b {
                bias_grad(&g.data, &mut params[*b].grads);
            }
            let a: &[S] = match &cache {
                Cache::Cols(c) => c,
                _ => &x.data,
            };
            gemm(kdim, rows, *cout, a, true, &g.data, false, S::one(), &mut params[*w].grads);
            if !need_dx[0] {
                return vec![None];
            }
            let wv = &params[*w].values;
            if win.is_identity() {
                let mut dx = Tensor::zeros(n, x.h, x.w, *cin);
                gemm(rows, *cout, *cin, &g.data, false, wv, true, S::zero(), &mut dx.data);
                vec![Some(dx)]
            } else {
                let mut dcols = vec![S::zero(); rows * kdim];
                gemm(rows, *cout, kdim, &g.data, false, wv, true, S::zero(), &mut dcols);
                vec![Some(col2im(&dcols, win, *cin, n))]
            }
        }
        Op::Separable { win, cin, cout, dw, pw, b } => {
            let Cache::Depthwise(d) = cache else { unreachable!("separable cache") };
            let rows = n * win.out_h * win.out_w;
            if let Some(b) = b {
                bias_grad(&g.data, &mut params[*b].grads);
            }
            gemm(*cin, rows, *cout, &d.data, true, &g.data, false, S::one(), &mut params[*pw].grads);
            let mut dd = Tensor::zeros(n, win.out_h, win.out_w, *cin);
            gemm(rows, *cout, *cin, &g.data, false, &params[*pw].values, true, S::zero(), &mut dd.data);
            let (dx, ddw) = depthwise_backward(x, win, *cin, &params[*dw].values, &dd, need_dx[0]);
            params[*dw].grads.iter_mut().zip(&ddw).for_each(|(a, b)| *a += *b);
            vec![dx]
        }
        Op::BatchNorm { c, gamma, beta, .. } => {
            let Cache::Bn { xhat, inv_std } = cache else { unreachable!("batch norm cache") };
            let c = *c;
            let count = (g.data.len() / c) as f64;
            let mut dg = vec![0f64; c];
            let mut db = vec![0f64; c];
            for (gr, hr) in g.data.chunks(c).zip(xhat.chunks(c)) {
                for i in 0..c {
                    let gv = gr[i].f64();
                    dg[i] += gv * hr[i].f64();
                    db[i] += gv;
                }
            }
            for i in 0..c {
                params[*gamma].grads[i] += S::lit(dg[i]);
                params[*beta].grads[i] += S::lit(db[i]);
            }
            if !need_dx[0] {
                return vec![None];
            }
            let gam = &params[*gamma].values;
            let k: Vec<S> = (0..c).map(|i| gam[i] * inv_std[i] / S::lit(count)).collect();
            let dgs: Vec<S> = dg.iter().map(|&v| S::lit(v)).collect();
            let dbs: Vec<S> = db.iter().map(|&v| S::lit(v)).collect();
            let m = S::lit(count);
            let mut dx = g;
            for (row, hr) in dx.data.chunks_mut(c).zip(xhat.chunks(c)) {
                for i in 0..c {
                    row[i] = k[i] * (m * row[i] - dbs[i] - hr[i] * dgs[i]);
                }
            }
            vec![Some(dx)]
        }
        Op::Relu => {
            let mut dx = g;
            dx.data.iter_mut().zip(&out.data).for_each(|(d, o)| {
                if !(*o > S::zero()) {
                    *d = S::zero();
                }
            });
            vec![Some(dx)]
        }
        Op::MaxPool { .. } => {
            let Cache::Argmax(arg) = cache else { unreachable!("max pool cache") };
            let mut dx = Tensor::zeros(x.n, x.h, x.w, x.c);
            for (gv, &a) in g.data.iter().zip(&arg) {
                if a != usize::MAX {
                    dx.data[a] += *gv;
                }
            }
            vec![Some(dx)]
        }
        Op::GlobalAvgPool => {
            let mut dx = Tensor::zeros(x.n, x.h, x.w, x.c);
            let inv = S::lit(1.0 / (x.h * x.w) as f64);
            let len = x.sample_len();
            for s in 0..n {
                let gs = &g.data[s * x.c..(s + 1) * x.c];
                for row in dx.data[s * len..(s + 1) * len].chunks_mut(x.c) {
                    row.iter_mut().zip(gs).for_each(|(d, gv)| *d = *gv * inv);
                }
            }
            vec![Some(dx)]
        }
        Op::Dense { fin, fout, w, b } => {
            if let Some(b) = b {
                bias_grad(&g.data, &mut params[*b].grads);
            }
            gemm(*fin, n, *fout, &x.data, true, &g.data, false, S::one(), &mut params[*w].grads);
            if !need_dx[0] {
                return vec![None];
            }
            let mut dx = Tensor::zeros(x.n, x.h, x.w, x.c);
            gemm(n, *fout, *fin, &g.data, false, &params[*w].values, true, S::zero(), &mut dx.data);
            vec![Some(dx)]
        }
        Op::Softmax => unreachable!("softmax gradient is folded into the loss"),
        Op::Add => {
            let a = need_dx[0].then(|| g.clone());
            let b = need_dx[1].then_some(g);
            vec![a, b]
        }
    }
}

fn bias_grad<S: Scalar>(g: &[S], db: &mut [S]) {
    for row in g.chunks(db.len()) {
        db.iter_mut().zip(row).for_each(|(d, v)| *d += *v);
    }
}

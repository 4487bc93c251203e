//! Transformer building blocks with hand-written backward passes.
//!
//! Every layer exposes `forward` returning its output plus a cache and a
//! `backward` that accumulates parameter gradients into a structure of the
//! same type. All arithmetic is `f64`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

const LN_EPS: f64 = 1e-6;

/// Uniform access to the trainable tensors of a parameter structure.
///
/// `named` and `tensors_mut` must enumerate tensors in the same order.
pub trait Params: Clone {
    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, Vec<usize>, &'a [f64])>);
    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>);

    fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        self.named("", &mut out);
        out
    }

    fn all_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        self.tensors_mut(&mut out);
        out
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.all_mut() {
            t.fill(0.0);
        }
        z
    }

    fn num_params(&self) -> usize {
        self.named_tensors().iter().map(|t| t.2.len()).sum()
    }

    /// `self += alpha * other`
    fn add_scaled(&mut self, other: &Self, alpha: f64) {
        let src: Vec<&[f64]> = other.named_tensors().into_iter().map(|t| t.2).collect();
        for (dst, src) in self.all_mut().into_iter().zip(src) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += alpha * s;
            }
        }
    }

    fn scale(&mut self, alpha: f64) {
        for t in self.all_mut() {
            t.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    /// Inner product over all tensors.
    fn dot(&self, other: &Self) -> f64 {
        self.named_tensors()
            .iter()
            .zip(other.named_tensors())
            .map(|(a, b)| a.2.iter().zip(b.2).map(|(x, y)| x * y).sum::<f64>())
            .sum()
    }

    fn all_finite(&self) -> bool {
        self.named_tensors()
            .iter()
            .all(|t| t.2.iter().all(|v| v.is_finite()))
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn slice2(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("parameter arrays are contiguous")
}

pub(crate) fn slice2_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameter arrays are contiguous")
}

pub(crate) fn slice1(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("parameter arrays are contiguous")
}

pub(crate) fn slice1_mut(a: &mut Array1<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameter arrays are contiguous")
}

/// Samples `N(0, std)` truncated to ±2 std; `std == 0` yields zeros.
pub fn trunc_normal<R: Rng + ?Sized>(rng: &mut R, shape: (usize, usize), std: f64) -> Array2<f64> {
    if std == 0.0 {
        return Array2::zeros(shape);
    }
    let normal = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_simple_fn(shape, || loop {
        let v: f64 = normal.sample(rng);
        if v.abs() <= 2.0 * std {
            break v;
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `in × out`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, input: usize, output: usize, std: f64) -> Self {
        Self {
            weight: trunc_normal(rng, (input, output), std),
            bias: Array1::zeros(output),
        }
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    /// Returns `dx`; accumulates into `grad`.
    pub fn backward(&self, x: &ArrayView2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.weight += &x.t().dot(dy);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight.t())
    }
}

impl Params for Linear {
    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, Vec<usize>, &'a [f64])>) {
        out.push((join(prefix, "weight"), self.weight.shape().to_vec(), slice2(&self.weight)));
        out.push((join(prefix, "bias"), self.bias.shape().to_vec(), slice1(&self.bias)));
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(slice2_mut(&mut self.weight));
        out.push(slice1_mut(&mut self.bias));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub weight: Array1<f64>,
    pub bias: Array1<f64>,
}

pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

/// Row-wise normalisation without affine parameters.
pub fn normalize_rows(x: &ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
    let d = x.ncols() as f64;
    let mut xhat = x.to_owned();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *inv = 1.0 / (var + LN_EPS).sqrt();
        row *= *inv;
    }
    (xhat, inv_std)
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            weight: Array1::ones(dim),
            bias: Array1::zeros(dim),
        }
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> (Array2<f64>, LayerNormCache) {
        let (xhat, inv_std) = normalize_rows(x);
        let y = &xhat * &self.weight + &self.bias;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &Array2<f64>, grad: &mut LayerNorm) -> Array2<f64> {
        grad.weight += &(dy * &cache.xhat).sum_axis(Axis(0));
        grad.bias += &dy.sum_axis(Axis(0));
        let dxhat = dy * &self.weight;
        layer_norm_input_grad(&cache.xhat, &cache.inv_std, &dxhat)
    }
}

/// Gradient through `xhat = (x - mean) * inv_std` given `d xhat`.
pub fn layer_norm_input_grad(xhat: &Array2<f64>, inv_std: &Array1<f64>, dxhat: &Array2<f64>) -> Array2<f64> {
    let d = xhat.ncols() as f64;
    let mut dx = Array2::zeros(xhat.dim());
    for (((mut out, xh), dxh), &inv) in dx
        .rows_mut()
        .into_iter()
        .zip(xhat.rows())
        .zip(dxhat.rows())
        .zip(inv_std.iter())
    {
        let mean_d = dxh.sum() / d;
        let mean_dx = dxh.dot(&xh) / d;
        for ((o, &g), &h) in out.iter_mut().zip(dxh.iter()).zip(xh.iter()) {
            *o = inv * (g - mean_d - h * mean_dx);
        }
    }
    dx
}

impl Params for LayerNorm {
    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, Vec<usize>, &'a [f64])>) {
        out.push((join(prefix, "weight"), self.weight.shape().to_vec(), slice1(&self.weight)));
        out.push((join(prefix, "bias"), self.bias.shape().to_vec(), slice1(&self.bias)));
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(slice1_mut(&mut self.weight));
        out.push(slice1_mut(&mut self.bias));
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// tanh approximation of GELU
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub qkv: Linear,
    pub proj: Linear,
    pub heads: usize,
}

pub struct AttentionCache {
    qkv: Array2<f64>,
    probs: Vec<Array2<f64>>,
    context: Array2<f64>,
}

impl Attention {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, dim: usize, heads: usize, std: f64) -> Self {
        Self {
            qkv: Linear::new(rng, dim, 3 * dim, std),
            proj: Linear::new(rng, dim, dim, std),
            heads,
        }
    }

    fn dim(&self) -> usize {
        self.proj.weight.nrows()
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> (Array2<f64>, AttentionCache) {
        let d = self.dim();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let qkv = self.qkv.forward(x);
        let n = x.nrows();
        let mut context = Array2::zeros((n, d));
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let q = qkv.slice(s![.., h * dh..(h + 1) * dh]);
            let k = qkv.slice(s![.., d + h * dh..d + (h + 1) * dh]);
            let v = qkv.slice(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
            let mut a = q.dot(&k.t()) * scale;
            softmax_rows(&mut a);
            context.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&a.dot(&v));
            probs.push(a);
        }
        let y = self.proj.forward(&context.view());
        (y, AttentionCache { qkv, probs, context })
    }

    pub fn backward(
        &self,
        x: &ArrayView2<f64>,
        cache: &AttentionCache,
        dy: &Array2<f64>,
        grad: &mut Attention,
    ) -> Array2<f64> {
        let d = self.dim();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let dctx = self.proj.backward(&cache.context.view(), dy, &mut grad.proj);
        let mut dqkv = Array2::zeros(cache.qkv.dim());
        for h in 0..self.heads {
            let q = cache.qkv.slice(s![.., h * dh..(h + 1) * dh]);
            let k = cache.qkv.slice(s![.., d + h * dh..d + (h + 1) * dh]);
            let v = cache.qkv.slice(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
            let a = &cache.probs[h];
            let dout = dctx.slice(s![.., h * dh..(h + 1) * dh]);
            let da = dout.dot(&v.t());
            let dv = a.t().dot(&dout);
            let mut ds = da;
            for (mut ds_row, a_row) in ds.rows_mut().into_iter().zip(a.rows()) {
                let inner = ds_row.dot(&a_row);
                for (g, &p) in ds_row.iter_mut().zip(a_row.iter()) {
                    *g = p * (*g - inner) * scale;
                }
            }
            dqkv.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&ds.dot(&k));
            dqkv.slice_mut(s![.., d + h * dh..d + (h + 1) * dh])
                .assign(&ds.t().dot(&q));
            dqkv.slice_mut(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh])
                .assign(&dv);
        }
        self.qkv.backward(x, &dqkv, &mut grad.qkv)
    }
}

impl Params for Attention {
    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, Vec<usize>, &'a [f64])>) {
        self.qkv.named(&join(prefix, "qkv"), out);
        self.proj.named(&join(prefix, "proj"), out);
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        self.qkv.tensors_mut(out);
        self.proj.tensors_mut(out);
    }
}

/// Pre-norm transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub norm1: LayerNorm,
    pub attn: Attention,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

pub struct BlockCache {
    ln1: LayerNormCache,
    h1: Array2<f64>,
    attn: AttentionCache,
    ln2: LayerNormCache,
    h2: Array2<f64>,
    pre_act: Array2<f64>,
    act: Array2<f64>,
}

impl Block {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, dim: usize, heads: usize, mlp_ratio: usize, std: f64) -> Self {
        Self {
            norm1: LayerNorm::new(dim),
            attn: Attention::new(rng, dim, heads, std),
            norm2: LayerNorm::new(dim),
            fc1: Linear::new(rng, dim, dim * mlp_ratio, std),
            fc2: Linear::new(rng, dim * mlp_ratio, dim, std),
        }
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> (Array2<f64>, BlockCache) {
        let (h1, ln1) = self.norm1.forward(x);
        let (a, attn) = self.attn.forward(&h1.view());
        let x1 = x + &a;
        let (h2, ln2) = self.norm2.forward(&x1.view());
        let pre_act = self.fc1.forward(&h2.view());
        let act = pre_act.mapv(gelu);
        let y = &x1 + &self.fc2.forward(&act.view());
        (
            y,
            BlockCache {
                ln1,
                h1,
                attn,
                ln2,
                h2,
                pre_act,
                act,
            },
        )
    }

    pub fn backward(&self, cache: &BlockCache, dy: &Array2<f64>, grad: &mut Block) -> Array2<f64> {
        let dact = self.fc2.backward(&cache.act.view(), dy, &mut grad.fc2);
        let dpre = dact * &cache.pre_act.mapv(gelu_grad);
        let dh2 = self.fc1.backward(&cache.h2.view(), &dpre, &mut grad.fc1);
        let dx1 = dy + &self.norm2.backward(&cache.ln2, &dh2, &mut grad.norm2);
        let dh1 = self
            .attn
            .backward(&cache.h1.view(), &cache.attn, &dx1, &mut grad.attn);
        &dx1 + &self.norm1.backward(&cache.ln1, &dh1, &mut grad.norm1)
    }

    /// Sets the residual-branch output projections to zero.
    pub fn zero_residual_branches(&mut self) {
        self.attn.proj.weight.fill(0.0);
        self.attn.proj.bias.fill(0.0);
        self.fc2.weight.fill(0.0);
        self.fc2.bias.fill(0.0);
    }
}

impl Params for Block {
    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, Vec<usize>, &'a [f64])>) {
        self.norm1.named(&join(prefix, "norm1"), out);
        self.attn.named(&join(prefix, "attn"), out);
        self.norm2.named(&join(prefix, "norm2"), out);
        self.fc1.named(&join(prefix, "mlp.fc1"), out);
        self.fc2.named(&join(prefix, "mlp.fc2"), out);
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        self.norm1.tensors_mut(out);
        self.attn.tensors_mut(out);
        self.norm2.tensors_mut(out);
        self.fc1.tensors_mut(out);
        self.fc2.tensors_mut(out);
    }
}

/// Decoupled-weight-decay Adam. Decay applies to rank-2 tensors only.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    decay: Vec<bool>,
    t: u64,
}

impl AdamW {
    pub fn new<P: Params>(params: &P, beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        let named = params.named_tensors();
        Self {
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay,
            m: named.iter().map(|t| vec![0.0; t.2.len()]).collect(),
            v: named.iter().map(|t| vec![0.0; t.2.len()]).collect(),
            decay: named.iter().map(|t| t.1.len() >= 2).collect(),
            t: 0,
        }
    }

    pub fn step<P: Params>(&mut self, params: &mut P, grads: &P, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let grads: Vec<&[f64]> = grads.named_tensors().into_iter().map(|t| t.2).collect();
        for (i, p) in params.all_mut().into_iter().enumerate() {
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], grads[i]);
            let wd = if self.decay[i] { self.weight_decay } else { 0.0 };
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let update = (m[j] / bc1) / ((v[j] / bc2).sqrt() + self.eps);
                p[j] -= lr * (update + wd * p[j]);
            }
        }
    }
}

/// Linear warm-up from 0 to `peak` over `warmup` steps, then cosine decay
/// to 0 at `total`.
pub fn warmup_cosine(step: usize, peak: f64, warmup: usize, total: usize) -> f64 {
    if warmup > 0 && step <= warmup {
        return peak * step as f64 / warmup as f64;
    }
    if step >= total {
        return 0.0;
    }
    let span = (total - warmup).max(1) as f64;
    let progress = (step - warmup) as f64 / span;
    peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

//! Domain-adaptive self-supervised pre-training with a masked student and
//! an EMA teacher.
//!
//! The student encodes the visible patches, a light decoder re-inserts a
//! learned mask token at the hidden positions and regresses the teacher's
//! layer-averaged patch outputs there (frame loss). The student CLS output
//! regresses the teacher's global average (utterance loss). The teacher is
//! an exponential moving average of the student encoder.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{self, EncoderCache, EncoderParams};
use crate::error::{Error, Result};
use crate::frontend::PatchGrid;
use crate::nn::{self, join, slice1, slice1_mut, slice2, slice2_mut, AdamW, Block, BlockCache, Linear, Params};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub mask_ratio: f64,
    pub ema_start: f64,
    pub ema_end: f64,
    pub epochs: usize,
    /// Stops after this many optimiser steps when non-zero.
    pub max_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub decoder_depth: usize,
    /// Layer-normalise each teacher block output before averaging.
    pub normalize_targets: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            mask_ratio: 0.8,
            ema_start: 0.998,
            ema_end: 0.9999,
            epochs: 10,
            max_steps: 0,
            batch_size: 32,
            lr: 5e-4,
            warmup_steps: 100,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            decoder_depth: 1,
            normalize_targets: true,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(Error::invalid("pretrain.mask_ratio must lie in (0, 1)"));
        }
        for (name, tau) in [("ema_start", self.ema_start), ("ema_end", self.ema_end)] {
            if !(0.0..=1.0).contains(&tau) {
                return Err(Error::invalid(format!("pretrain.{name} must lie in [0, 1]")));
            }
        }
        if self.batch_size == 0 || (self.epochs == 0 && self.max_steps == 0) {
            return Err(Error::invalid("pretrain needs batch_size >= 1 and a positive step budget"));
        }
        if self.decoder_depth == 0 {
            return Err(Error::invalid("pretrain.decoder_depth must be >= 1"));
        }
        Ok(())
    }
}

/// Student-only reconstruction decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub mask_token: Array1<f64>,
    /// One row per patch position.
    pub pos_embed: Array2<f64>,
    pub blocks: Vec<Block>,
    pub head: Linear,
}

impl Params for DecoderParams {
    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, Vec<usize>, &'a [f64])>) {
        out.push((join(prefix, "mask_token"), self.mask_token.shape().to_vec(), slice1(&self.mask_token)));
        out.push((join(prefix, "pos_embed"), self.pos_embed.shape().to_vec(), slice2(&self.pos_embed)));
        for (i, b) in self.blocks.iter().enumerate() {
            b.named(&join(prefix, &format!("blocks.{i}")), out);
        }
        self.head.named(&join(prefix, "head"), out);
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(slice1_mut(&mut self.mask_token));
        out.push(slice2_mut(&mut self.pos_embed));
        for b in &mut self.blocks {
            b.tensors_mut(out);
        }
        self.head.tensors_mut(out);
    }
}

impl DecoderParams {
    pub fn init(encoder: &EncoderParams, depth: usize, seed: u64) -> Self {
        let cfg = &encoder.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xDEC0_DE00);
        let std = cfg.init_std;
        let d = cfg.dim;
        Self {
            mask_token: nn::trunc_normal(&mut rng, (1, d), std).row(0).to_owned(),
            pos_embed: nn::trunc_normal(&mut rng, (cfg.num_patches, d), std),
            blocks: (0..depth)
                .map(|_| Block::new(&mut rng, d, cfg.heads, cfg.mlp_ratio, std))
                .collect(),
            head: Linear::new(&mut rng, d, d, std),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentParams {
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
}

impl Params for StudentParams {
    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, Vec<usize>, &'a [f64])>) {
        self.encoder.named(&join(prefix, "encoder"), out);
        self.decoder.named(&join(prefix, "decoder"), out);
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        self.encoder.tensors_mut(out);
        self.decoder.tensors_mut(out);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentTeacherState {
    pub student: StudentParams,
    pub teacher: EncoderParams,
    pub step: usize,
}

impl StudentTeacherState {
    /// Student from `init`, teacher as an exact copy of the student encoder.
    pub fn new(init: EncoderParams, decoder_depth: usize, seed: u64) -> Self {
        let decoder = DecoderParams::init(&init, decoder_depth, seed);
        Self {
            teacher: init.clone(),
            student: StudentParams {
                encoder: init,
                decoder,
            },
            step: 0,
        }
    }
}

/// `round(P * ratio)` distinct patch indices, ascending.
pub fn make_mask<R: rand::Rng + ?Sized>(num_patches: usize, mask_ratio: f64, rng: &mut R) -> Vec<usize> {
    let count = ((num_patches as f64 * mask_ratio).round() as usize).min(num_patches);
    let mut idx = index::sample(rng, num_patches, count).into_vec();
    idx.sort_unstable();
    idx
}

pub struct StudentCache {
    encoder: EncoderCache,
    visible: Vec<usize>,
    masked: Vec<usize>,
    blocks: Vec<BlockCache>,
    head_input: Array2<f64>,
}

pub struct StudentOutput {
    /// `P × D` decoder predictions.
    pub x_o: Array2<f64>,
    /// Encoder CLS output.
    pub c: Array1<f64>,
}

/// Student pass: encoder on visible patches, decoder over the full grid.
pub fn student_forward_train(
    patches: &ArrayView2<f64>,
    mask: &[usize],
    student: &StudentParams,
) -> (StudentOutput, StudentCache) {
    let p = patches.nrows();
    let visible = encoder::visible_indices(p, Some(mask));
    let (enc, enc_cache) = encoder::forward_train(patches, &student.encoder, &visible);
    let dec = &student.decoder;
    let mut x = Array2::zeros((p, student.encoder.config.dim));
    for row in x.rows_mut() {
        let mut row = row;
        row.assign(&dec.mask_token);
    }
    for (r, &i) in visible.iter().enumerate() {
        x.row_mut(i).assign(&enc.z.row(r));
    }
    x += &dec.pos_embed;
    let mut caches = Vec::with_capacity(dec.blocks.len());
    for block in &dec.blocks {
        let (y, cache) = block.forward(&x.view());
        x = y;
        caches.push(cache);
    }
    let x_o = dec.head.forward(&x.view());
    let hidden = encoder::visible_indices(p, Some(&visible));
    (
        StudentOutput { x_o, c: enc.cls_out },
        StudentCache {
            encoder: enc_cache,
            visible,
            masked: hidden,
            blocks: caches,
            head_input: x,
        },
    )
}

pub fn student_backward(
    student: &StudentParams,
    cache: &StudentCache,
    d_x_o: &Array2<f64>,
    d_c: &Array1<f64>,
    grad: &mut StudentParams,
) {
    let dec = &student.decoder;
    let gdec = &mut grad.decoder;
    let mut dx = dec.head.backward(&cache.head_input.view(), d_x_o, &mut gdec.head);
    for ((block, bc), g) in dec
        .blocks
        .iter()
        .zip(&cache.blocks)
        .zip(gdec.blocks.iter_mut())
        .rev()
    {
        dx = block.backward(bc, &dx, g);
    }
    gdec.pos_embed += &dx;
    for &i in &cache.masked {
        gdec.mask_token += &dx.row(i);
    }
    let mut d_tokens = Array2::zeros((cache.visible.len() + 1, dx.ncols()));
    d_tokens.row_mut(0).assign(d_c);
    for (r, &i) in cache.visible.iter().enumerate() {
        d_tokens.row_mut(r + 1).assign(&dx.row(i));
    }
    encoder::backward(&student.encoder, &cache.encoder, d_tokens, &mut grad.encoder);
}

/// Returns `(X_o, c)`.
pub fn student_forward(grid: &PatchGrid, mask: &[usize], student: &StudentParams) -> (Array2<f64>, Array1<f64>) {
    let (out, _) = student_forward_train(&grid.patches.view(), mask, student);
    (out.x_o, out.c)
}

/// Mean of per-layer outputs, optionally layer-normalised first.
pub fn average_layers(per_layer: &[Array2<f64>], normalize: bool) -> Array2<f64> {
    let mut acc = Array2::zeros(per_layer[0].dim());
    for layer in per_layer {
        if normalize {
            acc += &nn::normalize_rows(&layer.view()).0;
        } else {
            acc += layer;
        }
    }
    acc / per_layer.len() as f64
}

/// Returns `(Y_o, y)`: the depth-averaged patch outputs and their mean over
/// patches.
pub fn teacher_forward(patches: &ArrayView2<f64>, teacher: &EncoderParams, normalize: bool) -> (Array2<f64>, Array1<f64>) {
    let all: Vec<usize> = (0..patches.nrows()).collect();
    let (out, _) = encoder::forward_train(patches, teacher, &all);
    let y_o = average_layers(&out.per_layer, normalize);
    let y = y_o.mean_axis(Axis(0)).expect("at least one patch");
    (y_o, y)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UfoLoss {
    pub frame: f64,
    pub utterance: f64,
    pub total: f64,
}

/// Frame loss over masked rows plus utterance loss, both per-element
/// means; also returns the gradients w.r.t. `X_o` and `c`.
pub fn ufo_loss_with_grad(
    x_o: &Array2<f64>,
    y_o: &Array2<f64>,
    c: &Array1<f64>,
    y: &Array1<f64>,
    mask: &[usize],
) -> Result<(UfoLoss, Array2<f64>, Array1<f64>)> {
    if x_o.dim() != y_o.dim() || c.len() != y.len() || c.len() != x_o.ncols() {
        return Err(Error::shape(format!(
            "UFO loss: X_o {:?}, Y_o {:?}, c {}, y {}",
            x_o.dim(),
            y_o.dim(),
            c.len(),
            y.len()
        )));
    }
    if let Some(&bad) = mask.iter().find(|&&i| i >= x_o.nrows()) {
        return Err(Error::shape(format!("mask index {bad} out of range")));
    }
    let d = x_o.ncols() as f64;
    let mut d_x = Array2::zeros(x_o.dim());
    let mut frame = 0.0;
    if !mask.is_empty() {
        let norm = mask.len() as f64 * d;
        for &i in mask {
            let diff = &x_o.row(i) - &y_o.row(i);
            frame += diff.dot(&diff);
            d_x.row_mut(i).assign(&(diff * (2.0 / norm)));
        }
        frame /= norm;
    }
    let diff = c - y;
    let utterance = diff.dot(&diff) / d;
    let d_c = diff * (2.0 / d);
    Ok((
        UfoLoss {
            frame,
            utterance,
            total: frame + utterance,
        },
        d_x,
        d_c,
    ))
}

pub fn ufo_loss(x_o: &Array2<f64>, y_o: &Array2<f64>, c: &Array1<f64>, y: &Array1<f64>, mask: &[usize]) -> Result<UfoLoss> {
    ufo_loss_with_grad(x_o, y_o, c, y, mask).map(|r| r.0)
}

/// `teacher ← τ·teacher + (1−τ)·student` for every encoder tensor.
pub fn ema_update(teacher: &mut EncoderParams, student: &EncoderParams, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::invalid(format!("EMA decay {tau} outside [0, 1]")));
    }
    let src = student.named_tensors();
    let shapes: Vec<Vec<usize>> = teacher.named_tensors().into_iter().map(|t| t.1).collect();
    if shapes.len() != src.len() || shapes.iter().zip(&src).any(|(a, b)| a != &b.1) {
        return Err(Error::shape("teacher and student encoders differ in shape"));
    }
    for (dst, s) in teacher.all_mut().into_iter().zip(src) {
        for (t, &v) in dst.iter_mut().zip(s.2) {
            *t = tau * *t + (1.0 - tau) * v;
        }
    }
    Ok(())
}

/// Linearly annealed decay for `step` out of `total` steps.
pub fn ema_decay(config: &PretrainConfig, step: usize, total: usize) -> f64 {
    if total <= 1 {
        return config.ema_end;
    }
    let t = step.min(total - 1) as f64 / (total - 1) as f64;
    config.ema_start + (config.ema_end - config.ema_start) * t
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub loss: UfoLoss,
}

pub struct PretrainOutput {
    pub state: StudentTeacherState,
    pub curve: Vec<LossRecord>,
}

/// Loss and student gradient for one clip.
pub fn clip_loss_and_grad(
    patches: &ArrayView2<f64>,
    mask: &[usize],
    student: &StudentParams,
    teacher: &EncoderParams,
    normalize_targets: bool,
) -> Result<(UfoLoss, StudentParams)> {
    let (y_o, y) = teacher_forward(patches, teacher, normalize_targets);
    let (out, cache) = student_forward_train(patches, mask, student);
    let (loss, d_x, d_c) = ufo_loss_with_grad(&out.x_o, &y_o, &out.c, &y, mask)?;
    let mut grad = student.zeros_like();
    student_backward(student, &cache, &d_x, &d_c, &mut grad);
    Ok((loss, grad))
}

pub fn total_steps(config: &PretrainConfig, n_clips: usize) -> usize {
    let per_epoch = n_clips.div_ceil(config.batch_size);
    let by_epochs = per_epoch * config.epochs;
    if config.max_steps > 0 && (by_epochs == 0 || config.max_steps < by_epochs) {
        config.max_steps
    } else {
        by_epochs
    }
}

/// Runs the optimisation over pre-extracted patch grids from one or more
/// datasets. `ids` name the clips for diagnostics.
pub fn pretrain_run(
    grids: &[PatchGrid],
    ids: &[String],
    init: EncoderParams,
    config: &PretrainConfig,
    seed: u64,
) -> Result<PretrainOutput> {
    config.validate()?;
    if grids.is_empty() {
        return Err(Error::invalid("pre-training needs at least one clip"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = StudentTeacherState::new(init, config.decoder_depth, seed);
    let mut opt = AdamW::new(&state.student, config.beta1, config.beta2, config.weight_decay);
    let total = total_steps(config, grids.len());
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut curve = Vec::with_capacity(total);
    let num_patches = grids[0].num_patches();

    for step in 0..total {
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size.min(grids.len()) {
            if cursor == order.len() {
                order = (0..grids.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let masks: Vec<Vec<usize>> = batch
            .iter()
            .map(|_| make_mask(num_patches, config.mask_ratio, &mut rng))
            .collect();

        let student = &state.student;
        let teacher = &state.teacher;
        let results: Vec<Result<(UfoLoss, StudentParams)>> = batch
            .par_iter()
            .zip(masks.par_iter())
            .map(|(&i, mask)| {
                clip_loss_and_grad(&grids[i].patches.view(), mask, student, teacher, config.normalize_targets)
            })
            .collect();

        let mut grad = state.student.zeros_like();
        let mut sum = UfoLoss {
            frame: 0.0,
            utterance: 0.0,
            total: 0.0,
        };
        for r in results {
            let (loss, g) = r?;
            sum.frame += loss.frame;
            sum.utterance += loss.utterance;
            sum.total += loss.total;
            grad.add_scaled(&g, 1.0);
        }
        let n = batch.len() as f64;
        let mean = UfoLoss {
            frame: sum.frame / n,
            utterance: sum.utterance / n,
            total: sum.total / n,
        };
        if !mean.total.is_finite() || !grad.all_finite() {
            let names: Vec<&str> = batch.iter().map(|&i| ids.get(i).map(String::as_str).unwrap_or("?")).collect();
            return Err(Error::NonFinite(format!(
                "pre-training loss at step {step}, batch {names:?}"
            )));
        }
        grad.scale(1.0 / n);
        let lr = nn::warmup_cosine(step, config.lr, config.warmup_steps, total);
        opt.step(&mut state.student, &grad, lr);
        let tau = ema_decay(config, step, total);
        ema_update(&mut state.teacher, &state.student.encoder, tau)?;
        state.step += 1;
        curve.push(LossRecord { step, loss: mean });
    }
    Ok(PretrainOutput { state, curve })
}

/// Writes `step,L_f,L_u,L_UFO`.
pub fn write_loss_csv(path: &Path, curve: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["step", "L_f", "L_u", "L_UFO"])
        .map_err(|e| Error::csv(path, e))?;
    for r in curve {
        w.write_record([
            r.step.to_string(),
            r.loss.frame.to_string(),
            r.loss.utterance.to_string(),
            r.loss.total.to_string(),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_params, EncoderConfig};
    use ndarray::array;
    use rand::Rng;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            depth: 2,
            dim: 8,
            heads: 2,
            mlp_ratio: 2,
            patch_dim: 4,
            num_patches: 6,
            init_std: 0.3,
        }
    }

    #[test]
    fn mask_sizes_and_determinism() {
        let m = make_mask(512, 0.8, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(m.len(), 410);
        let mut dedup = m.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), 410);
        assert_eq!(m, make_mask(512, 0.8, &mut ChaCha8Rng::seed_from_u64(1)));
        assert!(make_mask(512, 0.0005, &mut ChaCha8Rng::seed_from_u64(1)).is_empty());
    }

    #[test]
    fn student_output_covers_every_patch() {
        let p = init_params(&tiny(), 0).unwrap();
        let st = StudentTeacherState::new(p, 1, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let patches = Array2::from_shape_simple_fn((6, 4), || rng.random_range(-1.0..1.0));
        for mask in [vec![], vec![1, 3], vec![0, 1, 2, 3, 4, 5]] {
            let (out, _) = student_forward_train(&patches.view(), &mask, &st.student);
            assert_eq!(out.x_o.dim(), (6, 8));
            assert!(out.x_o.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn teacher_average_properties() {
        let a = array![[1.0, -2.0, 0.5], [3.0, 0.0, -1.0]];
        assert_eq!(average_layers(std::slice::from_ref(&a), false), a);
        let zero = average_layers(&[a.clone(), -&a], false);
        assert!(zero.iter().all(|&v| v == 0.0));
        let zero = average_layers(&[a.clone(), -&a], true);
        assert!(zero.iter().all(|&v| v.abs() < 1e-15));

        let cfg = EncoderConfig { depth: 1, ..tiny() };
        let t = init_params(&cfg, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let patches = Array2::from_shape_simple_fn((6, 4), || rng.random_range(-1.0..1.0));
        let (y_o, y) = teacher_forward(&patches.view(), &t, false);
        let enc = encoder::forward_train(&patches.view(), &t, &(0..6).collect::<Vec<_>>()).0;
        assert_eq!(y_o, enc.per_layer[0]);
        assert_eq!(y, y_o.mean_axis(Axis(0)).unwrap());
    }

    #[test]
    fn ufo_loss_examples() {
        let x = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let c = array![0.5, -0.5];
        let l = ufo_loss(&x, &x, &c, &c, &[0, 2]).unwrap();
        assert_eq!((l.frame, l.utterance, l.total), (0.0, 0.0, 0.0));

        let shifted = &x + 1.0;
        let l = ufo_loss(&shifted, &x, &c, &c, &[0, 2]).unwrap();
        assert_eq!(l.frame, 1.0);
        assert_eq!(l.total, 1.0);

        let y = array![0.0, 0.0];
        let base = ufo_loss(&shifted, &x, &c, &y, &[1]).unwrap();
        let doubled = &x + 2.0;
        let scaled = ufo_loss(&doubled, &x, &(&c * 2.0), &y, &[1]).unwrap();
        assert!((scaled.total - 4.0 * base.total).abs() < 1e-12);

        assert!(ufo_loss(&x, &x.slice(ndarray::s![..2, ..]).to_owned(), &c, &c, &[0]).is_err());
    }

    #[test]
    fn ema_boundaries_and_value() {
        let s = init_params(&tiny(), 1).unwrap();
        let t0 = init_params(&tiny(), 2).unwrap();
        let mut t = t0.clone();
        ema_update(&mut t, &s, 1.0).unwrap();
        assert_eq!(t, t0);
        ema_update(&mut t, &s, 0.0).unwrap();
        assert_eq!(t, s);

        let mut ones = t0.clone();
        ones.all_mut().into_iter().for_each(|x| x.fill(1.0));
        let zeros = t0.zeros_like();
        ema_update(&mut ones, &zeros, 0.9).unwrap();
        assert!(ones.named_tensors().iter().all(|t| t.2.iter().all(|&v| v == 0.9)));

        let other = init_params(&EncoderConfig { dim: 4, ..tiny() }, 1).unwrap();
        assert!(ema_update(&mut t, &other, 0.5).is_err());
    }

    #[test]
    fn ema_schedule_endpoints() {
        let c = PretrainConfig::default();
        assert_eq!(ema_decay(&c, 0, 100), 0.998);
        assert!((ema_decay(&c, 99, 100) - 0.9999).abs() < 1e-15);
    }

    #[test]
    fn mask_token_gradient_matches_finite_difference() {
        let p = init_params(&tiny(), 5).unwrap();
        let st = StudentTeacherState::new(p, 1, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let patches = Array2::from_shape_simple_fn((6, 4), || rng.random_range(-1.0..1.0));
        let mask = vec![1, 2, 4];
        let objective = |s: &StudentParams| {
            let (out, _) = student_forward_train(&patches.view(), &mask, s);
            out.x_o.iter().map(|v| v * v).sum::<f64>()
        };
        let (out, cache) = student_forward_train(&patches.view(), &mask, &st.student);
        let mut grad = st.student.zeros_like();
        student_backward(&st.student, &cache, &(&out.x_o * 2.0), &Array1::zeros(8), &mut grad);
        let eps = 1e-6;
        for j in 0..8 {
            let mut plus = st.student.clone();
            plus.decoder.mask_token[j] += eps;
            let mut minus = st.student.clone();
            minus.decoder.mask_token[j] -= eps;
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * eps);
            let analytic = grad.decoder.mask_token[j];
            assert!(
                (numeric - analytic).abs() <= 1e-3 * numeric.abs().max(1e-6),
                "{j}: {numeric} vs {analytic}"
            );
        }
    }
}

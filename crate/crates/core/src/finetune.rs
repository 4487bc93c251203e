//! Machine-attribute classification fine-tuning with an ArcFace head over
//! ground-truth and pseudo attribute classes.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetManifest, Split};
use crate::encoder::{self, Checkpoint, EncoderParams};
use crate::error::{Error, Result};
use crate::frontend::{self, FrontendParams, SoftLabel, SpecAugment, Spectrogram};
use crate::nn::{self, join, slice2, slice2_mut, AdamW, Params};
use crate::pseudolabel::{pseudo_token, PseudoLabeling, PSEUDO_PREFIX};

pub const NO_ATTR: &str = "noAttr";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelMode {
    /// Unattributed machines contribute one class per pseudo cluster.
    Pseudo,
    /// Each unattributed machine collapses into `(M, noAttr)`.
    NoPseudo,
}

/// Ordered `(machine, attribute)` classes and the class of every train clip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSpace {
    pub classes: Vec<(String, String)>,
    pub clip_class: BTreeMap<String, usize>,
}

impl LabelSpace {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn class_of(&self, key: &str) -> Option<usize> {
        self.clip_class.get(key).copied()
    }
}

pub fn build_label_space(
    manifest: &DatasetManifest,
    pseudo: &[PseudoLabeling],
    mode: LabelMode,
) -> Result<LabelSpace> {
    let mut per_clip: Vec<(String, String, String)> = Vec::new();
    for machine in &manifest.machines {
        let clips: Vec<_> = manifest.clips_of(machine, Split::Train).collect();
        if manifest.is_attributed(machine) {
            for c in clips {
                let attr = c.attribute.clone().unwrap_or_default();
                if attr.starts_with(PSEUDO_PREFIX) || attr == NO_ATTR {
                    return Err(Error::invalid(format!(
                        "ground-truth attribute {attr:?} of {} uses a reserved token",
                        c.key()
                    )));
                }
                per_clip.push((c.key(), machine.clone(), attr));
            }
        } else if mode == LabelMode::NoPseudo {
            for c in clips {
                per_clip.push((c.key(), machine.clone(), NO_ATTR.to_string()));
            }
        } else {
            let labeling = pseudo
                .iter()
                .find(|p| &p.machine_type == machine)
                .ok_or_else(|| Error::invalid(format!("no pseudo labels for unattributed machine {machine}")))?;
            let map: BTreeMap<&str, usize> = labeling.labels.iter().map(|(k, l)| (k.as_str(), *l)).collect();
            for c in clips {
                let key = c.key();
                let label = map
                    .get(key.as_str())
                    .ok_or_else(|| Error::invalid(format!("clip {key} has no pseudo label")))?;
                per_clip.push((key, machine.clone(), pseudo_token(*label)));
            }
        }
    }
    let classes: Vec<(String, String)> = per_clip
        .iter()
        .map(|(_, m, a)| (m.clone(), a.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: BTreeMap<&(String, String), usize> = classes.iter().enumerate().map(|(i, c)| (c, i)).collect();
    let clip_class = per_clip
        .iter()
        .map(|(k, m, a)| (k.clone(), index[&(m.clone(), a.clone())]))
        .collect();
    Ok(LabelSpace { classes, clip_class })
}

/// Class weight rows (normalised at use) with angular margin and scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ArcFaceHead {
    pub weight: Array2<f64>,
    pub margin: f64,
    pub scale: f64,
}

impl Params for ArcFaceHead {
    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, Vec<usize>, &'a [f64])>) {
        out.push((join(prefix, "weight"), self.weight.shape().to_vec(), slice2(&self.weight)));
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(slice2_mut(&mut self.weight));
    }
}

impl ArcFaceHead {
    pub fn new(n_classes: usize, dim: usize, margin: f64, scale: f64, seed: u64) -> Result<Self> {
        if n_classes == 0 || margin < 0.0 || scale <= 0.0 {
            return Err(Error::invalid(format!(
                "ArcFace head needs classes >= 1, margin >= 0, scale > 0 (got {n_classes}, {margin}, {scale})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5c0_face);
        let weight = nn::trunc_normal(&mut rng, (n_classes, dim), 1.0);
        Ok(Self { weight, margin, scale })
    }

    pub fn n_classes(&self) -> usize {
        self.weight.nrows()
    }
}

fn unit(v: &ArrayView1<f64>) -> (Array1<f64>, f64) {
    let norm = v.dot(v).sqrt();
    (v / norm, norm)
}

/// Gradient of `v / |v|` pulled back from `du`.
fn unit_backward(u: &Array1<f64>, norm: f64, du: &Array1<f64>) -> Array1<f64> {
    (du - &(u * u.dot(du))) / norm
}

pub struct ArcFaceCache {
    e_unit: Array1<f64>,
    e_norm: f64,
    w_unit: Array2<f64>,
    w_norm: Array1<f64>,
    cosines: Array1<f64>,
    margin_class: Option<usize>,
}

/// Margin-adjusted logit for cosine `c` and its derivative in `c`.
fn margin_logit(c: f64, margin: f64) -> (f64, f64) {
    let c = c.clamp(-1.0, 1.0);
    if c > (PI - margin).cos() {
        let sin = (1.0 - c * c).max(0.0).sqrt();
        let value = c * margin.cos() - sin * margin.sin();
        let slope = margin.cos() + margin.sin() * c / sin.max(1e-12);
        (value, slope)
    } else {
        (c - margin * margin.sin(), 1.0)
    }
}

pub fn arcface_forward(
    embedding: &ArrayView1<f64>,
    head: &ArcFaceHead,
    true_class: Option<usize>,
) -> Result<(Array1<f64>, ArcFaceCache)> {
    if embedding.len() != head.weight.ncols() {
        return Err(Error::shape(format!(
            "embedding of dimension {} for a head of width {}",
            embedding.len(),
            head.weight.ncols()
        )));
    }
    if embedding.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ArcFace input".into()));
    }
    let (e_unit, e_norm) = unit(embedding);
    if e_norm == 0.0 {
        return Err(Error::ZeroEmbedding("ArcFace input".into()));
    }
    let n = head.n_classes();
    let mut w_unit = head.weight.clone();
    let mut w_norm = Array1::zeros(n);
    for (j, mut row) in w_unit.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroEmbedding(format!("ArcFace weight row {j}")));
        }
        row /= norm;
        w_norm[j] = norm;
    }
    let cosines = w_unit.dot(&e_unit);
    let mut logits = &cosines * head.scale;
    if let Some(y) = true_class {
        if y >= n {
            return Err(Error::invalid(format!("class {y} outside {n} classes")));
        }
        logits[y] = head.scale * margin_logit(cosines[y], head.margin).0;
    }
    let cache = ArcFaceCache {
        e_unit,
        e_norm,
        w_unit,
        w_norm,
        cosines,
        margin_class: true_class,
    };
    Ok((logits, cache))
}

/// `s·cos θ_j`, with `s·cos(θ_y + m)` for `true_class` when given.
pub fn arcface_logits(embedding: &ArrayView1<f64>, head: &ArcFaceHead, true_class: Option<usize>) -> Result<Array1<f64>> {
    arcface_forward(embedding, head, true_class).map(|r| r.0)
}

/// Returns the gradient w.r.t. the embedding; head gradient accumulates into `grad`.
pub fn arcface_backward(head: &ArcFaceHead, cache: &ArcFaceCache, d_logits: &Array1<f64>, grad: &mut ArcFaceHead) -> Array1<f64> {
    let mut d_cos = d_logits * head.scale;
    if let Some(y) = cache.margin_class {
        d_cos[y] *= margin_logit(cache.cosines[y], head.margin).1;
    }
    let d_e_unit = cache.w_unit.t().dot(&d_cos);
    for (j, w) in cache.w_unit.rows().into_iter().enumerate() {
        let d_w_unit = &cache.e_unit * d_cos[j];
        let d_w = unit_backward(&w.to_owned(), cache.w_norm[j], &d_w_unit);
        let mut g = grad.weight.row_mut(j);
        g += &d_w;
    }
    unit_backward(&cache.e_unit, cache.e_norm, &d_e_unit)
}

fn log_softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = logits.mapv(|v| (v - max).exp()).sum().ln() + max;
    logits - lse
}

/// Cross-entropy against a soft label and its gradient w.r.t. the logits.
pub fn asd_loss_with_grad(logits: &Array1<f64>, label: &SoftLabel) -> (f64, Array1<f64>) {
    let logp = log_softmax(logits);
    let mut target: Array1<f64> = Array1::zeros(logits.len());
    for &(c, w) in &label.entries {
        target[c] += w;
    }
    let loss = -(&target * &logp).sum();
    let grad = logp.mapv(f64::exp) - &target;
    (loss, grad)
}

pub fn asd_loss(logits: &Array1<f64>, label: &SoftLabel) -> f64 {
    asd_loss_with_grad(logits, label).0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub epochs: usize,
    /// Stops after this many optimiser steps when non-zero.
    pub max_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub margin: f64,
    pub scale: f64,
    pub mixup: bool,
    pub mixup_alpha: f64,
    pub spec_augment: bool,
    pub augment: SpecAugment,
    /// Feed the CLS output to the classifier instead of the pooled patches.
    pub use_cls: bool,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            max_steps: 0,
            batch_size: 32,
            lr: 5e-5,
            warmup_steps: 120,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            margin: 0.5,
            scale: 30.0,
            mixup: true,
            mixup_alpha: 0.5,
            spec_augment: true,
            augment: SpecAugment::default(),
            use_cls: false,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || (self.epochs == 0 && self.max_steps == 0) {
            return Err(Error::invalid("finetune needs batch_size >= 1 and a positive step budget"));
        }
        if !(self.lr > 0.0) || self.margin < 0.0 || !(self.scale > 0.0) || !(self.mixup_alpha > 0.0) {
            return Err(Error::invalid("finetune lr, scale and mixup_alpha must be positive; margin non-negative"));
        }
        Ok(())
    }

    pub fn total_steps(&self, n_clips: usize) -> usize {
        let by_epochs = n_clips.div_ceil(self.batch_size) * self.epochs;
        if self.max_steps > 0 && (by_epochs == 0 || self.max_steps < by_epochs) {
            self.max_steps
        } else {
            by_epochs
        }
    }
}

pub fn lr_schedule(step: usize, config: &FinetuneConfig, total_steps: usize) -> f64 {
    nn::warmup_cosine(step, config.lr, config.warmup_steps, total_steps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneParams {
    pub encoder: EncoderParams,
    pub head: ArcFaceHead,
}

impl Params for FinetuneParams {
    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, Vec<usize>, &'a [f64])>) {
        self.encoder.named(&join(prefix, "encoder"), out);
        self.head.named(&join(prefix, "head"), out);
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        self.encoder.tensors_mut(out);
        self.head.tensors_mut(out);
    }
}

/// Clip embedding fed to the classifier and scorer.
pub fn clip_embedding(patches: &ArrayView2<f64>, encoder: &EncoderParams, use_cls: bool) -> Result<Array1<f64>> {
    let visible: Vec<usize> = (0..patches.nrows()).collect();
    let (out, _) = encoder::forward_train(patches, encoder, &visible);
    if use_cls {
        Ok(out.cls_out)
    } else {
        encoder::pool_embedding(&out.z.view())
    }
}

pub struct ClipStep {
    pub loss: f64,
    pub correct: bool,
    pub grad: FinetuneParams,
}

/// Loss, accuracy and gradient for one (possibly mixed) patch grid.
pub fn clip_loss_and_grad(
    patches: &ArrayView2<f64>,
    label: &SoftLabel,
    params: &FinetuneParams,
    use_cls: bool,
) -> Result<ClipStep> {
    let visible: Vec<usize> = (0..patches.nrows()).collect();
    let (out, cache) = encoder::forward_train(patches, &params.encoder, &visible);
    let embedding = if use_cls {
        out.cls_out.clone()
    } else {
        encoder::pool_embedding(&out.z.view())?
    };
    let target = label.dominant();
    let (logits, ac) = arcface_forward(&embedding.view(), &params.head, Some(target))?;
    let (loss, d_logits) = asd_loss_with_grad(&logits, label);
    let correct = ac
        .cosines
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
        .0
        == target;
    let mut grad = params.zeros_like();
    let d_e = arcface_backward(&params.head, &ac, &d_logits, &mut grad.head);
    let d = params.encoder.config.dim;
    let mut d_tokens = Array2::zeros((visible.len() + 1, d));
    if use_cls {
        d_tokens.row_mut(0).assign(&d_e);
    } else {
        let share = &d_e / visible.len() as f64;
        for mut row in d_tokens.rows_mut().into_iter().skip(1) {
            row.assign(&share);
        }
    }
    encoder::backward(&params.encoder, &cache, d_tokens, &mut grad.encoder);
    Ok(ClipStep { loss, correct, grad })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub acc: f64,
}

pub struct FinetuneOutput {
    pub params: FinetuneParams,
    pub curve: Vec<CurveRecord>,
}

/// One training example: a padded, normalised spectrogram and its class.
pub struct TrainClip {
    pub id: String,
    pub spectrogram: Spectrogram,
    pub class: usize,
}

fn augment_clip(
    clips: &[TrainClip],
    i: usize,
    config: &FinetuneConfig,
    frontend: &FrontendParams,
    seed: u64,
) -> Result<(Array2<f64>, SoftLabel)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = &clips[i];
    let (mut spec, label) = if config.mixup {
        let j = rng.random_range(0..clips.len());
        let lambda = Beta::new(config.mixup_alpha, config.mixup_alpha)
            .map_err(|e| Error::invalid(format!("mixup Beta: {e}")))?
            .sample(&mut rng);
        frontend::mixup(&a.spectrogram, &clips[j].spectrogram, a.class, clips[j].class, lambda)?
    } else {
        (a.spectrogram.clone(), SoftLabel::one_hot(a.class))
    };
    if config.spec_augment {
        spec = config.augment.apply(&spec, &mut rng);
    }
    Ok((frontend::patchify(&spec, frontend)?.patches, label))
}

pub fn finetune_run(
    clips: &[TrainClip],
    frontend: &FrontendParams,
    label_space: &LabelSpace,
    init: EncoderParams,
    head: Option<ArcFaceHead>,
    config: &FinetuneConfig,
    seed: u64,
) -> Result<FinetuneOutput> {
    config.validate()?;
    if clips.is_empty() {
        return Err(Error::invalid("fine-tuning needs at least one clip"));
    }
    let head = match head {
        Some(h) => h,
        None => ArcFaceHead::new(label_space.len(), init.config.dim, config.margin, config.scale, seed)?,
    };
    if head.n_classes() != label_space.len() || head.weight.ncols() != init.config.dim {
        return Err(Error::shape(format!(
            "head has {}x{} weights; label space has {} classes, encoder width {}",
            head.n_classes(),
            head.weight.ncols(),
            label_space.len(),
            init.config.dim
        )));
    }
    if let Some(c) = clips.iter().find(|c| c.class >= label_space.len()) {
        return Err(Error::invalid(format!("clip {} has class {} outside the label space", c.id, c.class)));
    }
    let mut params = FinetuneParams { encoder: init, head };
    let mut opt = AdamW::new(&params, config.beta1, config.beta2, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = config.total_steps(clips.len());
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut curve = Vec::with_capacity(total);

    for step in 0..total {
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size.min(clips.len()) {
            if cursor == order.len() {
                order = (0..clips.len()).collect();
                rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
                cursor = 0;
            }
            batch.push((order[cursor], rng.next_u64()));
            cursor += 1;
        }
        let current = &params;
        let results: Vec<Result<ClipStep>> = batch
            .par_iter()
            .map(|&(i, s)| {
                let (patches, label) = augment_clip(clips, i, config, frontend, s)?;
                clip_loss_and_grad(&patches.view(), &label, current, config.use_cls)
            })
            .collect();
        let mut grad = params.zeros_like();
        let (mut loss, mut hits) = (0.0, 0usize);
        for r in results {
            let r = r?;
            loss += r.loss;
            hits += usize::from(r.correct);
            grad.add_scaled(&r.grad, 1.0);
        }
        let n = batch.len() as f64;
        loss /= n;
        if !loss.is_finite() || !grad.all_finite() {
            let names: Vec<&str> = batch.iter().map(|&(i, _)| clips[i].id.as_str()).collect();
            return Err(Error::NonFinite(format!("fine-tuning loss at step {step}, batch {names:?}")));
        }
        grad.scale(1.0 / n);
        let lr = lr_schedule(step, config, total);
        opt.step(&mut params, &grad, lr);
        curve.push(CurveRecord {
            step,
            lr,
            loss,
            acc: hits as f64 / n,
        });
    }
    Ok(FinetuneOutput { params, curve })
}

/// Fraction of clips whose inference argmax matches their class.
pub fn accuracy(clips: &[TrainClip], frontend: &FrontendParams, params: &FinetuneParams, use_cls: bool) -> Result<f64> {
    let hits: Vec<bool> = clips
        .par_iter()
        .map(|c| {
            let grid = frontend::patchify(&c.spectrogram, frontend)?;
            let e = clip_embedding(&grid.patches.view(), &params.encoder, use_cls)?;
            let logits = arcface_logits(&e.view(), &params.head, None)?;
            let arg = logits
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
                .0;
            Ok(arg == c.class)
        })
        .collect::<Result<_>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len().max(1) as f64)
}

/// Writes `step,lr,loss,acc`.
pub fn write_curve_csv(path: &Path, curve: &[CurveRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["step", "lr", "loss", "acc"])
        .map_err(|e| Error::csv(path, e))?;
    for r in curve {
        w.write_record([r.step.to_string(), r.lr.to_string(), r.loss.to_string(), r.acc.to_string()])
            .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Adapted checkpoint: encoder blobs plus `head.weight`.
pub fn adapted_checkpoint(params: &FinetuneParams) -> Checkpoint {
    let mut ck = Checkpoint::new("adapted", &params.encoder.config);
    ck.push_params("encoder", &params.encoder);
    ck.push_params("head", &params.head);
    ck
}

pub fn load_head(ck: &Checkpoint, margin: f64, scale: f64) -> Result<ArcFaceHead> {
    let blob = ck
        .blobs
        .iter()
        .find(|b| b.name == "head.weight")
        .ok_or_else(|| Error::Checkpoint {
            path: Default::default(),
            reason: "no head.weight blob".into(),
        })?;
    if blob.shape.len() != 2 {
        return Err(Error::shape("head.weight must be rank 2"));
    }
    let mut head = ArcFaceHead {
        weight: Array2::zeros((blob.shape[0], blob.shape[1])),
        margin,
        scale,
    };
    ck.load_params("head", &mut head)?;
    Ok(head)
}

/// Mean of `f` over the last `n` curve records.
pub fn tail_mean(curve: &[CurveRecord], n: usize, f: impl Fn(&CurveRecord) -> f64) -> f64 {
    let tail = &curve[curve.len().saturating_sub(n)..];
    tail.iter().map(f).sum::<f64>() / tail.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ClipMeta, Condition, Domain};
    use crate::pseudolabel::{Dendrogram, KPolicy};
    use ndarray::array;
    use rand_distr::StandardNormal;

    fn clip(machine: &str, index: u32, attr: Option<&str>) -> ClipMeta {
        ClipMeta {
            machine_type: machine.into(),
            split: Split::Train,
            domain: Domain::Source,
            condition: Condition::Normal,
            index,
            attribute: attr.map(Into::into),
            path: Default::default(),
        }
    }

    fn manifest() -> DatasetManifest {
        DatasetManifest::from_clips(
            "root",
            vec![
                clip("ToyCar", 0, Some("spd28V")),
                clip("ToyCar", 1, Some("spd31V")),
                clip("ToyCar", 2, Some("spd28V")),
                clip("Fan", 0, None),
                clip("Fan", 1, None),
                clip("Fan", 2, None),
            ],
        )
        .unwrap()
    }

    fn fan_labels(m: &DatasetManifest, labels: &[usize]) -> PseudoLabeling {
        let keys: Vec<String> = m.clips_of("Fan", Split::Train).map(|c| c.key()).collect();
        PseudoLabeling {
            machine_type: "Fan".into(),
            labels: keys.into_iter().zip(labels.iter().copied()).collect(),
            k: 3,
            policy: KPolicy::Fixed { k: 3 },
            dendrogram: Dendrogram { n: 3, merges: vec![] },
        }
    }

    #[test]
    fn label_space_modes() {
        let m = manifest();
        let ls = build_label_space(&m, &[fan_labels(&m, &[0, 1, 2])], LabelMode::Pseudo).unwrap();
        let toycar: Vec<_> = ls.classes.iter().filter(|c| c.0 == "ToyCar").collect();
        assert_eq!(toycar.len(), 2);
        let fan: Vec<&str> = ls.classes.iter().filter(|c| c.0 == "Fan").map(|c| c.1.as_str()).collect();
        assert_eq!(fan, ["pseudo0", "pseudo1", "pseudo2"]);
        assert_eq!(ls.clip_class.len(), 6);

        let np = build_label_space(&m, &[], LabelMode::NoPseudo).unwrap();
        assert_eq!(np.len(), 3);
        assert!(np.classes.contains(&("Fan".into(), NO_ATTR.into())));
        assert!(build_label_space(&m, &[], LabelMode::Pseudo).is_err());
    }

    fn head(n: usize, d: usize, m: f64) -> ArcFaceHead {
        ArcFaceHead::new(n, d, m, 30.0, 3).unwrap()
    }

    #[test]
    fn margin_free_logits_are_scaled_cosines() {
        let h = head(4, 5, 0.0);
        let e = array![0.3, -1.0, 2.0, 0.5, 0.1];
        let train = arcface_logits(&e.view(), &h, Some(2)).unwrap();
        let infer = arcface_logits(&e.view(), &h, None).unwrap();
        for j in 0..4 {
            let w = h.weight.row(j);
            let cos = w.dot(&e) / (w.dot(&w).sqrt() * e.dot(&e).sqrt());
            assert!((infer[j] - 30.0 * cos).abs() < 1e-9);
            assert!((train[j] - infer[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn aligned_embedding_gets_cos_margin() {
        let mut h = head(3, 4, 0.5);
        h.weight = array![[2.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]];
        let e = array![5.0, 0.0, 0.0, 0.0];
        let l = arcface_logits(&e.view(), &h, Some(0)).unwrap();
        assert!((l[0] - 30.0 * 0.5f64.cos()).abs() < 1e-12);
        assert!(arcface_logits(&Array1::zeros(4).view(), &h, None).is_err());
    }

    #[test]
    fn easy_margin_fallback_beyond_pi() {
        let m = 0.5;
        let (v, s) = margin_logit(-0.99, m);
        assert!((v - (-0.99 - m * m.sin())).abs() < 1e-12);
        assert_eq!(s, 1.0);
        let (v, _) = margin_logit(0.2, m);
        assert!((v - (0.2f64.acos() + m).cos()).abs() < 1e-12);
    }

    #[test]
    fn uniform_logits_give_log_n() {
        let l = Array1::from_elem(7, 2.5);
        assert!((asd_loss(&l, &SoftLabel::one_hot(3)) - 7f64.ln()).abs() < 1e-12);
        let sep = array![10.0, 0.0, 0.0];
        assert!(asd_loss(&sep, &SoftLabel::one_hot(0)) < 3f64.ln());
    }

    #[test]
    fn loss_gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let l: Array1<f64> = Array1::from_shape_simple_fn(5, || rng.sample(StandardNormal));
        let label = SoftLabel {
            entries: vec![(1, 0.3), (4, 0.7)],
        };
        let (_, g) = asd_loss_with_grad(&l, &label);
        for j in 0..5 {
            let h = 1e-6;
            let mut a = l.clone();
            a[j] += h;
            let mut b = l.clone();
            b[j] -= h;
            let fd = (asd_loss(&a, &label) - asd_loss(&b, &label)) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn arcface_backward_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let h = head(4, 6, 0.5);
        let e: Array1<f64> = Array1::from_shape_simple_fn(6, || rng.sample(StandardNormal));
        let label = SoftLabel {
            entries: vec![(2, 0.8), (0, 0.2)],
        };
        let f = |e: &Array1<f64>, h: &ArcFaceHead| asd_loss(&arcface_logits(&e.view(), h, Some(2)).unwrap(), &label);
        let (logits, cache) = arcface_forward(&e.view(), &h, Some(2)).unwrap();
        let (_, dl) = asd_loss_with_grad(&logits, &label);
        let mut gh = h.zeros_like();
        let de = arcface_backward(&h, &cache, &dl, &mut gh);
        let eps = 1e-6;
        for i in 0..6 {
            let (mut a, mut b) = (e.clone(), e.clone());
            a[i] += eps;
            b[i] -= eps;
            let fd = (f(&a, &h) - f(&b, &h)) / (2.0 * eps);
            assert!((fd - de[i]).abs() < 1e-5 * fd.abs().max(1.0));
        }
        for (r, c) in [(0, 0), (2, 3), (3, 5)] {
            let (mut a, mut b) = (h.clone(), h.clone());
            a.weight[[r, c]] += eps;
            b.weight[[r, c]] -= eps;
            let fd = (f(&e, &a) - f(&e, &b)) / (2.0 * eps);
            assert!((fd - gh.weight[[r, c]]).abs() < 1e-5 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn schedule_landmarks() {
        let c = FinetuneConfig::default();
        let total = 1000;
        assert_eq!(lr_schedule(0, &c, total), 0.0);
        assert!((lr_schedule(120, &c, total) - 5e-5).abs() < 1e-18);
        assert_eq!(lr_schedule(total, &c, total), 0.0);
        let mut prev = 0.0;
        for s in 0..=120 {
            let v = lr_schedule(s, &c, total);
            assert!(v >= prev);
            prev = v;
        }
        for s in 121..=total {
            let v = lr_schedule(s, &c, total);
            assert!(v <= prev);
            prev = v;
        }
    }
}

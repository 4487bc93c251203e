//! Waveform loading, log-mel extraction, patch decomposition and the
//! training-time augmentations.

use std::path::Path;
use std::sync::Arc;

use ndarray::{s, Array2, Axis};
use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value substituted for mel energies below this floor before the log.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontendParams {
    pub sample_rate: u32,
    pub clip_seconds: f64,
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
    pub n_mels: usize,
    pub patch_size: usize,
    pub padded_frames: usize,
    pub f_min: f64,
    pub f_max: f64,
    /// Per-clip standardisation (zero mean, unit variance over valid frames).
    pub standardize: bool,
}

impl Default for FrontendParams {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            clip_seconds: 10.0,
            frame_length_ms: 25.0,
            frame_shift_ms: 10.0,
            n_mels: 128,
            patch_size: 16,
            padded_frames: 1024,
            f_min: 0.0,
            f_max: 8000.0,
            standardize: true,
        }
    }
}

impl FrontendParams {
    pub fn clip_samples(&self) -> usize {
        (self.clip_seconds * self.sample_rate as f64).round() as usize
    }

    pub fn frame_length(&self) -> usize {
        (self.frame_length_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn frame_shift(&self) -> usize {
        (self.frame_shift_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn n_fft(&self) -> usize {
        self.frame_length().next_power_of_two()
    }

    /// Frames produced by a full-length clip before padding.
    pub fn raw_frames(&self) -> usize {
        let n = self.clip_samples();
        let len = self.frame_length();
        if n < len {
            0
        } else {
            (n - len) / self.frame_shift() + 1
        }
    }

    pub fn freq_patches(&self) -> usize {
        self.n_mels / self.patch_size
    }

    pub fn time_patches(&self) -> usize {
        self.padded_frames / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.freq_patches() * self.time_patches()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size
    }

    pub fn validate(&self) -> Result<()> {
        let shift = self.frame_shift();
        if !(self.frame_length() > shift && shift > 0) {
            return Err(Error::invalid(
                "frontend: frame_length must exceed frame_shift > 0",
            ));
        }
        if self.patch_size == 0 || self.n_mels == 0 || !self.n_mels.is_multiple_of(self.patch_size) {
            return Err(Error::invalid(
                "frontend: n_mels must be a positive multiple of patch_size",
            ));
        }
        if self.padded_frames == 0 || !self.padded_frames.is_multiple_of(self.patch_size) {
            return Err(Error::invalid(
                "frontend: padded_frames must be a positive multiple of patch_size",
            ));
        }
        if self.raw_frames() == 0 || self.padded_frames < self.raw_frames() {
            return Err(Error::invalid(format!(
                "frontend: padded_frames {} is smaller than the raw frame count {}",
                self.padded_frames,
                self.raw_frames()
            )));
        }
        if !(self.f_min >= 0.0 && self.f_max > self.f_min && self.f_max <= self.sample_rate as f64 / 2.0)
        {
            return Err(Error::invalid("frontend: need 0 <= f_min < f_max <= Nyquist"));
        }
        Ok(())
    }
}

/// Reads a 16-bit mono clip, scales it to [-1, 1] and truncates or
/// zero-pads it to exactly `clip_seconds`.
pub fn load_waveform(path: &Path, params: &FrontendParams) -> Result<Vec<f32>> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.sample_rate != params.sample_rate {
        return Err(Error::Format(format!(
            "{}: sample rate {} Hz, expected {} Hz",
            path.display(),
            spec.sample_rate,
            params.sample_rate
        )));
    }
    if spec.channels != 1 {
        return Err(Error::Format(format!(
            "{}: {} channels, expected mono",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Format(format!(
            "{}: expected 16-bit PCM",
            path.display()
        )));
    }
    let target = params.clip_samples();
    let mut out = Vec::with_capacity(target);
    for s in reader.samples::<i16>().take(target) {
        out.push(s.map_err(wav_err)? as f32 / 32768.0);
    }
    out.resize(target, 0.0);
    Ok(out)
}

/// Log-mel energies, `n_mels × frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Array2<f64>,
}

impl Spectrogram {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("spectrogram".into()));
        }
        Ok(Self { values })
    }

    pub fn n_mels(&self) -> usize {
        self.values.nrows()
    }

    pub fn frames(&self) -> usize {
        self.values.ncols()
    }

    pub fn mean(&self) -> f64 {
        self.values.mean().unwrap_or(0.0)
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-scale filterbank, `n_mels × (n_fft/2 + 1)`.
///
/// Triangles are linear in mel, with `n_mels + 2` edges spaced evenly
/// between `f_min` and `f_max`.
pub fn mel_filterbank(params: &FrontendParams) -> Array2<f64> {
    let n_fft = params.n_fft();
    let n_bins = n_fft / 2 + 1;
    let sr = params.sample_rate as f64;
    let lo = hz_to_mel(params.f_min);
    let hi = hz_to_mel(params.f_max);
    let step = (hi - lo) / (params.n_mels + 1) as f64;
    let mut fb = Array2::zeros((params.n_mels, n_bins));
    for m in 0..params.n_mels {
        let left = lo + step * m as f64;
        let center = left + step;
        let right = center + step;
        for k in 0..n_bins {
            let mel = hz_to_mel(k as f64 * sr / n_fft as f64);
            let w = if mel > left && mel <= center {
                (mel - left) / (center - left)
            } else if mel > center && mel < right {
                (right - mel) / (right - center)
            } else {
                0.0
            };
            fb[[m, k]] = w;
        }
    }
    fb
}

/// Centre frequencies (Hz) of the filters built by [`mel_filterbank`].
pub fn mel_centers(params: &FrontendParams) -> Vec<f64> {
    let lo = hz_to_mel(params.f_min);
    let hi = hz_to_mel(params.f_max);
    let step = (hi - lo) / (params.n_mels + 1) as f64;
    (1..=params.n_mels)
        .map(|m| mel_to_hz(lo + step * m as f64))
        .collect()
}

/// Reusable log-mel extractor holding the FFT plan, window and filterbank.
pub struct LogMel {
    params: FrontendParams,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filters: Array2<f64>,
}

impl LogMel {
    pub fn new(params: &FrontendParams) -> Result<Self> {
        params.validate()?;
        let n_fft = params.n_fft();
        let len = params.frame_length();
        // periodic Hann
        let window = (0..len)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / len as f64).cos())
            .collect();
        Ok(Self {
            params: params.clone(),
            fft: FftPlanner::new().plan_fft_forward(n_fft),
            window,
            filters: mel_filterbank(params),
        })
    }

    pub fn params(&self) -> &FrontendParams {
        &self.params
    }

    /// Unpadded log-mel spectrogram of a full-length clip.
    pub fn compute(&self, waveform: &[f32]) -> Result<Spectrogram> {
        let p = &self.params;
        if waveform.len() != p.clip_samples() {
            return Err(Error::shape(format!(
                "waveform has {} samples, expected {}",
                waveform.len(),
                p.clip_samples()
            )));
        }
        let n_fft = p.n_fft();
        let len = p.frame_length();
        let shift = p.frame_shift();
        let frames = p.raw_frames();
        let n_bins = n_fft / 2 + 1;
        let mut power = Array2::<f64>::zeros((n_bins, frames));
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for t in 0..frames {
            let frame = &waveform[t * shift..t * shift + len];
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = if i < len {
                    Complex::new(frame[i] as f64 * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for k in 0..n_bins {
                power[[k, t]] = buf[k].norm_sqr();
            }
        }
        let mel = self.filters.dot(&power);
        Spectrogram::new(mel.mapv(|v| v.max(LOG_FLOOR).ln()))
    }

    /// Log-mel, optional standardisation, then zero-padding to
    /// `padded_frames`.
    pub fn features(&self, waveform: &[f32]) -> Result<Spectrogram> {
        let mut spec = self.compute(waveform)?;
        if self.params.standardize {
            standardize(&mut spec);
        }
        pad_frames(&spec, self.params.padded_frames)
    }
}

pub fn logmel(waveform: &[f32], params: &FrontendParams) -> Result<Spectrogram> {
    LogMel::new(params)?.compute(waveform)
}

/// Zero mean, unit variance; a constant spectrogram is only centred.
pub fn standardize(spec: &mut Spectrogram) {
    let mean = spec.mean();
    let var = spec.values.mapv(|v| (v - mean).powi(2)).mean().unwrap_or(0.0);
    let std = var.sqrt();
    if std > 1e-12 {
        spec.values.mapv_inplace(|v| (v - mean) / std);
    } else {
        spec.values.mapv_inplace(|v| v - mean);
    }
}

pub fn pad_frames(spec: &Spectrogram, frames: usize) -> Result<Spectrogram> {
    if spec.frames() > frames {
        return Err(Error::shape(format!(
            "cannot pad {} frames down to {frames}",
            spec.frames()
        )));
    }
    let mut values = Array2::zeros((spec.n_mels(), frames));
    values
        .slice_mut(s![.., ..spec.frames()])
        .assign(&spec.values);
    Ok(Spectrogram { values })
}

/// Non-overlapping square patches, row-major over (freq-patch, time-patch);
/// each patch is flattened row-major over (mel, frame).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub patches: Array2<f64>,
    pub freq_patches: usize,
    pub time_patches: usize,
    pub patch_size: usize,
}

impl PatchGrid {
    pub fn num_patches(&self) -> usize {
        self.patches.nrows()
    }
}

pub fn patchify(spec: &Spectrogram, params: &FrontendParams) -> Result<PatchGrid> {
    let ps = params.patch_size;
    if spec.n_mels() != params.n_mels || spec.frames() != params.padded_frames {
        return Err(Error::shape(format!(
            "spectrogram is {}x{}, expected {}x{}",
            spec.n_mels(),
            spec.frames(),
            params.n_mels,
            params.padded_frames
        )));
    }
    if ps == 0 || !spec.n_mels().is_multiple_of(ps) || !spec.frames().is_multiple_of(ps) {
        return Err(Error::shape("spectrogram not divisible into patches"));
    }
    let fp = spec.n_mels() / ps;
    let tp = spec.frames() / ps;
    let mut patches = Array2::zeros((fp * tp, ps * ps));
    for fi in 0..fp {
        for ti in 0..tp {
            let block = spec
                .values
                .slice(s![fi * ps..(fi + 1) * ps, ti * ps..(ti + 1) * ps]);
            let mut row = patches.row_mut(fi * tp + ti);
            for (dst, src) in row.iter_mut().zip(block.iter()) {
                *dst = *src;
            }
        }
    }
    Ok(PatchGrid {
        patches,
        freq_patches: fp,
        time_patches: tp,
        patch_size: ps,
    })
}

pub fn unpatchify(grid: &PatchGrid) -> Spectrogram {
    let ps = grid.patch_size;
    let mut values = Array2::zeros((grid.freq_patches * ps, grid.time_patches * ps));
    for fi in 0..grid.freq_patches {
        for ti in 0..grid.time_patches {
            let row = grid.patches.row(fi * grid.time_patches + ti);
            let mut block =
                values.slice_mut(s![fi * ps..(fi + 1) * ps, ti * ps..(ti + 1) * ps]);
            for (dst, src) in block.iter_mut().zip(row.iter()) {
                *dst = *src;
            }
        }
    }
    Spectrogram { values }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskAxis {
    Freq,
    Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mask {
    pub axis: MaskAxis,
    pub start: usize,
    pub width: usize,
}

/// SpecAugment with mean fill. Mask widths are drawn uniformly from
/// `0..=max_width` and starts uniformly over the valid range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpecAugment {
    pub n_freq_masks: usize,
    pub max_freq_width: usize,
    pub n_time_masks: usize,
    pub max_time_width: usize,
}

impl Default for SpecAugment {
    fn default() -> Self {
        Self {
            n_freq_masks: 2,
            max_freq_width: 8,
            n_time_masks: 2,
            max_time_width: 16,
        }
    }
}

impl SpecAugment {
    pub fn sample_masks<R: Rng + ?Sized>(
        &self,
        n_mels: usize,
        frames: usize,
        rng: &mut R,
    ) -> Vec<Mask> {
        let mut out = Vec::new();
        let mut draw = |axis, count: usize, max_width: usize, extent: usize, rng: &mut R| {
            for _ in 0..count {
                let width = rng.random_range(0..=max_width.min(extent));
                let start = rng.random_range(0..=extent - width);
                out.push(Mask { axis, start, width });
            }
        };
        draw(MaskAxis::Freq, self.n_freq_masks, self.max_freq_width, n_mels, rng);
        draw(MaskAxis::Time, self.n_time_masks, self.max_time_width, frames, rng);
        out
    }

    pub fn apply<R: Rng + ?Sized>(&self, spec: &Spectrogram, rng: &mut R) -> Spectrogram {
        let masks = self.sample_masks(spec.n_mels(), spec.frames(), rng);
        apply_masks(spec, &masks)
    }
}

/// Fills every masked row/column with the mean of the input spectrogram.
pub fn apply_masks(spec: &Spectrogram, masks: &[Mask]) -> Spectrogram {
    let fill = spec.mean();
    let mut values = spec.values.clone();
    for m in masks {
        let end = m.start + m.width;
        match m.axis {
            MaskAxis::Freq => values.slice_mut(s![m.start..end, ..]).fill(fill),
            MaskAxis::Time => values.slice_mut(s![.., m.start..end]).fill(fill),
        }
    }
    Spectrogram { values }
}

/// Sparse class distribution; entries are (class, mass) with mass > 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabel {
    pub entries: Vec<(usize, f64)>,
}

impl SoftLabel {
    pub fn one_hot(class: usize) -> Self {
        Self {
            entries: vec![(class, 1.0)],
        }
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    /// Class with the largest mass; ties resolve to the lower index.
    pub fn dominant(&self) -> usize {
        self.entries
            .iter()
            .fold(None::<(usize, f64)>, |best, &(c, w)| match best {
                Some((bc, bw)) if bw > w || (bw == w && bc < c) => Some((bc, bw)),
                _ => Some((c, w)),
            })
            .map(|e| e.0)
            .unwrap_or(0)
    }
}

/// `lambda * a + (1 - lambda) * b` with the matching two-class label.
pub fn mixup(
    a: &Spectrogram,
    b: &Spectrogram,
    label_a: usize,
    label_b: usize,
    lambda: f64,
) -> Result<(Spectrogram, SoftLabel)> {
    if a.values.dim() != b.values.dim() {
        return Err(Error::shape(format!(
            "mixup of {:?} with {:?}",
            a.values.dim(),
            b.values.dim()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("mixup lambda {lambda} outside [0, 1]")));
    }
    let values = &a.values * lambda + &b.values * (1.0 - lambda);
    let mut entries: Vec<(usize, f64)> = Vec::with_capacity(2);
    for (class, mass) in [(label_a, lambda), (label_b, 1.0 - lambda)] {
        if mass <= 0.0 {
            continue;
        }
        match entries.iter_mut().find(|e| e.0 == class) {
            Some(e) => e.1 += mass,
            None => entries.push((class, mass)),
        }
    }
    Ok((Spectrogram { values }, SoftLabel { entries }))
}

/// Row means of a spectrogram, handy for diagnostics.
pub fn band_energy(spec: &Spectrogram) -> Vec<f64> {
    spec.values
        .mean_axis(Axis(1))
        .map(|a| a.to_vec())
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn write_tone(path: &Path, seconds: f64) {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        let n = (seconds * 16_000.0) as usize;
        for i in 0..n {
            w.write_sample(((i % 100) as i16 + 1) * 100).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn load_truncates_pads_and_preserves() {
        let dir = tempfile::tempdir().unwrap();
        let p = FrontendParams::default();
        for (secs, real) in [(12.0, 160_000), (8.0, 128_000), (10.0, 160_000)] {
            let path = dir.path().join(format!("{secs}.wav"));
            write_tone(&path, secs);
            let w = load_waveform(&path, &p).unwrap();
            assert_eq!(w.len(), 160_000);
            assert!(w[..real].iter().all(|&v| v != 0.0));
            assert!(w[real..].iter().all(|&v| v == 0.0));
            assert_eq!(w[0], 100.0 / 32768.0);
        }
    }

    #[test]
    fn load_rejects_wrong_rate_and_channels() {
        let dir = tempfile::tempdir().unwrap();
        for (rate, channels) in [(8000, 1), (16_000, 2)] {
            let path = dir.path().join(format!("{rate}_{channels}.wav"));
            let spec = hound::WavSpec {
                channels,
                sample_rate: rate,
                bits_per_sample: 16,
                sample_format: hound::SampleFormat::Int,
            };
            let mut w = hound::WavWriter::create(&path, spec).unwrap();
            w.write_sample(0i16).unwrap();
            w.write_sample(0i16).unwrap();
            w.finalize().unwrap();
            assert!(load_waveform(&path, &FrontendParams::default()).is_err());
        }
    }

    #[test]
    fn raw_frame_count_for_ten_seconds() {
        let p = FrontendParams::default();
        assert_eq!(p.frame_length(), 400);
        assert_eq!(p.frame_shift(), 160);
        assert_eq!(p.raw_frames(), (160_000 - 400) / 160 + 1);
        assert_eq!(p.raw_frames(), 998);
        assert_eq!(p.num_patches(), 512);
    }

    #[test]
    fn silence_hits_the_floor() {
        let p = FrontendParams::default();
        let spec = logmel(&vec![0.0; 160_000], &p).unwrap();
        assert_eq!(spec.values.dim(), (128, 998));
        assert!(spec.values.iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn tone_peaks_at_nearest_filter() {
        let p = FrontendParams::default();
        let wave: Vec<f32> = (0..160_000)
            .map(|i| (0.5 * (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 16_000.0).sin()) as f32)
            .collect();
        let spec = logmel(&wave, &p).unwrap();
        let energy = band_energy(&spec);
        let argmax = energy
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        let centers = mel_centers(&p);
        let nearest = centers
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 1000.0).abs().total_cmp(&(b.1 - 1000.0).abs()))
            .unwrap()
            .0;
        assert_eq!(argmax, nearest);
    }

    #[test]
    fn filterbank_is_nonnegative_and_covers_band() {
        let p = FrontendParams::default();
        let fb = mel_filterbank(&p);
        assert!(fb.iter().all(|&w| w >= 0.0));
        let n_fft = p.n_fft() as f64;
        for k in 0..fb.ncols() {
            let f = k as f64 * p.sample_rate as f64 / n_fft;
            if f > p.f_min && f < p.f_max {
                assert!(fb.column(k).sum() > 0.0, "bin {k} ({f} Hz) uncovered");
            }
        }
    }

    fn padded(p: &FrontendParams, seed: u64) -> Spectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Spectrogram {
            values: Array2::from_shape_fn((p.n_mels, p.padded_frames), |_| rng.random_range(-1.0..1.0)),
        }
    }

    #[test]
    fn patchify_counts_and_round_trips() {
        let p = FrontendParams::default();
        let s = padded(&p, 1);
        let g = patchify(&s, &p).unwrap();
        assert_eq!(g.num_patches(), 512);
        assert_eq!(g.patches.ncols(), 256);
        assert_eq!(unpatchify(&g), s);
    }

    #[test]
    fn patchify_rejects_unpadded() {
        let p = FrontendParams::default();
        let s = Spectrogram {
            values: Array2::zeros((128, 1008)),
        };
        assert!(patchify(&s, &p).is_err());
    }

    #[test]
    fn spec_augment_identity_and_mean_fill() {
        let p = FrontendParams {
            n_mels: 32,
            padded_frames: 64,
            ..FrontendParams::default()
        };
        let s = padded(&p, 2);
        let none = SpecAugment {
            n_freq_masks: 0,
            max_freq_width: 8,
            n_time_masks: 0,
            max_time_width: 8,
        };
        assert_eq!(none.apply(&s, &mut ChaCha8Rng::seed_from_u64(0)), s);

        let out = apply_masks(
            &s,
            &[Mask {
                axis: MaskAxis::Freq,
                start: 5,
                width: 8,
            }],
        );
        let mean = s.mean();
        let filled: Vec<usize> = (0..32)
            .filter(|&r| out.values.row(r).iter().all(|&v| v == mean))
            .collect();
        assert_eq!(filled, (5..13).collect::<Vec<_>>());
        for r in (0..5).chain(13..32) {
            assert_eq!(out.values.row(r), s.values.row(r));
        }
    }

    #[test]
    fn spec_augment_is_deterministic_and_preserves_unmasked() {
        let p = FrontendParams {
            n_mels: 32,
            padded_frames: 64,
            ..FrontendParams::default()
        };
        let s = padded(&p, 3);
        let aug = SpecAugment::default();
        let a = aug.apply(&s, &mut ChaCha8Rng::seed_from_u64(9));
        let b = aug.apply(&s, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        let masks = aug.sample_masks(32, 64, &mut ChaCha8Rng::seed_from_u64(9));
        for ((r, c), v) in a.values.indexed_iter() {
            let covered = masks.iter().any(|m| {
                let idx = if m.axis == MaskAxis::Freq { r } else { c };
                idx >= m.start && idx < m.start + m.width
            });
            if !covered {
                assert_eq!(v.to_bits(), s.values[[r, c]].to_bits());
            }
        }
    }

    #[test]
    fn mixup_examples() {
        let ones = Spectrogram {
            values: Array2::from_elem((4, 4), 1.0),
        };
        let twos = Spectrogram {
            values: Array2::from_elem((4, 4), 2.0),
        };
        let (m, label) = mixup(&ones, &twos, 0, 1, 1.0).unwrap();
        assert_eq!(m, ones);
        assert_eq!(label, SoftLabel::one_hot(0));

        let (m, label) = mixup(&ones, &twos, 0, 1, 0.3).unwrap();
        assert!(m.values.iter().all(|&v| (v - 1.7).abs() < 1e-12));
        assert_eq!(label.entries, vec![(0, 0.3), (1, 0.7)]);

        let (m, label) = mixup(&ones, &ones, 3, 3, 0.5).unwrap();
        assert_eq!(m, ones);
        assert_eq!(label.entries, vec![(3, 1.0)]);

        let bad = Spectrogram {
            values: Array2::zeros((4, 5)),
        };
        assert!(mixup(&ones, &bad, 0, 1, 0.5).is_err());
    }

    #[test]
    fn mixup_is_affine() {
        let p = FrontendParams {
            n_mels: 16,
            padded_frames: 16,
            ..FrontendParams::default()
        };
        let a = padded(&p, 4);
        let b = padded(&p, 5);
        for lambda in [0.0, 0.2, 0.5, 0.77, 1.0] {
            let (ab, _) = mixup(&a, &b, 0, 1, lambda).unwrap();
            let (ba, _) = mixup(&b, &a, 1, 0, lambda).unwrap();
            let sum = &ab.values + &ba.values;
            let want = &a.values + &b.values;
            for (x, y) in sum.iter().zip(want.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}

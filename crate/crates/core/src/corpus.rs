//! Dataset model, clip naming convention, manifest scanning and the
//! synthetic machine-sound generator.
//!
//! Clips live under `<root>/<machine>/<split>/` and are named
//! `<domain>_<condition>_<index:4>[_<attribute>].wav`, for example
//! `ToyCar/train/source_normal_0001_spd28V.wav`.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{ClipNameError, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "normal")]
    Normal,
    #[serde(rename = "anomaly")]
    Anomalous,
}

macro_rules! token_enum {
    ($ty:ty, $($variant:path => $token:literal),+) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self {
                    $($variant => $token),+
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($token => Ok($variant),)+
                    other => Err(format!("unknown {} token {other:?}", stringify!($ty))),
                }
            }
        }
    };
}

token_enum!(Split, Split::Train => "train", Split::Test => "test");
token_enum!(Domain, Domain::Source => "source", Domain::Target => "target");
token_enum!(Condition, Condition::Normal => "normal", Condition::Anomalous => "anomaly");

/// The fields encoded in a clip filename.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClipName {
    pub domain: Domain,
    pub condition: Condition,
    pub index: u32,
    pub attribute: Option<String>,
}

impl fmt::Display for ClipName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}_{:04}", self.domain, self.condition, self.index)?;
        if let Some(attr) = &self.attribute {
            write!(f, "_{attr}")?;
        }
        f.write_str(".wav")
    }
}

fn is_attribute_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.')
}

/// Parses `<domain>_<condition>_<index:4>[_<attr>].wav`.
///
/// Everything after the index separator is the attribute token, so
/// attributes may themselves contain underscores.
pub fn parse_clip_name(name: &str) -> std::result::Result<ClipName, ClipNameError> {
    let fail = |position: usize, reason: &str| ClipNameError {
        name: name.to_string(),
        position,
        reason: reason.to_string(),
    };

    let stem = name
        .strip_suffix(".wav")
        .ok_or_else(|| fail(name.len(), "expected .wav extension"))?;

    let mut offset = 0;
    let mut next_field = |what: &str| -> std::result::Result<(usize, &str), ClipNameError> {
        let rest = &stem[offset.min(stem.len())..];
        if offset > stem.len() || rest.is_empty() {
            return Err(fail(offset.min(stem.len()), &format!("missing {what}")));
        }
        let start = offset;
        let token = match rest.find('_') {
            Some(i) => &rest[..i],
            None => rest,
        };
        offset += token.len() + 1;
        Ok((start, token))
    };

    let (pos, token) = next_field("domain")?;
    let domain = token.parse::<Domain>().map_err(|e| fail(pos, &e))?;
    let (pos, token) = next_field("condition")?;
    let condition = token.parse::<Condition>().map_err(|e| fail(pos, &e))?;
    let (pos, token) = next_field("index")?;
    if token.len() < 4 || !token.bytes().all(|b| b.is_ascii_digit()) {
        return Err(fail(pos, "index must be at least four decimal digits"));
    }
    let index: u32 = token
        .parse()
        .map_err(|_| fail(pos, "index out of range"))?;
    if format!("{index:04}") != token {
        return Err(fail(pos, "index has superfluous leading zeros"));
    }

    let attribute = if offset > stem.len() {
        None
    } else {
        let attr = &stem[offset..];
        if attr.is_empty() {
            return Err(fail(offset, "empty attribute"));
        }
        if let Some((i, _)) = attr.char_indices().find(|&(_, c)| !is_attribute_char(c)) {
            return Err(fail(offset + i, "invalid character in attribute"));
        }
        Some(attr.to_string())
    };

    Ok(ClipName {
        domain,
        condition,
        index,
        attribute,
    })
}

/// One audio clip of the dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipMeta {
    pub machine_type: String,
    pub split: Split,
    pub domain: Domain,
    pub condition: Condition,
    pub index: u32,
    pub attribute: Option<String>,
    pub path: PathBuf,
}

impl ClipMeta {
    pub fn file_name(&self) -> String {
        ClipName {
            domain: self.domain,
            condition: self.condition,
            index: self.index,
            attribute: self.attribute.clone(),
        }
        .to_string()
    }

    /// Root-relative key `<machine>/<split>/<filename>`, used as the clip id
    /// in every exported table.
    pub fn key(&self) -> String {
        format!("{}/{}/{}", self.machine_type, self.split, self.file_name())
    }

    fn sort_key(&self) -> (&str, Split, Domain, Condition, u32) {
        (
            &self.machine_type,
            self.split,
            self.domain,
            self.condition,
            self.index,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub clips: Vec<ClipMeta>,
    pub machines: Vec<String>,
    pub attributed_machines: Vec<String>,
    pub unattributed_machines: Vec<String>,
}

impl DatasetManifest {
    /// Validates the clip list and derives the machine partition.
    pub fn from_clips(root: impl Into<PathBuf>, mut clips: Vec<ClipMeta>) -> Result<Self> {
        let root = root.into();
        if clips.is_empty() {
            return Err(Error::EmptyDataset(root));
        }
        clips.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        for pair in clips.windows(2) {
            if pair[0].sort_key() == pair[1].sort_key() {
                return Err(Error::invalid(format!(
                    "duplicate clip identity {}",
                    pair[1].key()
                )));
            }
        }

        let mut has_attr: BTreeMap<&str, BTreeSet<bool>> = BTreeMap::new();
        for clip in &clips {
            if clip.split == Split::Train && clip.condition == Condition::Anomalous {
                return Err(Error::invalid(format!(
                    "training clip {} is labelled anomalous",
                    clip.key()
                )));
            }
            has_attr
                .entry(&clip.machine_type)
                .or_default()
                .insert(clip.attribute.is_some());
        }

        let mut machines = Vec::new();
        let mut attributed = Vec::new();
        let mut unattributed = Vec::new();
        for (machine, flags) in has_attr {
            if flags.len() > 1 {
                return Err(Error::InconsistentAttributes(machine.to_string()));
            }
            machines.push(machine.to_string());
            if flags.contains(&true) {
                attributed.push(machine.to_string());
            } else {
                unattributed.push(machine.to_string());
            }
        }

        Ok(Self {
            root,
            clips,
            machines,
            attributed_machines: attributed,
            unattributed_machines: unattributed,
        })
    }

    pub fn clips_of<'a>(
        &'a self,
        machine: &'a str,
        split: Split,
    ) -> impl Iterator<Item = &'a ClipMeta> + 'a {
        self.clips
            .iter()
            .filter(move |c| c.machine_type == machine && c.split == split)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ClipMeta> + '_ {
        self.clips.iter().filter(move |c| c.split == split)
    }

    pub fn is_attributed(&self, machine: &str) -> bool {
        self.attributed_machines.iter().any(|m| m == machine)
    }

    /// Writes `path,machine,split,domain,condition,index,attribute`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        w.write_record([
            "path",
            "machine",
            "split",
            "domain",
            "condition",
            "index",
            "attribute",
        ])
        .map_err(|e| Error::csv(path, e))?;
        for c in &self.clips {
            w.write_record([
                c.key().as_str(),
                c.machine_type.as_str(),
                c.split.as_str(),
                c.domain.as_str(),
                c.condition.as_str(),
                c.index.to_string().as_str(),
                c.attribute.as_deref().unwrap_or(""),
            ])
            .map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

/// Scans `<root>/<machine>/<split>/*.wav`.
///
/// Directories other than `train`/`test` and files without a `.wav`
/// extension are ignored; a `.wav` file with a malformed name is an error.
pub fn scan_dataset(root: &Path) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root not found"),
        ));
    }
    let mut clips = Vec::new();
    for machine_dir in sorted_entries(root)? {
        if !machine_dir.is_dir() {
            continue;
        }
        let machine = machine_dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::invalid(format!("non-UTF-8 path {}", machine_dir.display())))?
            .to_string();
        for split in [Split::Train, Split::Test] {
            let split_dir = machine_dir.join(split.as_str());
            if !split_dir.is_dir() {
                continue;
            }
            for file in sorted_entries(&split_dir)? {
                if file.extension().and_then(|e| e.to_str()) != Some("wav") {
                    continue;
                }
                let name = file.file_name().and_then(|n| n.to_str()).unwrap_or("");
                let parsed = parse_clip_name(name).map_err(|source| Error::ClipName {
                    path: file.clone(),
                    source,
                })?;
                clips.push(ClipMeta {
                    machine_type: machine.clone(),
                    split,
                    domain: parsed.domain,
                    condition: parsed.condition,
                    index: parsed.index,
                    attribute: parsed.attribute,
                    path: file,
                });
            }
        }
    }
    DatasetManifest::from_clips(root, clips)
}

/// Parameters of the synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_machines: usize,
    /// How many of the machines are written without attribute tokens.
    pub n_unattributed: usize,
    pub attrs_per_machine: usize,
    pub clips_per_attr_train: usize,
    pub clips_per_attr_test: usize,
    pub sample_rate: u32,
    pub clip_seconds: f64,
    pub seed: u64,
    pub target_fraction: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_machines: 4,
            n_unattributed: 2,
            attrs_per_machine: 3,
            clips_per_attr_train: 30,
            clips_per_attr_test: 10,
            sample_rate: 16_000,
            clip_seconds: 2.0,
            seed: 0,
            target_fraction: 0.1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_machines", self.n_machines),
            ("attrs_per_machine", self.attrs_per_machine),
            ("clips_per_attr_train", self.clips_per_attr_train),
            ("clips_per_attr_test", self.clips_per_attr_test),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::invalid(format!("synth.{name} must be >= 1")));
            }
        }
        if self.n_unattributed > self.n_machines {
            return Err(Error::invalid("synth.n_unattributed exceeds n_machines"));
        }
        if !(0.0..=1.0).contains(&self.target_fraction) {
            return Err(Error::invalid("synth.target_fraction must lie in [0, 1]"));
        }
        if !(self.attrs_per_machine * self.clips_per_attr_test).is_multiple_of(2) {
            return Err(Error::invalid(
                "attrs_per_machine * clips_per_attr_test must be even to balance normal/anomalous test clips",
            ));
        }
        if self.sample_rate == 0 || !(self.clip_seconds > 0.0) {
            return Err(Error::invalid("synth sample_rate and clip_seconds must be positive"));
        }
        Ok(())
    }

    fn samples(&self) -> usize {
        (self.clip_seconds * self.sample_rate as f64).round() as usize
    }
}

const MACHINE_NAMES: [&str; 8] = [
    "ToyFan", "ToyPump", "ToyValve", "ToySlider", "ToyGear", "ToyBelt", "ToyDrill", "ToyPress",
];

fn machine_name(i: usize) -> String {
    MACHINE_NAMES
        .get(i)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("Machine{i:02}"))
}

/// Fixed acoustic character of one synthetic machine type.
#[derive(Debug, Clone)]
struct MachineVoice {
    base_f0: f64,
    attr_step: f64,
    harmonic_amps: Vec<f64>,
    noise_cutoff: f64,
    noise_level: f64,
    am_rate: f64,
}

impl MachineVoice {
    fn draw(rng: &mut ChaCha8Rng, machine: usize) -> Self {
        let harmonics = 8;
        Self {
            base_f0: 140.0 + 90.0 * machine as f64 + rng.random_range(0.0..30.0),
            attr_step: rng.random_range(70.0..90.0),
            harmonic_amps: (1..=harmonics)
                .map(|h| rng.random_range(0.4..1.0) / (h as f64).sqrt())
                .collect(),
            noise_cutoff: rng.random_range(1500.0..5000.0),
            noise_level: rng.random_range(0.02..0.05),
            am_rate: rng.random_range(2.0..6.0),
        }
    }

    fn f0(&self, attr: usize) -> f64 {
        self.base_f0 + self.attr_step * attr as f64
    }
}

fn attribute_token(f0: f64) -> String {
    format!("f{}Hz", f0.round() as i64)
}

struct ClipPlan {
    meta: ClipMeta,
    machine: usize,
    attr: usize,
    latent: String,
}

fn clip_seed(seed: u64, ordinal: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ ordinal.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn render_clip(
    spec: &SynthSpec,
    voice: &MachineVoice,
    plan: &ClipPlan,
    rng: &mut ChaCha8Rng,
    planner: &mut FftPlanner<f64>,
) -> Vec<f64> {
    let n = spec.samples();
    let sr = spec.sample_rate as f64;
    let nyquist = sr / 2.0;
    let f0 = voice.f0(plan.attr) * (1.0 + rng.random_range(-0.01..0.01));

    let mut x = vec![0.0f64; n];
    for (h, &amp) in voice.harmonic_amps.iter().enumerate() {
        let freq = f0 * (h + 1) as f64;
        if freq >= nyquist * 0.95 {
            break;
        }
        let amp = amp * rng.random_range(0.8..1.2);
        let phase = rng.random_range(0.0..2.0 * PI);
        let w = 2.0 * PI * freq / sr;
        for (t, s) in x.iter_mut().enumerate() {
            *s += amp * (w * t as f64 + phase).sin();
        }
    }

    let am_phase = rng.random_range(0.0..2.0 * PI);
    let am_w = 2.0 * PI * voice.am_rate / sr;
    for (t, s) in x.iter_mut().enumerate() {
        *s *= 0.1 * (1.0 + 0.2 * (am_w * t as f64 + am_phase).sin());
    }

    // one-pole low-passed white noise bed
    let alpha = 1.0 - (-2.0 * PI * voice.noise_cutoff / sr).exp();
    let level = voice.noise_level * rng.random_range(0.7..1.4);
    let mut state = 0.0;
    for s in x.iter_mut() {
        let white: f64 = rng.random_range(-1.0..1.0);
        state += alpha * (white - state);
        *s += level * state * 3.0;
    }

    if plan.meta.condition == Condition::Anomalous {
        let drive = rng.random_range(4.0..7.0);
        let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
        for s in x.iter_mut() {
            *s = peak * (drive * *s / peak).tanh() / drive.tanh();
        }
        let bursts = rng.random_range(3..7);
        let burst_len = (0.03 * sr) as usize;
        for _ in 0..bursts {
            let start = rng.random_range(0..n.saturating_sub(burst_len).max(1));
            let amp = rng.random_range(0.1..0.25);
            for i in 0..burst_len.min(n - start) {
                let env = (-(i as f64) / (0.008 * sr)).exp();
                x[start + i] += amp * env * rng.random_range(-1.0..1.0);
            }
        }
    }

    if plan.meta.domain == Domain::Target {
        apply_tilt(&mut x, sr, planner);
    }
    x
}

/// +3 dB per octave around 1 kHz.
fn apply_tilt(x: &mut [f64], sr: f64, planner: &mut FftPlanner<f64>) {
    let n = x.len();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let exponent = 3.0 / (20.0 * 2f64.log10());
    for (k, c) in buf.iter_mut().enumerate() {
        let bin = k.min(n - k);
        let freq = (bin as f64 * sr / n as f64).max(20.0);
        *c *= (freq / 1000.0).powf(exponent);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    for (v, c) in x.iter_mut().zip(&buf) {
        *v = c.re / n as f64;
    }
}

fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in samples {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(q).map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)
}

/// Summary of a generated corpus.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub manifest: DatasetManifest,
    /// clip key → latent attribute token, for every clip of every machine.
    pub latent: BTreeMap<String, String>,
}

/// Writes the synthetic WAV tree under `out_dir` and the hidden attribute
/// table (`path,latent_attribute`, unattributed machines only) to
/// `truth_csv`, which should live outside `out_dir`.
pub fn synth_corpus(spec: &SynthSpec, out_dir: &Path, truth_csv: &Path) -> Result<SynthOutput> {
    spec.validate()?;
    let mut voice_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let voices: Vec<MachineVoice> = (0..spec.n_machines)
        .map(|m| MachineVoice::draw(&mut voice_rng, m))
        .collect();
    let first_unattributed = spec.n_machines - spec.n_unattributed;

    let mut plans = Vec::new();
    for (m, voice) in voices.iter().enumerate() {
        let machine = machine_name(m);
        let attributed = m < first_unattributed;
        let mut counters: BTreeMap<(Split, Domain, Condition), u32> = BTreeMap::new();
        let mut push = |split, domain, condition, attr: usize| {
            let counter = counters.entry((split, domain, condition)).or_insert(0);
            let index = *counter;
            *counter += 1;
            let latent = attribute_token(voice.f0(attr));
            let meta = ClipMeta {
                machine_type: machine.clone(),
                split,
                domain,
                condition,
                index,
                attribute: attributed.then(|| latent.clone()),
                path: PathBuf::new(),
            };
            plans.push(ClipPlan {
                meta,
                machine: m,
                attr,
                latent,
            });
        };

        let n_target = (spec.clips_per_attr_train as f64 * spec.target_fraction).round() as usize;
        for attr in 0..spec.attrs_per_machine {
            for i in 0..spec.clips_per_attr_train {
                let domain = if i >= spec.clips_per_attr_train - n_target {
                    Domain::Target
                } else {
                    Domain::Source
                };
                push(Split::Train, domain, Condition::Normal, attr);
            }
        }
        // consecutive pairs share a domain and differ in condition, so every
        // domain holds equally many normal and anomalous clips
        let total_test = spec.attrs_per_machine * spec.clips_per_attr_test;
        for j in 0..total_test {
            let condition = if j % 2 == 0 {
                Condition::Normal
            } else {
                Condition::Anomalous
            };
            let domain = if (j / 2) % 2 == 0 {
                Domain::Source
            } else {
                Domain::Target
            };
            push(Split::Test, domain, condition, j / spec.clips_per_attr_test);
        }
    }

    let mut planner = FftPlanner::new();
    let mut latent = BTreeMap::new();
    let mut clips = Vec::with_capacity(plans.len());
    for (ordinal, mut plan) in plans.into_iter().enumerate() {
        let dir = out_dir
            .join(&plan.meta.machine_type)
            .join(plan.meta.split.as_str());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        plan.meta.path = dir.join(plan.meta.file_name());
        let mut rng = ChaCha8Rng::seed_from_u64(clip_seed(spec.seed, ordinal as u64));
        let audio = render_clip(spec, &voices[plan.machine], &plan, &mut rng, &mut planner);
        write_wav(&plan.meta.path, &audio, spec.sample_rate)?;
        latent.insert(plan.meta.key(), plan.latent.clone());
        clips.push(plan.meta);
    }

    let manifest = DatasetManifest::from_clips(out_dir, clips)?;

    if let Some(parent) = truth_csv.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(truth_csv).map_err(|e| Error::csv(truth_csv, e))?;
    w.write_record(["path", "latent_attribute"])
        .map_err(|e| Error::csv(truth_csv, e))?;
    for clip in &manifest.clips {
        if clip.attribute.is_none() {
            let key = clip.key();
            w.write_record([key.as_str(), latent[&key].as_str()])
                .map_err(|e| Error::csv(truth_csv, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(truth_csv, e))?;

    Ok(SynthOutput { manifest, latent })
}

/// Reads a `path,latent_attribute` table.
pub fn read_truth_table(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        if rec.len() != 2 {
            return Err(Error::Format(format!(
                "{}: expected 2 columns, found {}",
                path.display(),
                rec.len()
            )));
        }
        out.insert(rec[0].to_string(), rec[1].to_string());
    }
    Ok(out)
}

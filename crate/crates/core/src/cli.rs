//! Command-line stages and the artifact layout they share.
//!
//! Layout under the output directory:
//! `manifest.csv`, `pretrain/{teacher,student}.ckpt`, `pretrain/loss.csv`,
//! `embed/{teacher,untrained,adapted}.bin` (+ `.ids.csv`),
//! `cluster/pseudo_labels.csv`, `cluster/dendrogram_<machine>.csv`,
//! `cluster/summary.csv`, `finetune/adapted.ckpt`, `finetune/curve.csv`,
//! `score/scores.csv`, `eval/report.csv`, `eval/projection.csv`.
//! Every artifact has a `<name>.stamp` sidecar with the config hash and seed.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use clap::{Parser, Subcommand, ValueEnum};
use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::backend::{self, build_memory_bank};
use crate::config::PipelineConfig;
use crate::corpus::{self, DatasetManifest, Split, SynthOutput};
use crate::encoder::{self, Checkpoint, EncoderParams};
use crate::error::{Error, Result};
use crate::finetune::{self, build_label_space, FinetuneOutput, LabelMode, TrainClip};
use crate::frontend::{self, LogMel, Spectrogram};
use crate::metrics::{self, ScoreReport};
use crate::pretrain::{self, PretrainOutput};
use crate::pseudolabel::{self, PseudoLabeling};

#[derive(Debug, Parser)]
#[command(name = "asd", version, about = "Anomalous sound detection pipeline")]
pub struct Cli {
    /// TOML pipeline config; built-in defaults when omitted.
    #[arg(short, long, global = true)]
    pub config: Option<PathBuf>,
    /// Dotted override, e.g. `--set pretrain.mask_ratio=0.75`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EmbedSource {
    /// Pre-trained teacher encoder (used for clustering).
    Teacher,
    /// Freshly initialised encoder.
    Untrained,
    /// Fine-tuned encoder (used for scoring).
    Adapted,
}

impl EmbedSource {
    fn name(self) -> &'static str {
        match self {
            EmbedSource::Teacher => "teacher",
            EmbedSource::Untrained => "untrained",
            EmbedSource::Adapted => "adapted",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus and its hidden attribute table.
    Synth,
    /// Domain-adaptive pre-training; writes the teacher checkpoint.
    Pretrain,
    /// Pooled clip embeddings for every clip of the target dataset.
    Embed {
        #[arg(long, value_enum, default_value = "teacher")]
        source: EmbedSource,
    },
    /// Ward clustering of unattributed machines into pseudo attributes.
    Cluster,
    /// Attribute-classification fine-tuning.
    Finetune {
        /// Collapse unattributed machines into a single noAttr class.
        #[arg(long)]
        no_pseudo: bool,
        /// Start from an untrained encoder instead of the teacher checkpoint.
        #[arg(long)]
        from_scratch: bool,
    },
    /// KNN anomaly scores for the test clips.
    Score,
    /// AUC / pAUC report and embedding projection.
    Eval {
        /// Accept scores stamped with a different config hash.
        #[arg(long)]
        force: bool,
    },
    /// Every stage in order.
    Pipeline,
}

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::MissingArtifact { .. } | Error::StampMismatch { .. } => 3,
        Error::NonFinite(_) => 4,
        _ => 1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FinetuneArm {
    pub no_pseudo: bool,
    pub from_scratch: bool,
}

/// Spectrograms for every clip of one manifest, in manifest order.
pub struct Features {
    pub manifest: DatasetManifest,
    pub spectrograms: Vec<Spectrogram>,
}

pub fn extract_features(manifest: DatasetManifest, params: &frontend::FrontendParams) -> Result<Features> {
    let lm = LogMel::new(params)?;
    let spectrograms = manifest
        .clips
        .par_iter()
        .map(|c| lm.features(&frontend::load_waveform(&c.path, params)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(Features { manifest, spectrograms })
}

/// Resolved config, output directory and a per-run feature cache.
pub struct Workspace {
    pub config: PipelineConfig,
    pub hash: String,
    features: Mutex<BTreeMap<PathBuf, Arc<Features>>>,
}

impl Workspace {
    pub fn new(mut config: PipelineConfig) -> Result<Self> {
        config.resolve()?;
        let hash = config.hash();
        Ok(Self {
            config,
            hash,
            features: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.config.output_dir.join(rel)
    }

    fn ensure_parent(path: &Path) -> Result<()> {
        if let Some(p) = path.parent() {
            fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
        }
        Ok(())
    }

    fn out(&self, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        Self::ensure_parent(&p)?;
        Ok(p)
    }

    fn stamp(&self, artifact: &Path, stage: &str, extra: &[(&str, String)]) -> Result<()> {
        let mut text = format!("config_hash={}\nseed={}\nstage={stage}\n", self.hash, self.config.seed);
        for (k, v) in extra {
            text.push_str(&format!("{k}={v}\n"));
        }
        let path = stamp_path(artifact);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    fn require(&self, rel: &str, what: &str, stage: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingArtifact {
                what: what.into(),
                stage: stage.into(),
                path: p,
            })
        }
    }

    pub fn features(&self, root: &Path) -> Result<Arc<Features>> {
        if let Some(f) = self.features.lock().expect("feature cache").get(root) {
            return Ok(f.clone());
        }
        let manifest = corpus::scan_dataset(root)?;
        let f = Arc::new(extract_features(manifest, &self.config.frontend)?);
        self.features
            .lock()
            .expect("feature cache")
            .insert(root.to_path_buf(), f.clone());
        Ok(f)
    }

    pub fn primary(&self) -> Result<Arc<Features>> {
        self.features(self.config.primary_root())
    }
}

pub fn stamp_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".stamp");
    PathBuf::from(s)
}

/// `config_hash` recorded in an artifact's stamp.
pub fn read_stamp_hash(artifact: &Path) -> Result<String> {
    let path = stamp_path(artifact);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .find_map(|l| l.strip_prefix("config_hash="))
        .map(str::to_string)
        .ok_or_else(|| Error::Format(format!("{}: no config_hash line", path.display())))
}

pub fn run_synth(ws: &Workspace) -> Result<SynthOutput> {
    let cfg = &ws.config;
    let truth = cfg
        .truth_table
        .clone()
        .ok_or_else(|| Error::Config("synth needs truth_table to be set".into()))?;
    let root = cfg.primary_root();
    if root.exists() {
        fs::remove_dir_all(root).map_err(|e| Error::io(root, e))?;
    }
    corpus::synth_corpus(&cfg.synth, root, &truth)
}

fn fresh_encoder(ws: &Workspace) -> Result<EncoderParams> {
    encoder::init_params(&ws.config.encoder, ws.config.seed)
}

pub fn run_pretrain(ws: &Workspace) -> Result<PretrainOutput> {
    let cfg = &ws.config;
    let mut grids = Vec::new();
    let mut ids = Vec::new();
    for root in &cfg.dataset_roots {
        let f = ws.features(root)?;
        for (clip, spec) in f.manifest.clips.iter().zip(&f.spectrograms) {
            if clip.split == Split::Train {
                grids.push(frontend::patchify(spec, &cfg.frontend)?);
                ids.push(format!("{}:{}", root.display(), clip.key()));
            }
        }
    }
    let init = match &cfg.init_checkpoint {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            if ck.config.patch_dim != cfg.encoder.patch_dim || ck.config.num_patches != cfg.encoder.num_patches {
                return Err(Error::shape(format!("{} does not match the frontend patch layout", p.display())));
            }
            ck.encoder()?
        }
        None => fresh_encoder(ws)?,
    };
    let out = pretrain::pretrain_run(&grids, &ids, init, &cfg.pretrain, cfg.seed)?;

    let manifest_path = ws.out("manifest.csv")?;
    ws.primary()?.manifest.write_csv(&manifest_path)?;
    ws.stamp(&manifest_path, "pretrain", &[])?;

    let mut teacher = Checkpoint::new("teacher", &cfg.encoder);
    teacher.push_params("encoder", &out.state.teacher);
    let tp = ws.out("pretrain/teacher.ckpt")?;
    teacher.save(&tp)?;
    ws.stamp(&tp, "pretrain", &[])?;

    let mut student = Checkpoint::new("student", &cfg.encoder);
    student.push_params("encoder", &out.state.student.encoder);
    student.push_params("decoder", &out.state.student.decoder);
    let sp = ws.out("pretrain/student.ckpt")?;
    student.save(&sp)?;
    ws.stamp(&sp, "pretrain", &[])?;

    let lp = ws.out("pretrain/loss.csv")?;
    pretrain::write_loss_csv(&lp, &out.curve)?;
    ws.stamp(&lp, "pretrain", &[])?;
    Ok(out)
}

/// Clip embeddings for every clip of the target dataset, manifest order.
pub fn embed_clips(ws: &Workspace, params: &EncoderParams, use_cls: bool) -> Result<Vec<(String, Array1<f64>)>> {
    let f = ws.primary()?;
    let frontend = &ws.config.frontend;
    f.manifest
        .clips
        .par_iter()
        .zip(f.spectrograms.par_iter())
        .map(|(c, s)| {
            let grid = frontend::patchify(s, frontend)?;
            let e = finetune::clip_embedding(&grid.patches.view(), params, use_cls)?;
            if e.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("embedding of {}", c.key())));
            }
            Ok((c.key(), e))
        })
        .collect()
}

pub fn run_embed(ws: &Workspace, source: EmbedSource) -> Result<Vec<(String, Array1<f64>)>> {
    let (params, use_cls) = match source {
        EmbedSource::Teacher => {
            let p = ws.require("pretrain/teacher.ckpt", "teacher checkpoint", "pretrain")?;
            (Checkpoint::load(&p)?.encoder()?, false)
        }
        EmbedSource::Untrained => (fresh_encoder(ws)?, false),
        EmbedSource::Adapted => {
            let p = ws.require("finetune/adapted.ckpt", "adapted checkpoint", "finetune")?;
            (Checkpoint::load(&p)?.encoder()?, ws.config.finetune.use_cls)
        }
    };
    let rows = embed_clips(ws, &params, use_cls)?;
    let path = ws.out(&format!("embed/{}.bin", source.name()))?;
    let (ids, vecs): (Vec<String>, Vec<Array1<f64>>) = rows.iter().cloned().unzip();
    backend::write_embeddings(&path, &ids, &vecs)?;
    ws.stamp(&path, "embed", &[("source", source.name().into())])?;
    Ok(rows)
}

fn load_embedding_map(ws: &Workspace, source: EmbedSource, needed_by: &str) -> Result<HashMap<String, Array1<f64>>> {
    let rel = format!("embed/{}.bin", source.name());
    let path = ws
        .require(&rel, &format!("{} embeddings", source.name()), "embed")
        .map_err(|e| match e {
            Error::MissingArtifact { what, path, .. } => Error::MissingArtifact {
                what: format!("{what} for {needed_by}"),
                stage: format!("embed --source {}", source.name()),
                path,
            },
            e => e,
        })?;
    Ok(backend::read_embeddings(&path)?.into_iter().collect())
}

pub struct ClusterOutcome {
    pub labelings: Vec<PseudoLabeling>,
    /// (machine, k, purity) when a truth table is available.
    pub summary: Vec<(String, usize, Option<f64>)>,
}

/// Purity of one labeling against `clip key → latent attribute`.
pub fn labeling_purity(labeling: &PseudoLabeling, truth: &BTreeMap<String, String>) -> Result<f64> {
    let mut labels = Vec::new();
    let mut tokens = Vec::new();
    for (key, l) in &labeling.labels {
        let t = truth
            .get(key)
            .ok_or_else(|| Error::Format(format!("truth table has no entry for {key}")))?;
        labels.push(*l);
        tokens.push(t.as_str());
    }
    Ok(pseudolabel::cluster_purity(&labels, &tokens))
}

pub fn cluster_embeddings(
    ws: &Workspace,
    embeddings: &HashMap<String, Array1<f64>>,
) -> Result<ClusterOutcome> {
    let f = ws.primary()?;
    let labelings = f
        .manifest
        .unattributed_machines
        .par_iter()
        .map(|m| pseudolabel::pseudo_label_machine(&f.manifest, m, embeddings, ws.config.cluster))
        .collect::<Result<Vec<_>>>()?;
    let truth = match &ws.config.truth_table {
        Some(p) if p.exists() => Some(corpus::read_truth_table(p)?),
        _ => None,
    };
    let summary = labelings
        .iter()
        .map(|l| {
            let purity = truth.as_ref().map(|t| labeling_purity(l, t)).transpose()?;
            Ok((l.machine_type.clone(), l.k, purity))
        })
        .collect::<Result<_>>()?;
    Ok(ClusterOutcome { labelings, summary })
}

pub fn run_cluster(ws: &Workspace) -> Result<ClusterOutcome> {
    let embeddings = load_embedding_map(ws, EmbedSource::Teacher, "clustering")?;
    let outcome = cluster_embeddings(ws, &embeddings)?;
    let lp = ws.out("cluster/pseudo_labels.csv")?;
    pseudolabel::write_pseudo_labels(&lp, &outcome.labelings)?;
    ws.stamp(&lp, "cluster", &[])?;
    for l in &outcome.labelings {
        let dp = ws.out(&format!("cluster/dendrogram_{}.csv", l.machine_type))?;
        pseudolabel::write_dendrogram(&dp, &l.dendrogram)?;
        ws.stamp(&dp, "cluster", &[])?;
    }
    let sp = ws.out("cluster/summary.csv")?;
    let mut text = String::from("machine,k,purity\n");
    for (m, k, p) in &outcome.summary {
        text.push_str(&format!("{m},{k},{}\n", p.map(|v| v.to_string()).unwrap_or_default()));
    }
    fs::write(&sp, text).map_err(|e| Error::io(&sp, e))?;
    ws.stamp(&sp, "cluster", &[])?;
    Ok(outcome)
}

/// Training clips of the target dataset with their label-space classes.
pub fn training_clips(features: &Features, labels: &finetune::LabelSpace) -> Result<Vec<TrainClip>> {
    features
        .manifest
        .clips
        .iter()
        .zip(&features.spectrograms)
        .filter(|(c, _)| c.split == Split::Train)
        .map(|(c, s)| {
            let key = c.key();
            let class = labels
                .class_of(&key)
                .ok_or_else(|| Error::invalid(format!("clip {key} missing from the label space")))?;
            Ok(TrainClip {
                id: key,
                spectrogram: s.clone(),
                class,
            })
        })
        .collect()
}

/// Fine-tunes `init` on the target dataset with the given pseudo labels.
pub fn finetune_with(
    ws: &Workspace,
    init: EncoderParams,
    pseudo: &[PseudoLabeling],
    mode: LabelMode,
) -> Result<(finetune::LabelSpace, FinetuneOutput)> {
    let f = ws.primary()?;
    let labels = build_label_space(&f.manifest, pseudo, mode)?;
    let clips = training_clips(&f, &labels)?;
    let cfg = &ws.config;
    let out = finetune::finetune_run(&clips, &cfg.frontend, &labels, init, None, &cfg.finetune, cfg.seed)?;
    Ok((labels, out))
}

pub fn run_finetune(ws: &Workspace, arm: FinetuneArm) -> Result<FinetuneOutput> {
    let init = if arm.from_scratch {
        fresh_encoder(ws)?
    } else {
        let p = ws.require("pretrain/teacher.ckpt", "teacher checkpoint", "pretrain")?;
        Checkpoint::load(&p)?.encoder()?
    };
    let (pseudo, mode) = if arm.no_pseudo {
        (Vec::new(), LabelMode::NoPseudo)
    } else {
        let p = ws.require("cluster/pseudo_labels.csv", "pseudo labels", "cluster")?;
        (pseudolabel::read_pseudo_labels(&p)?, LabelMode::Pseudo)
    };
    let (labels, out) = finetune_with(ws, init, &pseudo, mode)?;
    let extra = [
        ("no_pseudo", arm.no_pseudo.to_string()),
        ("from_scratch", arm.from_scratch.to_string()),
        ("classes", labels.len().to_string()),
    ];
    let cp = ws.out("finetune/adapted.ckpt")?;
    finetune::adapted_checkpoint(&out.params).save(&cp)?;
    ws.stamp(&cp, "finetune", &extra)?;
    let curve = ws.out("finetune/curve.csv")?;
    finetune::write_curve_csv(&curve, &out.curve)?;
    ws.stamp(&curve, "finetune", &extra)?;
    let classes = ws.out("finetune/classes.csv")?;
    let mut text = String::from("class,machine,attribute\n");
    for (i, (m, a)) in labels.classes.iter().enumerate() {
        text.push_str(&format!("{i},{m},{a}\n"));
    }
    fs::write(&classes, text).map_err(|e| Error::io(&classes, e))?;
    ws.stamp(&classes, "finetune", &extra)?;
    Ok(out)
}

/// KNN scores of every test clip from a clip-embedding map.
pub fn score_embeddings(
    manifest: &DatasetManifest,
    embeddings: &HashMap<String, Array1<f64>>,
    config: &backend::BackendConfig,
) -> Result<Vec<(String, f64)>> {
    let bank = build_memory_bank(manifest, embeddings)?;
    manifest
        .split(Split::Test)
        .map(|c| {
            let key = c.key();
            let e = embeddings.get(&key).ok_or_else(|| Error::MissingEmbedding(key.clone()))?;
            Ok((key, backend::anomaly_score(&e.view(), &bank, &c.machine_type, config)?))
        })
        .collect()
}

pub fn run_score(ws: &Workspace) -> Result<Vec<(String, f64)>> {
    let embeddings = load_embedding_map(ws, EmbedSource::Adapted, "scoring")?;
    let f = ws.primary()?;
    let scores = score_embeddings(&f.manifest, &embeddings, &ws.config.backend)?;
    let sp = ws.out("score/scores.csv")?;
    backend::write_scores(&sp, &scores)?;
    ws.stamp(&sp, "score", &[])?;
    Ok(scores)
}

pub fn report_from_scores(ws: &Workspace, manifest: &DatasetManifest, scores: &[(String, f64)]) -> Result<ScoreReport> {
    let map: HashMap<String, f64> = scores.iter().cloned().collect();
    let results = metrics::machine_results(manifest, &map, ws.config.metrics.p)?;
    let subsets = metrics::standard_subsets(manifest, &ws.config.metrics.dev_machines, &ws.config.metrics.eval_machines);
    ScoreReport::build(results, &subsets)
}

pub fn run_eval(ws: &Workspace, force: bool) -> Result<ScoreReport> {
    let sp = ws.require("score/scores.csv", "scores", "score")?;
    let found = read_stamp_hash(&sp)?;
    if found != ws.hash && !force {
        return Err(Error::StampMismatch {
            path: sp,
            found,
            expected: ws.hash.clone(),
        });
    }
    let scores = backend::read_scores(&sp)?;
    let f = ws.primary()?;
    let report = report_from_scores(ws, &f.manifest, &scores)?;
    let rp = ws.out("eval/report.csv")?;
    report.write(&rp)?;
    ws.stamp(&rp, "eval", &[("forced", (force && found != ws.hash).to_string())])?;

    let adapted = ws.path("embed/adapted.bin");
    if adapted.exists() {
        let rows = backend::read_embeddings(&adapted)?;
        let meta: HashMap<String, &corpus::ClipMeta> = f.manifest.clips.iter().map(|c| (c.key(), c)).collect();
        let mut x = Array2::zeros((rows.len(), rows.first().map_or(0, |r| r.1.len())));
        let mut ids = Vec::new();
        let mut labels = Vec::new();
        for (i, (id, e)) in rows.iter().enumerate() {
            x.row_mut(i).assign(e);
            let label = meta
                .get(id)
                .map(|c| format!("{}/{}/{}", c.machine_type, c.domain, c.condition))
                .unwrap_or_default();
            ids.push(id.clone());
            labels.push(label);
        }
        let pp = ws.out("eval/projection.csv")?;
        metrics::export_projection(&pp, &ids, &labels, &x)?;
        ws.stamp(&pp, "eval", &[])?;
    }
    Ok(report)
}

pub fn run_pipeline(ws: &Workspace) -> Result<ScoreReport> {
    if !ws.config.primary_root().exists() {
        run_synth(ws)?;
    }
    run_pretrain(ws)?;
    run_embed(ws, EmbedSource::Teacher)?;
    run_cluster(ws)?;
    run_finetune(ws, FinetuneArm::default())?;
    run_embed(ws, EmbedSource::Adapted)?;
    run_score(ws)?;
    run_eval(ws, false)
}

/// Parses arguments, runs the command and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(msg) => {
            if !msg.is_empty() {
                println!("{msg}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<String> {
    let config = PipelineConfig::load(cli.config.as_deref(), &cli.overrides)?;
    let ws = Workspace::new(config)?;
    let out = ws.config.output_dir.display().to_string();
    Ok(match cli.command {
        Command::Synth => {
            let s = run_synth(&ws)?;
            format!(
                "wrote {} clips for {} machines under {}",
                s.manifest.clips.len(),
                s.manifest.machines.len(),
                ws.config.primary_root().display()
            )
        }
        Command::Pretrain => {
            let o = run_pretrain(&ws)?;
            let last = o.curve.last().map_or(f64::NAN, |r| r.loss.total);
            format!("pre-trained {} steps, final L_UFO {last:.4}; artifacts in {out}/pretrain", o.curve.len())
        }
        Command::Embed { source } => {
            let rows = run_embed(&ws, source)?;
            format!("embedded {} clips with the {} encoder", rows.len(), source.name())
        }
        Command::Cluster => {
            let o = run_cluster(&ws)?;
            o.summary
                .iter()
                .map(|(m, k, p)| match p {
                    Some(p) => format!("{m}: k={k} purity={p:.3}"),
                    None => format!("{m}: k={k}"),
                })
                .collect::<Vec<_>>()
                .join("\n")
        }
        Command::Finetune { no_pseudo, from_scratch } => {
            let o = run_finetune(&ws, FinetuneArm { no_pseudo, from_scratch })?;
            let acc = finetune::tail_mean(&o.curve, 10, |r| r.acc);
            format!("fine-tuned {} steps, recent train accuracy {acc:.3}", o.curve.len())
        }
        Command::Score => {
            let s = run_score(&ws)?;
            format!("scored {} test clips", s.len())
        }
        Command::Eval { force } => run_eval(&ws, force)?.to_csv(),
        Command::Pipeline => run_pipeline(&ws)?.to_csv(),
    })
}

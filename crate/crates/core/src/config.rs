//! Pipeline configuration: TOML sections, dotted overrides and the hash
//! stamped onto every artifact.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::BackendConfig;
use crate::corpus::SynthSpec;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::finetune::FinetuneConfig;
use crate::frontend::FrontendParams;
use crate::metrics::DEFAULT_P;
use crate::pretrain::PretrainConfig;
use crate::pseudolabel::ClusterOptions;

pub const OUTPUT_DIR_ENV: &str = "ASD_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub p: f64,
    pub dev_machines: Vec<String>,
    pub eval_machines: Vec<String>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            p: DEFAULT_P,
            dev_machines: Vec::new(),
            eval_machines: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// The first root is the target dataset; every root feeds pre-training.
    pub dataset_roots: Vec<PathBuf>,
    /// Hidden latent-attribute table used only for purity reporting.
    pub truth_table: Option<PathBuf>,
    /// Encoder checkpoint to start pre-training from instead of a fresh init.
    pub init_checkpoint: Option<PathBuf>,
    pub synth: SynthSpec,
    pub frontend: FrontendParams,
    pub encoder: EncoderConfig,
    pub pretrain: PretrainConfig,
    pub cluster: ClusterOptions,
    pub finetune: FinetuneConfig,
    pub backend: BackendConfig,
    pub metrics: MetricsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            dataset_roots: vec![PathBuf::from("data/synth")],
            truth_table: Some(PathBuf::from("data/synth_truth.csv")),
            init_checkpoint: None,
            synth: SynthSpec::default(),
            frontend: FrontendParams::default(),
            encoder: EncoderConfig::default(),
            pretrain: PretrainConfig::default(),
            cluster: ClusterOptions::default(),
            finetune: FinetuneConfig::default(),
            backend: BackendConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

fn parse_override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies `a.b.c=value` to a TOML table; the value is read as TOML and
/// falls back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key {key:?} is malformed")));
    }
    let mut cursor = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {part} is not a section")))?;
    }
    cursor.insert(parts[parts.len() - 1].to_string(), parse_override_value(raw.trim()));
    Ok(())
}

impl PipelineConfig {
    /// Parses TOML text, then applies dotted overrides.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        // parse the untouched text first so schema errors carry line numbers
        toml::from_str::<PipelineConfig>(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: PipelineConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("after overrides: {e}")))?;
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        let mut cfg = Self::from_toml_str(&text, overrides).map_err(|e| match (e, path) {
            (Error::Config(msg), Some(p)) => Error::Config(format!("{}: {msg}", p.display())),
            (e, _) => e,
        })?;
        if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
            if !dir.is_empty() {
                cfg.output_dir = PathBuf::from(dir);
            }
        }
        Ok(cfg)
    }

    /// Derives encoder input sizes from the frontend and validates sections.
    pub fn resolve(&mut self) -> Result<()> {
        let wrap = |e: Error| match e {
            Error::InvalidArgument(m) => Error::Config(m),
            other => other,
        };
        self.frontend.validate().map_err(wrap)?;
        self.encoder.patch_dim = self.frontend.patch_dim();
        self.encoder.num_patches = self.frontend.num_patches();
        self.encoder.validate().map_err(wrap)?;
        self.pretrain.validate().map_err(wrap)?;
        self.finetune.validate().map_err(wrap)?;
        self.synth.validate().map_err(wrap)?;
        if self.dataset_roots.is_empty() {
            return Err(Error::Config("dataset_roots must list at least one directory".into()));
        }
        if self.backend.k == 0 {
            return Err(Error::Config("backend.k must be >= 1".into()));
        }
        if !(self.metrics.p > 0.0 && self.metrics.p <= 1.0) {
            return Err(Error::Config("metrics.p must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// SHA-256 of the canonical TOML with `output_dir` blanked, so relocated
    /// runs share a hash.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn primary_root(&self) -> &Path {
        &self.dataset_roots[0]
    }
}

//! JSON run configuration and output manifests.
//!
//! A config file can carry any of the sections below; omitted fields take
//! the built-in defaults and unknown keys are rejected. Every command writes
//! a manifest next to its outputs holding the fully resolved parameters, the
//! seed, and the tool version, so any run can be replayed from the manifest
//! alone via `--manifest`.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use dkws::data::SynthesisSpec;
use dkws::index::SearchConfig;
use dkws::trainer::TrainConfig;

/// Model architecture section: desk-scale defaults with per-field overrides.
/// Feature dimension and grapheme inventories always come from the corpus.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// "desk" (default) or "reference".
    pub preset: Option<String>,
    pub embedding_dim: Option<usize>,
    pub query_gru_layers: Option<usize>,
    pub query_gru_width: Option<usize>,
    pub doc_lstm_layers: Option<usize>,
    pub doc_lstm_width: Option<usize>,
    pub projection_dim: Option<usize>,
    pub dropout: Option<f64>,
    pub decimate_after: Option<Vec<usize>>,
}

impl ModelSection {
    pub fn build(
        &self,
        feature_dim: usize,
        languages: Vec<dkws::model::LanguageVocab>,
    ) -> Result<dkws::model::ModelConfig> {
        let mut cfg = match self.preset.as_deref() {
            None | Some("desk") => dkws::model::ModelConfig::desk(feature_dim, languages),
            Some("reference") => dkws::model::ModelConfig::reference(feature_dim, languages),
            Some(other) => bail!("unknown model preset '{other}' (expected desk or reference)"),
        };
        if let Some(v) = self.embedding_dim {
            cfg.embedding_dim = v;
        }
        if let Some(v) = self.query_gru_layers {
            cfg.query_gru_layers = v;
        }
        if let Some(v) = self.query_gru_width {
            cfg.query_gru_width = v;
        }
        if let Some(v) = self.doc_lstm_layers {
            cfg.doc_lstm_layers = v;
        }
        if let Some(v) = self.doc_lstm_width {
            cfg.doc_lstm_width = v;
        }
        if let Some(v) = self.projection_dim {
            cfg.projection_dim = v;
        }
        if let Some(v) = self.dropout {
            cfg.dropout = v;
        }
        if let Some(v) = &self.decimate_after {
            cfg.decimate_after = v.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringSection {
    pub beta: Option<f64>,
    pub match_tolerance_s: Option<f64>,
}

/// Top-level config file.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub model: ModelSection,
    pub train: Option<TrainConfig>,
    pub search: Option<SearchConfig>,
    pub scoring: ScoringSection,
    pub synth: Option<SynthesisSpec>,
}

/// Parse and validate a config file; defaults are filled by serde, unknown
/// keys are rejected with the offending key named.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let cfg: RunConfig = serde_json::from_str(&text)
        .with_context(|| format!("invalid config {}", path.display()))?;
    if let Some(train) = &cfg.train {
        train.validate()?;
    }
    if let Some(search) = &cfg.search {
        search.validate()?;
    }
    if let Some(synth) = &cfg.synth {
        synth.validate()?;
    }
    Ok(cfg)
}

/// Manifest written beside every output: enough to replay the run exactly.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    /// Fully resolved command parameters (paths included).
    pub params: serde_json::Value,
    /// Auxiliary provenance, e.g. model fingerprints.
    pub inputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new<P: Serialize>(command: &str, seed: u64, params: &P) -> Self {
        Manifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            params: serde_json::to_value(params).expect("params serialize"),
            inputs: BTreeMap::new(),
        }
    }

    pub fn input(mut self, key: &str, value: impl Into<String>) -> Self {
        self.inputs.insert(key.to_string(), value.into());
        self
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text)
            .with_context(|| format!("cannot write manifest {}", path.display()))?;
        Ok(())
    }
}

/// Load the resolved params of an earlier run of `command`.
pub fn load_manifest_params<P: DeserializeOwned>(path: &Path, command: &str) -> Result<P> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read manifest {}", path.display()))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .with_context(|| format!("invalid manifest {}", path.display()))?;
    if manifest.command != command {
        bail!(
            "manifest {} was written by '{}', not '{}'",
            path.display(),
            manifest.command,
            command
        );
    }
    serde_json::from_value(manifest.params).context("manifest params do not match this command")
}

/// Language id for a corpus directory: the directory's base name.
pub fn language_of_dir(dir: &Path) -> String {
    dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "default".into())
}

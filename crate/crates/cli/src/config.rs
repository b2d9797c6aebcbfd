//! Pipeline configuration file and the flag/file/environment precedence.
//!
//! Every value is resolved the same way: a command-line flag wins over the
//! config file, the file wins over `OP2VEC_SEED` (seed only), and that wins
//! over the built-in default.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use op2vec::classifier::ClassifierConfig;
use op2vec::corpus::VocabularyMode;
use op2vec::embedding::TrainConfig;
use op2vec::UnknownOpcodePolicy;
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "OP2VEC_SEED";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seed for both training stages unless a section sets its own.
    pub seed: Option<u64>,
    pub vocab_mode: VocabularyMode,
    pub unk_policy: UnknownOpcodePolicy,
    pub embedding: TrainConfig,
    pub classifier: ClassifierConfig,
    /// Print a progress line every this many files (0 disables).
    pub progress_every: Option<usize>,
}

/// Parsed config plus which seeds the file actually spelled out.
#[derive(Debug, Clone, Default)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    embedding_seed_set: bool,
    classifier_seed_set: bool,
    classifier_channels_set: bool,
}

fn has(v: &serde_json::Value, section: &str, key: &str) -> bool {
    v.get(section).and_then(|s| s.get(key)).is_some()
}

impl LoadedConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(LoadedConfig::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let raw: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let config: PipelineConfig =
            serde_json::from_value(raw.clone()).with_context(|| format!("invalid config {}", path.display()))?;
        Ok(LoadedConfig {
            embedding_seed_set: has(&raw, "embedding", "seed"),
            classifier_seed_set: has(&raw, "classifier", "seed"),
            classifier_channels_set: has(&raw, "classifier", "channels"),
            config,
        })
    }

    pub fn classifier_channels_set(&self) -> bool {
        self.classifier_channels_set
    }

    /// Seed for one stage: flag, then the section's own seed, then the
    /// file's top-level seed, then `OP2VEC_SEED`, then 0.
    fn resolve_seed(&self, flag: Option<u64>, section_seed: u64, section_set: bool) -> Result<u64> {
        if let Some(s) = flag {
            return Ok(s);
        }
        if section_set {
            return Ok(section_seed);
        }
        if let Some(s) = self.config.seed {
            return Ok(s);
        }
        env_seed().map(|s| s.unwrap_or(0))
    }

    pub fn embedding_seed(&self, flag: Option<u64>) -> Result<u64> {
        self.resolve_seed(flag, self.config.embedding.seed, self.embedding_seed_set)
    }

    pub fn classifier_seed(&self, flag: Option<u64>) -> Result<u64> {
        self.resolve_seed(flag, self.config.classifier.seed, self.classifier_seed_set)
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .with_context(|| format!("{SEED_ENV}={v:?} is not an unsigned integer")),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(e).with_context(|| format!("reading {SEED_ENV}")),
    }
}

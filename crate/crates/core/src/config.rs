//! Run configuration: one TOML document with a section per stage.
//!
//! ```toml
//! seeds = [0, 1, 2, 3, 4]
//!
//! [data]
//! excluded = ["memo"]
//!
//! [pretrain]
//! temperature = 0.5
//! encoder_widths = [256, 64, 16, 2]
//! ```
//!
//! Missing keys take their defaults; unknown keys are rejected. Overrides use
//! `section.key=value` where `value` is a TOML literal, or a bare string.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anomaly::AenConfig;
use crate::augment::AugmentationConfig;
use crate::contrastive::PretrainConfig;
use crate::error::{LensError, Result};
use crate::export::Annotation;
use crate::sampling::VqvaeConfig;
use crate::schema::{AttributeKind, OovPolicy};
use crate::synthetic::GeneratorConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// External corpus CSV. When unset, the synthetic generator supplies it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    /// Labels CSV aligned with `corpus` (`entry_id,label`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    pub kind_hints: BTreeMap<String, AttributeKind>,
    pub excluded: Vec<String>,
    pub oov: OovPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportConfig {
    pub annotations: Vec<Annotation>,
    /// Codebook whose assignments fill the `code_index` column; defaults to
    /// the first configured size.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub codebook_size: Option<usize>,
}

impl Default for ExportConfig {
    fn default() -> Self {
        ExportConfig {
            annotations: vec![
                Annotation::Attribute("payment_type".into()),
                Annotation::Attribute("fiscal_month".into()),
                Annotation::AnomalyLabel,
                Annotation::CodeIndex,
            ],
            codebook_size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Initialization and shuffling seeds of a multi-seed evaluation. The
    /// corpus and its injected anomalies do not depend on them.
    pub seeds: Vec<u64>,
    pub data: DataConfig,
    pub synthetic: GeneratorConfig,
    pub augmentation: AugmentationConfig,
    pub pretrain: PretrainConfig,
    pub aen: AenConfig,
    pub vqvae: VqvaeConfig,
    pub export: ExportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seeds: vec![0, 1, 2, 3, 4],
            data: DataConfig::default(),
            synthetic: GeneratorConfig::default(),
            augmentation: AugmentationConfig::default(),
            pretrain: PretrainConfig::default(),
            aen: AenConfig::default(),
            vqvae: VqvaeConfig::default(),
            export: ExportConfig::default(),
        }
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies `section.key=value` overrides to a raw TOML table.
pub fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<()> {
    for item in overrides {
        let (path, raw) = item
            .split_once('=')
            .ok_or_else(|| LensError::Config(format!("override `{item}` is not key=value")))?;
        let keys: Vec<&str> = path.trim().split('.').collect();
        if keys.iter().any(|k| k.is_empty()) {
            return Err(LensError::Config(format!("override `{item}` has an empty key")));
        }
        let (last, parents) = keys.split_last().expect("split yields one key");
        let mut node = &mut *table;
        for k in parents {
            let entry = node
                .entry(k.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            node = entry.as_table_mut().ok_or_else(|| {
                LensError::Config(format!("override `{item}`: `{k}` is not a section"))
            })?;
        }
        node.insert(last.to_string(), parse_literal(raw.trim()));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| LensError::Config(e.to_string()))?;
        apply_overrides(&mut table, overrides)?;
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| LensError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, or the defaults when `path` is `None`, then applies overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) if !p.exists() => return Err(LensError::MissingArtifact(p.to_path_buf())),
            Some(p) => fs::read_to_string(p).map_err(|e| LensError::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(LensError::Config("seeds must not be empty".into()));
        }
        let mut unique = self.seeds.clone();
        unique.sort_unstable();
        unique.dedup();
        if unique.len() != self.seeds.len() {
            return Err(LensError::Config("seeds must be distinct".into()));
        }
        for p in [&self.data.corpus, &self.data.labels].into_iter().flatten() {
            if !p.exists() {
                return Err(LensError::MissingArtifact(p.clone()));
            }
        }
        if self.data.corpus.is_none() {
            self.synthetic.validate()?;
        }
        self.augmentation.validate()?;
        self.pretrain.validate()?;
        self.aen.validate()?;
        self.vqvae.validate()?;
        if let Some(k) = self.export.codebook_size {
            if !self.vqvae.codebook_sizes.contains(&k) {
                return Err(LensError::Config(format!(
                    "export.codebook_size {k} is not among vqvae.codebook_sizes"
                )));
            }
        }
        Ok(())
    }

    /// The configuration of one seed of a multi-seed run.
    pub fn for_seed(&self, seed: u64) -> RunConfig {
        let mut cfg = self.clone();
        cfg.seeds = vec![seed];
        cfg.pretrain.seed = seed;
        cfg.aen.seed = seed;
        cfg.vqvae.seed = seed;
        cfg
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| LensError::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON rendering of the effective configuration.
    pub fn digest(&self) -> Result<String> {
        let json = serde_json::to_string(self)?;
        let hash = Sha256::digest(json.as_bytes());
        Ok(hash.iter().map(|b| format!("{b:02x}")).collect())
    }
}

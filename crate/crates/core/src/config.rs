//! Experiment configuration: TOML schema, environment and flag overrides,
//! semantic validation with line-anchored messages, and the resolved-config
//! hash embedded in every output artifact.
//!
//! Resolution order is file < environment < command-line flags. Environment
//! overrides use the `MAPO_` prefix with `__` as the path separator
//! (`MAPO_TRAIN__GROUP_SIZE=12` sets `train.group_size`), applied to the
//! parsed TOML before the typed deserialize so unknown keys and type errors
//! are caught the same way for every source.

use crate::policy_env::{DifficultyProfile, PolicyConfig};
use crate::trainer::{TrainConfig, TrainError};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use thiserror::Error;

/// Environment variables starting with this prefix override config keys.
pub const ENV_PREFIX: &str = "MAPO_";
/// Separator between path segments inside an override variable name.
const ENV_PATH_SEP: &str = "__";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    /// Syntax or schema violation; `location` carries `origin:line` when the
    /// offending key could be anchored in the source text.
    #[error("{location}: {message}")]
    Parse { location: String, message: String },
    /// A well-formed config that violates a semantic invariant.
    #[error("{location}: {message}")]
    Invalid { location: String, message: String },
    #[error("environment override {key}: {message}")]
    BadOverride { key: String, message: String },
}

/// Task-generation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumConfig {
    pub n_tasks: usize,
    pub profile: DifficultyProfile,
    pub seed: u64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            n_tasks: 8,
            profile: DifficultyProfile::Uniform,
            seed: 7,
        }
    }
}

/// Final-policy evaluation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Fraction of tasks held out of training, in `[0, 1)`.
    pub holdout_fraction: f64,
    pub samples_per_task: usize,
    /// Sampling temperature for evaluation rollouts.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            holdout_fraction: 0.2,
            samples_per_task: 64,
            temperature: 0.5,
            seed: 1234,
        }
    }
}

/// Optional per-run analysis passes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Emit a success-count spectrum of the final policy.
    pub spectrum: bool,
    /// Groups per task for the spectrum (at least 100).
    pub spectrum_groups: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            spectrum: false,
            spectrum_groups: 200,
        }
    }
}

/// One experiment, fully resolved. Hash this (via [`config_hash`]) to tag
/// artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Directory run artifacts are written into.
    pub out_dir: String,
    pub policy: PolicyConfig,
    pub curriculum: CurriculumConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub analysis: AnalysisConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            out_dir: "runs".into(),
            policy: PolicyConfig::default(),
            curriculum: CurriculumConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

/// Overrides applied on top of the config file, strongest last.
#[derive(Debug, Clone, Default)]
pub struct ConfigOverrides {
    /// Raw environment pairs; only names starting with [`ENV_PREFIX`] apply.
    pub env: Vec<(String, String)>,
    /// `--seed`: replaces `train.seed`.
    pub seed: Option<u64>,
    /// `--out-dir`: replaces `out_dir`.
    pub out_dir: Option<String>,
}

impl ExperimentConfig {
    /// Semantic validation without source anchoring (for configs built in
    /// code). File-loaded configs get anchored messages via [`parse_config`].
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.validate_anchored("config", "")
    }

    fn validate_anchored(&self, origin: &str, source: &str) -> Result<(), ConfigError> {
        let fail = |section: &str, message: String| -> ConfigError {
            anchored_invalid(origin, source, section, message)
        };
        self.policy
            .layout()
            .validate()
            .map_err(|e| fail("policy", e.to_string()))?;
        if self.curriculum.n_tasks < 1 {
            return Err(fail("curriculum", "n_tasks must be >= 1".into()));
        }
        self.train.validate().map_err(|e| {
            let message = match e {
                TrainError::InvalidConfig(m) => m,
                other => other.to_string(),
            };
            fail("train", message)
        })?;
        if !(self.eval.holdout_fraction >= 0.0 && self.eval.holdout_fraction < 1.0) {
            return Err(fail(
                "eval",
                format!(
                    "holdout_fraction must lie in [0, 1), got {}",
                    self.eval.holdout_fraction
                ),
            ));
        }
        if self.eval.samples_per_task < 1 {
            return Err(fail("eval", "samples_per_task must be >= 1".into()));
        }
        if !(self.eval.temperature > 0.0 && self.eval.temperature.is_finite()) {
            return Err(fail(
                "eval",
                format!(
                    "temperature must be finite and > 0, got {}",
                    self.eval.temperature
                ),
            ));
        }
        if self.analysis.spectrum && self.analysis.spectrum_groups < 100 {
            return Err(fail(
                "analysis",
                format!(
                    "spectrum_groups must be >= 100, got {}",
                    self.analysis.spectrum_groups
                ),
            ));
        }
        Ok(())
    }
}

/// Parse, override, deserialize, and validate a config from TOML text.
///
/// `origin` names the source in error messages (typically the file path).
///
/// # Edge cases
/// - empty text is a valid config (all defaults);
/// - unknown keys anywhere are rejected, with the offending key anchored to
///   its line when it appears in the text;
/// - overrides are applied to the raw TOML tree, so a bad override fails
///   with the same schema errors as a bad file.
pub fn parse_config(
    text: &str,
    origin: &str,
    overrides: &ConfigOverrides,
) -> Result<ExperimentConfig, ConfigError> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
        let location = match e.span() {
            Some(span) => format!("{origin}:{}", line_of_offset(text, span.start)),
            None => origin.to_string(),
        };
        ConfigError::Parse {
            location,
            message: e.message().to_string(),
        }
    })?;
    apply_env_overrides(&mut table, &overrides.env)?;
    if let Some(seed) = overrides.seed {
        let seed = i64::try_from(seed).map_err(|_| ConfigError::BadOverride {
            key: "--seed".into(),
            message: format!("{seed} does not fit the config integer range"),
        })?;
        set_path(&mut table, &["train", "seed"], toml::Value::Integer(seed)).map_err(
            |message| ConfigError::BadOverride {
                key: "--seed".into(),
                message,
            },
        )?;
    }
    if let Some(dir) = &overrides.out_dir {
        table.insert("out_dir".into(), toml::Value::String(dir.clone()));
    }
    let cfg: ExperimentConfig = table.try_into().map_err(|e: toml::de::Error| {
        // Value-level errors carry no span; anchor the key the message
        // quotes, if any.
        let location = backticked(e.message())
            .and_then(|key| key_line(text, "", &key))
            .map(|line| format!("{origin}:{line}"))
            .unwrap_or_else(|| origin.to_string());
        ConfigError::Parse {
            location,
            message: e.message().to_string(),
        }
    })?;
    cfg.validate_anchored(origin, text)?;
    Ok(cfg)
}

/// Load a config file and apply overrides.
pub fn load_config(
    path: &Path,
    overrides: &ConfigOverrides,
) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text, &path.display().to_string(), overrides)
}

/// Hash of the resolved config (hex-encoded SHA-256 of its canonical JSON).
///
/// Artifacts embed this value; two artifacts with equal hashes came from
/// identical resolved configs and are byte-identical by the determinism
/// contract.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    hex::encode(config_hash_raw(cfg))
}

/// Raw 32-byte form of [`config_hash`] for binary artifact headers.
pub fn config_hash_raw(cfg: &ExperimentConfig) -> [u8; 32] {
    let json = serde_json::to_vec(cfg).expect("config serialization is infallible");
    Sha256::digest(&json).into()
}

fn apply_env_overrides(
    table: &mut toml::Table,
    env: &[(String, String)],
) -> Result<(), ConfigError> {
    // Sort for a deterministic application order (ties cannot collide:
    // distinct variable names address distinct paths).
    let mut pairs: Vec<&(String, String)> = env
        .iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX))
        .collect();
    pairs.sort();
    for (key, raw) in pairs {
        let path: Vec<String> = key[ENV_PREFIX.len()..]
            .to_ascii_lowercase()
            .split(ENV_PATH_SEP)
            .map(str::to_string)
            .collect();
        if path.iter().any(String::is_empty) {
            return Err(ConfigError::BadOverride {
                key: key.clone(),
                message: "empty path segment".into(),
            });
        }
        let segments: Vec<&str> = path.iter().map(String::as_str).collect();
        set_path(table, &segments, parse_scalar(raw)).map_err(|message| {
            ConfigError::BadOverride {
                key: key.clone(),
                message,
            }
        })?;
    }
    Ok(())
}

/// Parse an override value as a TOML scalar, falling back to a string (so
/// bare words like `mapo` or `/tmp/out` need no quoting).
fn parse_scalar(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed document defines v"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(table: &mut toml::Table, path: &[&str], value: toml::Value) -> Result<(), String> {
    let (last, parents) = path.split_last().expect("override paths are non-empty");
    let mut cursor = table;
    for (depth, segment) in parents.iter().enumerate() {
        let entry = cursor
            .entry(segment.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| format!("path segment '{}' is not a table", path[..=depth].join(".")))?;
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}

/// 1-based line containing byte `offset`.
fn line_of_offset(text: &str, offset: usize) -> usize {
    let clamped = offset.min(text.len());
    1 + text.as_bytes()[..clamped]
        .iter()
        .filter(|&&b| b == b'\n')
        .count()
}

/// First backtick-quoted token in a message (serde names unknown fields
/// that way).
fn backticked(message: &str) -> Option<String> {
    let start = message.find('`')? + 1;
    let end = start + message[start..].find('`')?;
    Some(message[start..end].to_string())
}

/// Best-effort 1-based line of `key` in `source`: first a `key = …`
/// assignment inside `section` (or any of its subsections), then a
/// `[section.key]`-style header. `section` of `""` means top level.
fn key_line(source: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut header_hit = None;
    let qualified = if section.is_empty() {
        key.to_string()
    } else {
        format!("{section}.{key}")
    };
    for (idx, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[') {
            current = name.trim_end_matches(']').trim().to_string();
            let is_header_match =
                current == qualified || current.starts_with(&format!("{qualified}."));
            if is_header_match && header_hit.is_none() {
                header_hit = Some(idx + 1);
            }
            continue;
        }
        let in_section = current == section
            || (!section.is_empty() && current.starts_with(&format!("{section}.")))
            || section.is_empty();
        if !in_section {
            continue;
        }
        if let Some(rest) = line.strip_prefix(key) {
            if rest.trim_start().starts_with('=') {
                return Some(idx + 1);
            }
        }
    }
    header_hit
}

/// Build an anchored semantic error: try every identifier in the message as
/// a key under `section`, then fall back to the section itself.
fn anchored_invalid(origin: &str, source: &str, section: &str, message: String) -> ConfigError {
    let tokens = message
        .split(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
        .filter(|t| t.len() >= 2 && t.starts_with(|c: char| c.is_ascii_alphabetic()));
    let mut line = None;
    for token in tokens {
        if let Some(found) = key_line(source, section, token) {
            line = Some(found);
            break;
        }
    }
    if line.is_none() && !section.is_empty() {
        line = key_line(source, "", section);
    }
    let location = match line {
        Some(l) => format!("{origin}:{l}"),
        None => origin.to_string(),
    };
    ConfigError::Invalid { location, message }
}

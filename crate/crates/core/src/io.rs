//! Run artifacts: the versioned binary policy format, the metrics /
//! comparison / analysis CSVs, and the JSON run manifest.
//!
//! Every artifact embeds the resolved config hash, and every writer is
//! deterministic: identical inputs produce byte-identical files. Numbers are
//! rendered with Rust's shortest round-trip formatting, so equality of
//! resolved configs implies equality of artifacts.
//!
//! Policy file layout (all integers little-endian):
//!
//! | offset | size | field                                               |
//! |--------|------|-----------------------------------------------------|
//! | 0      | 8    | magic + version, `MAPOPB01`                         |
//! | 8      | 32   | resolved config hash (raw SHA-256)                  |
//! | 40     | 4    | n_think_tokens (u32)                                |
//! | 44     | 4    | n_answer_tokens (u32)                               |
//! | 48     | 4    | n_prompt_symbols (u32)                              |
//! | 52     | 4    | context_order (u32)                                 |
//! | 56     | 4    | max_len (u32)                                       |
//! | 60     | 8    | n_params (u64), must equal the layout's table size  |
//! | 68     | 8·N  | logits (f64), row-major `(state, token)`            |

use crate::analysis::{PathologyReport, RatioReport, SpectrumReport};
use crate::config::ExperimentConfig;
use crate::policy_env::{PolicyError, PolicyLayout, TabularPolicy, Vocab};
use crate::trainer::TrainRecord;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

/// Magic bytes plus format version of the binary policy file.
pub const POLICY_MAGIC: &[u8; 8] = b"MAPOPB01";
/// Bytes before the parameter block.
const POLICY_HEADER_LEN: usize = 8 + 32 + 5 * 4 + 8;

/// Version field written into run manifests.
pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("policy file malformed: {0}")]
    MalformedPolicy(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("record shape: {0}")]
    RecordShape(String),
}

/// Everything a finished run records besides its CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    /// Version of the tool that produced the run.
    pub tool_version: String,
    /// Subcommand (plus variant, e.g. the estimator of a comparison leg).
    pub command: String,
    pub config_hash: String,
    /// The fully resolved config, duplicating every seed the run consumed.
    pub config: ExperimentConfig,
}

fn create(path: &Path) -> Result<std::fs::File, IoError> {
    std::fs::File::create(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

fn file_err(path: &Path) -> impl Fn(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv {
        path: path.display().to_string(),
        source,
    }
}

/// Shortest round-trip decimal rendering (deterministic across runs).
fn num(v: f64) -> String {
    format!("{v}")
}

// ---------------------------------------------------------------------------
// Binary policy file
// ---------------------------------------------------------------------------

/// Serialize a policy with the config hash of the run that produced it.
pub fn encode_policy(policy: &TabularPolicy, config_hash: &[u8; 32]) -> Vec<u8> {
    let layout = policy.layout();
    let params = policy.params();
    let mut bytes = Vec::with_capacity(POLICY_HEADER_LEN + 8 * params.len());
    bytes.extend_from_slice(POLICY_MAGIC);
    bytes.extend_from_slice(config_hash);
    for dim in [
        layout.vocab.n_think,
        layout.vocab.n_answers,
        layout.n_prompt_symbols,
        layout.context_order,
        layout.max_len,
    ] {
        let dim = u32::try_from(dim).expect("validated layouts fit u32 dims");
        bytes.extend_from_slice(&dim.to_le_bytes());
    }
    bytes.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    bytes
}

/// Decode a policy file. Total: malformed input is an error, never a panic
/// or an unbounded allocation (this is a fuzzed entry point).
///
/// # Edge cases
/// - the layout is validated (including the table-size cap) before the
///   parameter count is trusted, so a hostile header cannot trigger a large
///   allocation;
/// - non-finite parameters are rejected;
/// - trailing bytes are rejected.
pub fn decode_policy(bytes: &[u8]) -> Result<(TabularPolicy, [u8; 32]), IoError> {
    if bytes.len() < POLICY_HEADER_LEN {
        return Err(IoError::MalformedPolicy(format!(
            "{} bytes is shorter than the {POLICY_HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[..8] != POLICY_MAGIC {
        return Err(IoError::MalformedPolicy(
            "bad magic (expected MAPOPB01)".into(),
        ));
    }
    let mut hash = [0u8; 32];
    hash.copy_from_slice(&bytes[8..40]);
    let mut dims = [0usize; 5];
    for (i, dim) in dims.iter_mut().enumerate() {
        let at = 40 + 4 * i;
        *dim = u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice")) as usize;
    }
    let layout = PolicyLayout {
        vocab: Vocab {
            n_think: dims[0],
            n_answers: dims[1],
        },
        n_prompt_symbols: dims[2],
        context_order: dims[3],
        max_len: dims[4],
    };
    layout.validate()?;
    let n_params = u64::from_le_bytes(bytes[60..68].try_into().expect("8-byte slice"));
    if n_params != layout.n_params() as u64 {
        return Err(IoError::MalformedPolicy(format!(
            "parameter count {n_params} does not match the layout's table size {}",
            layout.n_params()
        )));
    }
    let body = &bytes[POLICY_HEADER_LEN..];
    if body.len() as u64 != 8 * n_params {
        return Err(IoError::MalformedPolicy(format!(
            "parameter block holds {} bytes, expected {}",
            body.len(),
            8 * n_params
        )));
    }
    let mut policy = TabularPolicy::uniform(layout)?;
    for (i, chunk) in body.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        if !v.is_finite() {
            return Err(IoError::MalformedPolicy(format!(
                "non-finite parameter at index {i}"
            )));
        }
        policy.params_mut()[i] = v;
    }
    Ok((policy, hash))
}

pub fn write_policy(
    path: &Path,
    policy: &TabularPolicy,
    config_hash: &[u8; 32],
) -> Result<(), IoError> {
    std::fs::write(path, encode_policy(policy, config_hash)).map_err(file_err(path))
}

pub fn read_policy(path: &Path) -> Result<(TabularPolicy, [u8; 32]), IoError> {
    let bytes = std::fs::read(path).map_err(file_err(path))?;
    decode_policy(&bytes)
}

// ---------------------------------------------------------------------------
// CSVs
// ---------------------------------------------------------------------------

fn metrics_header(group_size: usize, lead: &[&str]) -> Vec<String> {
    let mut header: Vec<String> = lead.iter().map(|s| s.to_string()).collect();
    header.extend([
        "step".to_string(),
        "mean_reward".to_string(),
        "success_rate".to_string(),
        "mean_kl".to_string(),
        "grad_norm".to_string(),
    ]);
    for n in 0..=group_size {
        header.push(format!("hist_{n}"));
    }
    header
}

fn metrics_row(
    record: &TrainRecord,
    group_size: usize,
    lead: &[&str],
) -> Result<Vec<String>, IoError> {
    if record.hist.len() != group_size + 1 {
        return Err(IoError::RecordShape(format!(
            "step {} histogram has {} bins, expected {}",
            record.step,
            record.hist.len(),
            group_size + 1
        )));
    }
    let mut row: Vec<String> = lead.iter().map(|s| s.to_string()).collect();
    row.extend([
        record.step.to_string(),
        num(record.mean_reward),
        num(record.success_rate),
        num(record.mean_kl),
        num(record.grad_norm),
    ]);
    row.extend(record.hist.iter().map(u64::to_string));
    Ok(row)
}

/// Per-step training metrics, one row per step, stable column order.
pub fn write_metrics_csv(
    path: &Path,
    config_hash: &str,
    group_size: usize,
    records: &[TrainRecord],
) -> Result<(), IoError> {
    let mut file = create(path)?;
    writeln!(file, "# config_hash={config_hash}").map_err(file_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(metrics_header(group_size, &[]))
        .map_err(csv_err(path))?;
    for record in records {
        w.write_record(metrics_row(record, group_size, &[])?)
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(file_err(path))
}

/// Comparison metrics merged across estimators, keyed by (estimator, step).
pub fn write_merged_metrics_csv(
    path: &Path,
    config_hash: &str,
    group_size: usize,
    runs: &[(String, Vec<TrainRecord>)],
) -> Result<(), IoError> {
    let mut file = create(path)?;
    writeln!(file, "# config_hash={config_hash}").map_err(file_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(metrics_header(group_size, &["estimator"]))
        .map_err(csv_err(path))?;
    for (estimator, records) in runs {
        for record in records {
            w.write_record(metrics_row(record, group_size, &[estimator])?)
                .map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(file_err(path))
}

/// One comparison leg's final numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub estimator: String,
    pub final_success_rate: f64,
    pub final_mean_reward: f64,
    /// Mean evaluation accuracy on training tasks (empty cell if no split).
    pub eval_in_domain: Option<f64>,
    /// Mean evaluation accuracy on held-out tasks (empty cell if no split).
    pub eval_held_out: Option<f64>,
}

/// Final-accuracy summary table of a comparison run.
pub fn write_summary_csv(
    path: &Path,
    config_hash: &str,
    rows: &[SummaryRow],
) -> Result<(), IoError> {
    let mut file = create(path)?;
    writeln!(file, "# config_hash={config_hash}").map_err(file_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record([
        "estimator",
        "final_success_rate",
        "final_mean_reward",
        "eval_in_domain",
        "eval_held_out",
    ])
    .map_err(csv_err(path))?;
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    for row in rows {
        w.write_record([
            row.estimator.clone(),
            num(row.final_success_rate),
            num(row.final_mean_reward),
            opt(row.eval_in_domain),
            opt(row.eval_held_out),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(file_err(path))
}

/// The four-batch, six-estimator advantage table.
pub fn write_pathology_csv(path: &Path, report: &PathologyReport) -> Result<(), IoError> {
    let width = report
        .rows
        .first()
        .map(|r| r.rewards.len())
        .unwrap_or_default();
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["batch".to_string(), "estimator".to_string()];
    for i in 1..=width {
        header.push(format!("r_{i}"));
    }
    for i in 1..=width {
        header.push(format!("adv_{i}"));
    }
    w.write_record(header).map_err(csv_err(path))?;
    for row in &report.rows {
        let mut record = vec![row.batch.clone(), row.estimator.to_string()];
        record.extend(row.rewards.iter().copied().map(num));
        record.extend(row.advantages.iter().copied().map(num));
        w.write_record(record).map_err(csv_err(path))?;
    }
    w.flush().map_err(file_err(path))
}

/// Closed-form vs measured gradient-ratio grid.
pub fn write_ratio_csv(path: &Path, report: &RatioReport) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["p", "closed_form", "empirical"])
        .map_err(csv_err(path))?;
    for row in &report.rows {
        w.write_record([num(row.p), num(row.closed_form), num(row.empirical)])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(file_err(path))
}

/// Success-count spectra: one row per task plus a pooled row.
pub fn write_spectrum_csv(path: &Path, report: &SpectrumReport) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec![
        "prompt_id".to_string(),
        "mean_n".to_string(),
        "var_n".to_string(),
    ];
    for n in 0..=report.group_size {
        header.push(format!("hist_{n}"));
    }
    w.write_record(header).map_err(csv_err(path))?;
    for task in &report.per_task {
        let mut row = vec![
            task.prompt_id.to_string(),
            num(task.mean_n),
            num(task.var_n),
        ];
        row.extend(task.hist.iter().map(u64::to_string));
        w.write_record(row).map_err(csv_err(path))?;
    }
    let total: u64 = report.pooled.iter().sum();
    let mean = report
        .pooled
        .iter()
        .enumerate()
        .map(|(n, &c)| n as f64 * c as f64)
        .sum::<f64>()
        / total as f64;
    let var = report
        .pooled
        .iter()
        .enumerate()
        .map(|(n, &c)| (n as f64 - mean).powi(2) * c as f64)
        .sum::<f64>()
        / total as f64;
    let mut pooled = vec!["pooled".to_string(), num(mean), num(var)];
    pooled.extend(report.pooled.iter().map(u64::to_string));
    w.write_record(pooled).map_err(csv_err(path))?;
    w.flush().map_err(file_err(path))
}

/// Pretty-printed JSON manifest with a trailing newline.
pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<(), IoError> {
    let mut json =
        serde_json::to_string_pretty(manifest).expect("manifest serialization is infallible");
    json.push('\n');
    std::fs::write(path, json).map_err(file_err(path))
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, IoError> {
    let text = std::fs::read_to_string(path).map_err(file_err(path))?;
    serde_json::from_str(&text).map_err(|e| IoError::RecordShape(e.to_string()))
}

//! Resolved run configuration and the flat `key = value` config file.
//!
//! A config file holds one setting per line, keyed by the long flag name
//! without dashes in front (`T = 2048`, `kv-heads = 2`, `synthetic = true`).
//! Blank lines and lines starting with `#` are ignored. Flags given on the
//! command line override the file.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::args::{PolicyKind, RunArgs};
use crate::cache::{CachePolicy, QuantBits};
use crate::fold::IsolatedPositions;
use crate::model::ModelConfig;
use crate::needle::DECODE_TOKENS;
use crate::precision::PrecisionMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Drift,
    Needle,
    MultiNeedle,
    StreamCompare,
    Accounting,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Drift => "drift",
            Self::Needle => "needle",
            Self::MultiNeedle => "multi-needle",
            Self::StreamCompare => "stream-compare",
            Self::Accounting => "accounting",
        }
    }

    /// Stem of the output file names.
    pub fn file_stem(self) -> &'static str {
        match self {
            Self::Drift => "drift",
            Self::Needle => "needle",
            Self::MultiNeedle => "multi_needle",
            Self::StreamCompare => "stream_compare",
            Self::Accounting => "accounting",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum ModelSource {
    Synthetic { config: ModelConfig, seed: u64 },
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountingSpec {
    pub n_layers: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub d_head: usize,
    pub bytes_per_element: u64,
    pub tokens: usize,
    pub chunk_len: usize,
    pub bounded_capacity: Option<usize>,
}

/// Everything that determines a run's output. Recorded verbatim in the
/// header line of every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: CommandKind,
    pub model: Option<ModelSource>,
    pub precision: PrecisionMode,
    #[serde(rename = "T")]
    pub total_tokens: usize,
    #[serde(rename = "C")]
    pub chunk_len: usize,
    pub policy: CachePolicy,
    /// Window seeds for drift, trial seeds for retrieval.
    pub seeds: Vec<u64>,
    pub distances: Vec<usize>,
    #[serde(rename = "K")]
    pub needles: usize,
    pub document: Option<PathBuf>,
    pub isolated_positions: IsolatedPositions,
    pub plateau_start: usize,
    pub decode_tokens: usize,
    pub accounting: Option<AccountingSpec>,
}

/// Turns config-file text into `--key=value` arguments.
pub fn config_file_args(text: &str) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected `key = value`", n + 1))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || key.starts_with('-') || key == "config" {
            return Err(format!("config line {}: invalid key `{key}`", n + 1));
        }
        if key == "synthetic" {
            match value {
                "true" => out.push("--synthetic".to_string()),
                "false" => {}
                other => return Err(format!("config line {}: synthetic must be true or false, got `{other}`", n + 1)),
            }
            continue;
        }
        out.push(format!("--{key}={value}"));
    }
    Ok(out)
}

struct Defaults {
    tokens: usize,
    chunk: usize,
    precision: PrecisionMode,
    distances: &'static [usize],
    count: usize,
}

fn defaults(kind: CommandKind) -> Defaults {
    match kind {
        CommandKind::Drift => {
            Defaults { tokens: 2048, chunk: 64, precision: PrecisionMode::NativeF64, distances: &[], count: 2 }
        }
        CommandKind::Needle | CommandKind::MultiNeedle => Defaults {
            tokens: 8192,
            chunk: 256,
            precision: PrecisionMode::NativeF32,
            distances: &[1, 4, 16, 31],
            count: 2,
        },
        CommandKind::StreamCompare => Defaults {
            tokens: 8192,
            chunk: 64,
            precision: PrecisionMode::NativeF32,
            distances: &[1, 31, 63, 127],
            count: 2,
        },
        CommandKind::Accounting => {
            Defaults { tokens: 131_072, chunk: 256, precision: PrecisionMode::NativeF32, distances: &[], count: 0 }
        }
    }
}

fn policy_from(kind: CommandKind, a: &RunArgs) -> Result<CachePolicy, String> {
    let sink_window = || CachePolicy::SinkWindow {
        n_sinks: a.sinks.unwrap_or(4),
        window: a.window.unwrap_or(if kind == CommandKind::StreamCompare { 252 } else { 1020 }),
    };
    let chosen = match a.policy {
        None if kind == CommandKind::StreamCompare => sink_window(),
        None | Some(PolicyKind::Fold) => CachePolicy::FoldAccumulate,
        Some(PolicyKind::SinkWindow) => sink_window(),
        Some(PolicyKind::Quant) => CachePolicy::QuantRoundTrip {
            bits: QuantBits::try_from(a.bits.unwrap_or(8)).map_err(|e| e.to_string())?,
        },
        Some(PolicyKind::Decay) => CachePolicy::UniformDecay { gamma: a.gamma.unwrap_or(0.99) },
        Some(PolicyKind::Prune) => CachePolicy::AttentionPrune { keep: a.keep.unwrap_or(1024) },
    };
    if kind == CommandKind::StreamCompare && !matches!(chosen, CachePolicy::SinkWindow { .. }) {
        return Err("stream-compare compares against a sink-window policy".into());
    }
    chosen.validate().map_err(|e| e.to_string())?;
    Ok(chosen)
}

/// Applies per-command defaults and validates the result.
pub fn resolve(kind: CommandKind, a: &RunArgs) -> Result<RunConfig, String> {
    let d = defaults(kind);
    let total_tokens = a.tokens.unwrap_or(d.tokens);
    let chunk_len = a.chunk.unwrap_or(d.chunk);
    if chunk_len == 0 || chunk_len > total_tokens {
        return Err(format!("need 1 <= C <= T, got T={total_tokens} C={chunk_len}"));
    }
    let count = match kind {
        CommandKind::Drift => a.windows.unwrap_or(d.count),
        _ => a.trials.unwrap_or(d.count),
    };
    let seeds = a.seeds.clone().unwrap_or_else(|| (0..count as u64).collect());
    if kind != CommandKind::Accounting && seeds.is_empty() {
        return Err("at least one trial or window is required".into());
    }
    let distances = a.distances.clone().unwrap_or_else(|| d.distances.to_vec());
    let needles = a.needles.unwrap_or(if kind == CommandKind::MultiNeedle { 4 } else { 1 });
    let policy = policy_from(kind, a)?;

    let mut cfg = RunConfig {
        command: kind,
        model: None,
        precision: a.precision.unwrap_or(d.precision),
        total_tokens,
        chunk_len,
        policy,
        seeds,
        distances,
        needles,
        document: a.document.clone(),
        isolated_positions: a.isolated_positions.unwrap_or_default(),
        plateau_start: a.d_min.unwrap_or(crate::metrics::PLATEAU_START),
        decode_tokens: a.decode_tokens.unwrap_or(DECODE_TOKENS),
        accounting: None,
    };

    if kind == CommandKind::Accounting {
        let n_heads = a.heads.unwrap_or(32);
        cfg.accounting = Some(AccountingSpec {
            n_layers: a.layers.unwrap_or(32),
            n_heads,
            n_kv_heads: a.kv_heads.unwrap_or(8),
            d_head: a.d_head.unwrap_or(128),
            bytes_per_element: a.bytes.unwrap_or(2),
            tokens: total_tokens,
            chunk_len,
            bounded_capacity: a.bounded.or(match policy {
                CachePolicy::SinkWindow { n_sinks, window } if a.policy.is_some() => Some(n_sinks + window),
                _ => None,
            }),
        });
        return Ok(cfg);
    }

    cfg.model = Some(match &a.model {
        Some(path) => ModelSource::File { path: path.clone() },
        None => {
            let n_heads = a.heads.unwrap_or(4);
            let config = ModelConfig::with_dims(
                a.layers.unwrap_or(2),
                n_heads,
                a.kv_heads.unwrap_or(n_heads.min(2)),
                a.d_model.unwrap_or(64),
                a.d_ff.unwrap_or(128),
                a.vocab.unwrap_or(256),
                a.max_position.unwrap_or(total_tokens + 1024),
            )
            .map_err(|e| e.to_string())?;
            ModelSource::Synthetic { config, seed: a.seed.unwrap_or(0) }
        }
    });
    match kind {
        CommandKind::Needle | CommandKind::StreamCompare if cfg.distances.is_empty() => {
            Err("--distances must list at least one distance".into())
        }
        CommandKind::MultiNeedle if cfg.needles == 0 => Err("--K must be at least 1".into()),
        _ => Ok(cfg),
    }
}

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::fold::IsolatedPositions;
use crate::precision::PrecisionMode;

#[derive(Debug, Parser)]
#[command(name = "kvfold", version, about = "Chunked KV-cache inference experiments", args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-depth NLL drift and recurrence advantage against the full forward.
    Drift(RunArgs),
    /// Single-needle retrieval at chosen chunk distances.
    Needle(RunArgs),
    /// K needles spread evenly over the haystack, each asked separately.
    MultiNeedle(RunArgs),
    /// Needle grid for the growing cache and a sink+window cache side by side.
    StreamCompare(RunArgs),
    /// Analytical cache and attention-score memory.
    Accounting(RunArgs),
    /// Re-run the configuration recorded in an output file's header line.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyKind {
    Fold,
    SinkWindow,
    Quant,
    Decay,
    Prune,
}

fn parse_isolated(s: &str) -> Result<IsolatedPositions, String> {
    match s {
        "local" => Ok(IsolatedPositions::Local),
        "absolute" => Ok(IsolatedPositions::Absolute),
        other => Err(format!("expected `local` or `absolute`, got `{other}`")),
    }
}

/// Every run flag. Unset flags fall back to the config file, then to
/// per-command defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Flat `key = value` file; keys are long flag names.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Use a seeded synthetic model (the default when no --model is given).
    #[arg(long)]
    pub synthetic: bool,
    /// KVFW weight file.
    #[arg(long, conflicts_with = "synthetic")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long = "kv-heads")]
    pub kv_heads: Option<usize>,
    #[arg(long = "d-model")]
    pub d_model: Option<usize>,
    #[arg(long = "d-ff")]
    pub d_ff: Option<usize>,
    #[arg(long)]
    pub vocab: Option<usize>,
    #[arg(long = "max-position")]
    pub max_position: Option<usize>,
    /// Synthetic weight seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(PrecisionMode))]
    pub precision: Option<PrecisionMode>,

    /// Tokens per window or haystack.
    #[arg(long = "T")]
    pub tokens: Option<usize>,
    /// Chunk length.
    #[arg(long = "C")]
    pub chunk: Option<usize>,

    #[arg(long, value_enum)]
    pub policy: Option<PolicyKind>,
    #[arg(long)]
    pub sinks: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub bits: Option<u8>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub keep: Option<usize>,

    /// Needle distances in chunks, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub distances: Option<Vec<usize>>,
    /// Needle count for multi-needle.
    #[arg(long = "K")]
    pub needles: Option<usize>,
    /// Trials per grid cell; trial seeds are `0..trials` unless --seeds is given.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Explicit trial or window seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Drift windows; window seeds are `0..windows` unless --seeds is given.
    #[arg(long)]
    pub windows: Option<usize>,
    /// Whitespace-separated token file used instead of synthetic text.
    #[arg(long)]
    pub document: Option<PathBuf>,
    #[arg(long = "isolated-positions", value_parser = parse_isolated)]
    pub isolated_positions: Option<IsolatedPositions>,
    /// First depth of the plateau region.
    #[arg(long = "d-min")]
    pub d_min: Option<usize>,
    #[arg(long = "decode-tokens")]
    pub decode_tokens: Option<usize>,

    /// Head dimension for accounting.
    #[arg(long = "d-head")]
    pub d_head: Option<usize>,
    /// Bytes per cached element for accounting.
    #[arg(long)]
    pub bytes: Option<u64>,
    /// Capacity of a bounded cache to compare against, in tokens.
    #[arg(long)]
    pub bounded: Option<usize>,

    /// Worker threads across trials or windows.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory (default: $KVFOLD_OUT_DIR, else `kvfold-out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// Any output file written by a previous run.
    pub file: PathBuf,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

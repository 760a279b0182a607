//! Executes a resolved configuration and writes its artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{AccountingSpec, CommandKind, ModelSource, RunConfig};
use super::par_map;
use crate::cache::CachePolicy;
use crate::error::{Error, Result};
use crate::fold::{document_window, eval_three_conditions, parse_token_file, EvalRecord, SyntheticCorpus};
use crate::metrics::{drift_advantage, memory_row, plateau_stats, DepthCurve, KvShape, PlateauStats, GB};
use crate::model::file::load_weights;
use crate::model::Model;
use crate::needle::{build_trial, max_question_tokens, run_trial, Placement, TrialParams, KEY_WORDS};
use crate::precision::{PrecisionMode, Scalar};

pub const ARTIFACT_VERSION: u32 = 1;

/// First line of every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub artifact: String,
    pub version: String,
    pub artifact_version: u32,
    /// Which output of the run this file is.
    pub file: String,
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_words: Option<Vec<String>>,
}

impl Header {
    fn new(cfg: &RunConfig, file: &str) -> Self {
        let needles = matches!(
            cfg.command,
            CommandKind::Needle | CommandKind::MultiNeedle | CommandKind::StreamCompare
        );
        Self {
            artifact: "kvfold".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            artifact_version: ARTIFACT_VERSION,
            file: file.into(),
            config: cfg.clone(),
            seeds: cfg.seeds.clone(),
            key_words: needles.then(|| KEY_WORDS.iter().map(|s| s.to_string()).collect()),
        }
    }

    /// Reads the header from the first line of an output file (JSONL or CSV).
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let first = text.lines().next().ok_or(Error::Empty("output file"))?;
        Ok(serde_json::from_str(first.strip_prefix("# ").unwrap_or(first))?)
    }
}

/// One retrieval question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: usize,
    #[serde(rename = "T")]
    pub total_tokens: usize,
    #[serde(rename = "C")]
    pub chunk_len: usize,
    #[serde(rename = "K")]
    pub needles: usize,
    pub distance: usize,
    pub insert_chunk: usize,
    pub policy: String,
    pub seed: u64,
    pub key: String,
    pub gold: String,
    pub resident: bool,
    pub reachable: bool,
    pub decoded: String,
    pub extracted: Option<String>,
    pub exact_match: bool,
}

/// Aggregated counts for one (policy, distance) cell.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridCell {
    pub trials: usize,
    pub exact_match: usize,
    pub resident: usize,
    pub reachable: usize,
}

pub struct Report {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

/// Failure split by exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn config_err(e: impl ToString) -> Failure {
    Failure::Config(e.to_string())
}

pub fn execute(cfg: &RunConfig, out_dir: &Path, jobs: usize) -> std::result::Result<Report, Failure> {
    if cfg.command == CommandKind::Accounting {
        let spec = cfg.accounting.as_ref().ok_or_else(|| config_err("accounting run without accounting spec"))?;
        return Ok(accounting(cfg, spec, out_dir)?);
    }
    let source = cfg.model.as_ref().ok_or_else(|| config_err("run needs a model"))?;
    let document = match &cfg.document {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
            Some(parse_token_file(&text).map_err(config_err)?)
        }
        None => None,
    };
    let rounding = cfg.precision.rounding();
    match cfg.precision {
        PrecisionMode::NativeF64 => {
            let model = load_model::<f64>(source, rounding)?;
            run_model(cfg, &model, document.as_deref(), out_dir, jobs)
        }
        PrecisionMode::NativeF32 | PrecisionMode::EmulatedBf16 => {
            let model = load_model::<f32>(source, rounding)?;
            run_model(cfg, &model, document.as_deref(), out_dir, jobs)
        }
    }
}

fn load_model<T: Scalar>(
    source: &ModelSource,
    rounding: crate::precision::Rounding,
) -> std::result::Result<Model<T>, Failure> {
    match source {
        ModelSource::Synthetic { config, seed } => Model::synthetic(config.clone(), *seed, rounding).map_err(config_err),
        ModelSource::File { path } => {
            let (config, weights) =
                load_weights::<T>(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
            Model::new(config, weights, rounding).map_err(config_err)
        }
    }
}

fn check_fits<T: Scalar>(cfg: &RunConfig, model: &Model<T>, document: Option<&[u32]>) -> std::result::Result<(), Failure> {
    let mc = model.config();
    let needs = match cfg.command {
        CommandKind::Drift => cfg.total_tokens,
        _ => cfg.total_tokens + max_question_tokens() + cfg.decode_tokens,
    };
    if needs > mc.max_position {
        return Err(config_err(Error::PositionOverflow { end: needs, max: mc.max_position }));
    }
    let byte_text = document.is_none() || cfg.command != CommandKind::Drift;
    if byte_text && mc.vocab_size < 256 {
        return Err(config_err(format!("byte-level text needs vocab >= 256, model has {}", mc.vocab_size)));
    }
    if let Some(doc) = document {
        if let Some(&bad) = doc.iter().find(|&&t| t as usize >= mc.vocab_size) {
            return Err(config_err(Error::TokenOutOfRange { id: bad, vocab: mc.vocab_size }));
        }
        let windows = if cfg.command == CommandKind::Drift { cfg.seeds.len() } else { 1 };
        document_window(doc, windows * cfg.total_tokens).map_err(config_err)?;
    }
    Ok(())
}

fn run_model<T: Scalar>(
    cfg: &RunConfig,
    model: &Model<T>,
    document: Option<&[u32]>,
    out_dir: &Path,
    jobs: usize,
) -> std::result::Result<Report, Failure> {
    check_fits(cfg, model, document)?;
    fs::create_dir_all(out_dir).map_err(Error::from)?;
    Ok(match cfg.command {
        CommandKind::Drift => drift(cfg, model, document, out_dir, jobs)?,
        _ => retrieval(cfg, model, document, out_dir, jobs)?,
    })
}

fn jsonl<S: Serialize>(header: &Header, rows: impl IntoIterator<Item = S>) -> Result<String> {
    let mut s = serde_json::to_string(header)?;
    s.push('\n');
    for r in rows {
        s.push_str(&serde_json::to_string(&r)?);
        s.push('\n');
    }
    Ok(s)
}

fn write(out_dir: &Path, name: &str, content: String, files: &mut Vec<PathBuf>) -> Result<()> {
    let path = out_dir.join(name);
    fs::write(&path, content)?;
    files.push(path);
    Ok(())
}

#[derive(Serialize)]
struct CurveSummary<'a> {
    curve: &'a DepthCurve,
    plateau: Option<PlateauStats>,
    max_abs_drift: f64,
    nll_tolerance: f64,
}

fn drift<T: Scalar>(
    cfg: &RunConfig,
    model: &Model<T>,
    document: Option<&[u32]>,
    out_dir: &Path,
    jobs: usize,
) -> Result<Report> {
    let windows: Vec<(usize, u64)> = cfg.seeds.iter().copied().enumerate().collect();
    let per_window = par_map(&windows, jobs, |&(w, seed)| {
        let tokens = match document {
            Some(doc) => document_window(&doc[w * cfg.total_tokens..], cfg.total_tokens)?,
            None => SyntheticCorpus::new(seed).generate(cfg.total_tokens),
        };
        eval_three_conditions(model, &tokens, cfg.chunk_len, w, cfg.isolated_positions, cfg.policy)
    })?;
    let records: Vec<EvalRecord> = per_window.into_iter().flatten().collect();
    let curve = drift_advantage(&records)?;
    let plateau = plateau_stats(&curve, cfg.plateau_start).ok();
    let max_abs_drift = curve.drift.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let tol = cfg.precision.nll_tolerance();

    let stem = cfg.command.file_stem();
    let mut files = vec![];
    write(out_dir, &format!("{stem}.jsonl"), jsonl(&Header::new(cfg, "records"), &records)?, &mut files)?;
    let summary_row = CurveSummary { curve: &curve, plateau, max_abs_drift, nll_tolerance: tol };
    write(out_dir, &format!("{stem}_curve.jsonl"), jsonl(&Header::new(cfg, "curve"), [&summary_row])?, &mut files)?;
    let csv = format!("# {}\n{}", serde_json::to_string(&Header::new(cfg, "curve-csv"))?, curve.to_csv());
    write(out_dir, &format!("{stem}_curve.csv"), csv, &mut files)?;

    let mut s = String::new();
    let _ = writeln!(s, "drift over {} window(s), T={} C={}, policy {}", curve.n_windows, cfg.total_tokens, cfg.chunk_len, cfg.policy);
    let _ = writeln!(s, "{:>6} {:>14} {:>14}", "depth", "drift", "advantage");
    for ((d, dr), adv) in curve.depths.iter().zip(&curve.drift).zip(&curve.advantage) {
        let _ = writeln!(s, "{d:>6} {dr:>14.6e} {adv:>14.6e}");
    }
    match plateau {
        Some(p) => {
            let _ = writeln!(
                s,
                "plateau (depth >= {}): mean {:.6e}, span {:.6e}",
                cfg.plateau_start, p.plateau_mean, p.plateau_span
            );
        }
        None => {
            let _ = writeln!(s, "plateau: no depths >= {}", cfg.plateau_start);
        }
    }
    let verdict = if max_abs_drift <= tol { "within" } else { "exceeds" };
    let _ = writeln!(s, "max |drift| {max_abs_drift:.3e} ({verdict} {} tolerance {tol:e})", cfg.precision);
    Ok(Report { files, summary: s })
}

struct Job {
    policy: CachePolicy,
    params: TrialParams,
}

fn retrieval<T: Scalar>(
    cfg: &RunConfig,
    model: &Model<T>,
    document: Option<&[u32]>,
    out_dir: &Path,
    jobs: usize,
) -> std::result::Result<Report, Failure> {
    let params = |placement: Placement, seed: u64| TrialParams {
        total_tokens: cfg.total_tokens,
        chunk_len: cfg.chunk_len,
        placement,
        seed,
        document: document.map(<[u32]>::to_vec),
    };
    let policies = match cfg.command {
        CommandKind::StreamCompare => vec![CachePolicy::FoldAccumulate, cfg.policy],
        _ => vec![cfg.policy],
    };
    let mut work = vec![];
    for &policy in &policies {
        match cfg.command {
            CommandKind::MultiNeedle => {
                for &seed in &cfg.seeds {
                    work.push(Job { policy, params: params(Placement::Evenly(cfg.needles), seed) });
                }
            }
            _ => {
                for &d in &cfg.distances {
                    for &seed in &cfg.seeds {
                        work.push(Job { policy, params: params(Placement::Distances(vec![d]), seed) });
                    }
                }
            }
        }
    }
    for job in &work {
        build_trial(&job.params).map_err(config_err)?;
    }
    let outcomes = par_map(&work, jobs, |job| {
        let trial = build_trial(&job.params)?;
        run_trial(model, &trial, job.policy, cfg.decode_tokens)
    })?;

    let mut records = vec![];
    let mut grid: BTreeMap<(String, usize), GridCell> = BTreeMap::new();
    for (job, outs) in work.iter().zip(outcomes) {
        let k = outs.len();
        for o in outs {
            let rec = TrialRecord {
                trial_id: records.len(),
                total_tokens: cfg.total_tokens,
                chunk_len: cfg.chunk_len,
                needles: k,
                distance: o.needle.distance,
                insert_chunk: o.needle.insert_chunk,
                policy: job.policy.to_string(),
                seed: job.params.seed,
                key: o.needle.key,
                gold: o.needle.value,
                resident: o.proxy.resident,
                reachable: o.proxy.reachable,
                decoded: o.decoded,
                extracted: o.score.extracted,
                exact_match: o.score.exact_match,
            };
            let cell = grid.entry((rec.policy.clone(), rec.distance)).or_default();
            cell.trials += 1;
            cell.exact_match += usize::from(rec.exact_match);
            cell.resident += usize::from(rec.resident);
            cell.reachable += usize::from(rec.reachable);
            records.push(rec);
        }
    }

    let stem = cfg.command.file_stem();
    let mut files = vec![];
    write(out_dir, &format!("{stem}.jsonl"), jsonl(&Header::new(cfg, "trials"), &records)?, &mut files)?;
    let mut csv = format!("# {}\npolicy,distance,trials,exact_match,resident,reachable\n", serde_json::to_string(&Header::new(cfg, "grid-csv")).map_err(Error::from)?);
    for ((policy, d), c) in &grid {
        let _ = writeln!(csv, "{policy},{d},{},{},{},{}", c.trials, c.exact_match, c.resident, c.reachable);
    }
    write(out_dir, &format!("{stem}_grid.csv"), csv, &mut files)?;

    let mut s = String::new();
    let _ = writeln!(s, "{} over T={} C={}, {} question(s)", cfg.command.name(), cfg.total_tokens, cfg.chunk_len, records.len());
    let _ = writeln!(s, "{:<22} {:>8} {:>8} {:>9} {:>9}", "policy", "distance", "exact", "resident", "reachable");
    for ((policy, d), c) in &grid {
        let _ = writeln!(
            s,
            "{policy:<22} {d:>8} {:>8} {:>9} {:>9}",
            format!("{}/{}", c.exact_match, c.trials),
            format!("{}/{}", c.resident, c.trials),
            format!("{}/{}", c.reachable, c.trials)
        );
    }
    Ok(Report { files, summary: s })
}

fn gb(bytes: u64) -> String {
    format!("{:.2} GB", bytes as f64 / GB)
}

fn accounting(cfg: &RunConfig, spec: &AccountingSpec, out_dir: &Path) -> Result<Report> {
    let shape = KvShape { n_layers: spec.n_layers as u64, n_kv_heads: spec.n_kv_heads as u64, d_head: spec.d_head as u64 };
    let row = memory_row(
        shape,
        spec.n_heads as u64,
        spec.bytes_per_element,
        spec.tokens as u64,
        spec.chunk_len as u64,
        spec.bounded_capacity.map(|c| c as u64),
    );
    fs::create_dir_all(out_dir)?;
    let mut files = vec![];
    write(out_dir, "accounting.jsonl", jsonl(&Header::new(cfg, "memory"), [&row])?, &mut files)?;
    let mut csv = format!(
        "# {}\ntokens,kv_bytes_per_token,fold_cache_bytes,bounded_cache_bytes,full_scores_bytes,chunk_scores_bytes\n",
        serde_json::to_string(&Header::new(cfg, "memory-csv"))?
    );
    let _ = writeln!(
        csv,
        "{},{},{},{},{},{}",
        row.tokens,
        row.kv_bytes_per_token,
        row.fold_cache_bytes,
        row.bounded_cache_bytes.map_or(String::new(), |b| b.to_string()),
        row.full_scores_bytes,
        row.chunk_scores_bytes
    );
    write(out_dir, "accounting.csv", csv, &mut files)?;

    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} layers x {} kv heads x {} d_head x {} bytes",
        spec.n_layers, spec.n_kv_heads, spec.d_head, spec.bytes_per_element
    );
    let _ = writeln!(s, "kv bytes per token:           {}", row.kv_bytes_per_token);
    let _ = writeln!(s, "growing cache at T={}:  {}", row.tokens, gb(row.fold_cache_bytes));
    if let (Some(cap), Some(b)) = (spec.bounded_capacity, row.bounded_cache_bytes) {
        let _ = writeln!(s, "bounded cache ({cap} tokens):  {}", gb(b));
    }
    let _ = writeln!(s, "full attention scores ({} heads): {}", spec.n_heads, gb(row.full_scores_bytes));
    let _ = writeln!(s, "chunk attention scores (C={}): {}", spec.chunk_len, gb(row.chunk_scores_bytes));
    Ok(Report { files, summary: s })
}

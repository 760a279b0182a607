//! Single- and multi-needle retrieval trials.
//!
//! A trial plants one or more sentences "The magic number for KEY is VALUE."
//! into a filler haystack of `N` data chunks, folds the haystack, then asks for
//! each key in a separate question chunk placed right after the data chunks.
//! Distance `d` puts the needle in data chunk `N − d`, so `d = 1` is the chunk
//! immediately before the question. Needles sit centered in their chunk.
//!
//! Besides exact-match scoring of a greedy decode, every needle gets a
//! mechanistic check: whether its rows are still in the cache and visible to
//! the question's queries.

use std::ops::Range;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cache::{CachePolicy, KvCache};
use crate::error::{Error, Result};
use crate::fold::{byte_tokenize, chunk_sequence, document_window, filler_tokens, Chunk, FoldState};
use crate::model::{greedy_decode, support_mask, Model};
use crate::precision::Scalar;

/// Keys for needles. Three of them come from the classic probe; the rest are
/// drawn from the same register of rare English words.
pub const KEY_WORDS: [&str; 32] = [
    "amaranth", "obsidian", "halcyon", "zephyr", "quixotic", "sonorous", "lacuna", "petrichor",
    "vellichor", "susurrus", "ephemera", "gossamer", "labyrinth", "meridian", "nocturne",
    "palimpsest", "quiescent", "reverie", "sibilant", "tessellate", "umbral", "verdigris",
    "wistful", "xylem", "yonder", "zenith", "aurora", "bastion", "cerulean", "dulcet",
    "effulgent", "fjord",
];

pub const DECODE_TOKENS: usize = 30;

pub fn needle_sentence(key: &str, value: &str) -> String {
    format!("The magic number for {key} is {value}.")
}

pub fn question_text(key: &str) -> String {
    format!(
        "Earlier in the document, what was the magic number associated with {key}? Reply with only the number."
    )
}

/// Longest question over all keys, in byte tokens.
pub fn max_question_tokens() -> usize {
    KEY_WORDS.iter().map(|k| question_text(k).len()).max().unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeedleSpec {
    pub key: String,
    /// Five decimal digits.
    pub value: String,
    pub insert_chunk: usize,
    /// Chain transitions from the needle chunk to the question chunk.
    pub distance: usize,
    /// Absolute token positions of the needle sentence.
    pub span: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    /// One needle per listed distance.
    Distances(Vec<usize>),
    /// `K` needles in chunks `floor((i+1)·N/(K+1))`, `i = 0..K`.
    Evenly(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialParams {
    pub total_tokens: usize,
    pub chunk_len: usize,
    pub placement: Placement,
    pub seed: u64,
    /// Real document tokens to use as haystack instead of synthetic filler.
    pub document: Option<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeedleTrial {
    pub seed: u64,
    pub chunk_len: usize,
    pub haystack: Vec<u32>,
    pub needles: Vec<NeedleSpec>,
    /// One question per needle, same order.
    pub questions: Vec<String>,
}

impl NeedleTrial {
    pub fn n_data_chunks(&self) -> usize {
        self.haystack.len().div_ceil(self.chunk_len)
    }

    pub fn data_chunks(&self) -> Vec<Chunk> {
        chunk_sequence(&self.haystack, self.chunk_len).expect("haystack is non-empty")
    }

    /// The question for needle `i`, as the chunk right after the haystack.
    pub fn question_chunk(&self, i: usize) -> Chunk {
        Chunk { tokens: byte_tokenize(self.questions[i].as_bytes()), start_position: self.haystack.len() }
    }
}

pub fn build_trial(params: &TrialParams) -> Result<NeedleTrial> {
    let (t, c) = (params.total_tokens, params.chunk_len);
    if c == 0 || t < c {
        return Err(Error::Needle(format!("need 1 <= C <= T, got T={t} C={c}")));
    }
    let n = t / c;
    let chunks: Vec<usize> = match &params.placement {
        Placement::Distances(ds) => ds
            .iter()
            .map(|&d| {
                if d == 0 || d >= n {
                    Err(Error::Needle(format!("distance {d} outside 1..{n} for {n} chunks")))
                } else {
                    Ok(n - d)
                }
            })
            .collect::<Result<_>>()?,
        Placement::Evenly(k) => (0..*k).map(|i| (i + 1) * n / (k + 1)).collect(),
    };
    let k = chunks.len();
    if k == 0 || k > KEY_WORDS.len() {
        return Err(Error::Needle(format!("needle count must be in 1..={}", KEY_WORDS.len())));
    }
    let mut sorted = chunks.clone();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Needle(format!("needle chunks collide: {chunks:?}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut haystack = match &params.document {
        Some(doc) => document_window(doc, t)?,
        None => filler_tokens(params.seed ^ 0x9E37_79B9_7F4A_7C15, t),
    };
    let keys = sample(&mut rng, KEY_WORDS.len(), k);
    let mut needles = Vec::with_capacity(k);
    for (key_idx, insert_chunk) in keys.into_iter().zip(chunks) {
        let key = KEY_WORDS[key_idx].to_string();
        let value = rng.random_range(10_000..=99_999u32).to_string();
        let sentence = byte_tokenize(needle_sentence(&key, &value).as_bytes());
        if sentence.len() > c {
            return Err(Error::Needle(format!(
                "needle of {} tokens does not fit a chunk of {c}",
                sentence.len()
            )));
        }
        let start = insert_chunk * c + (c - sentence.len()) / 2;
        haystack[start..start + sentence.len()].copy_from_slice(&sentence);
        needles.push(NeedleSpec {
            key,
            value,
            insert_chunk,
            distance: n - insert_chunk,
            span: start..start + sentence.len(),
        });
    }
    let questions = needles.iter().map(|s| question_text(&s.key)).collect();
    Ok(NeedleTrial { seed: params.seed, chunk_len: c, haystack, needles, questions })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Score {
    pub extracted: Option<String>,
    pub exact_match: bool,
}

/// Finds the first run of exactly five ASCII digits (runs of other lengths are
/// skipped whole) and compares it to `gold`.
pub fn score_decode(decoded: &str, gold: &str) -> Score {
    let bytes = decoded.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i - start == 5 {
                let run = decoded[start..i].to_string();
                let exact_match = run == gold;
                return Score { extracted: Some(run), exact_match };
            }
        } else {
            i += 1;
        }
    }
    Score { extracted: None, exact_match: false }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proxy {
    /// Every needle position is cached on every layer.
    pub resident: bool,
    /// Every query of the question chunk has the needle positions in its support.
    pub reachable: bool,
}

pub fn retrievability_proxy<T: Scalar>(
    cache: &KvCache<T>,
    span: Range<usize>,
    question_start: usize,
    question_len: usize,
) -> Proxy {
    let resident = cache
        .layers()
        .iter()
        .all(|l| span.clone().all(|p| l.positions().binary_search(&p).is_ok()));
    let prefix = cache.positions();
    let keys: Vec<usize> = prefix.iter().copied().chain(question_start..question_start + question_len).collect();
    let s = keys.len();
    let mask = support_mask(prefix.len(), question_len);
    let reachable = span.clone().all(|p| match keys.iter().position(|&k| k == p) {
        Some(j) => (0..question_len).all(|i| mask[i * s + j]),
        None => false,
    });
    Proxy { resident, reachable }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeedleOutcome {
    pub needle: NeedleSpec,
    pub proxy: Proxy,
    pub decoded: String,
    pub score: Score,
}

/// Folds the haystack under `policy`, then asks every question from a copy
/// of the resulting state and greedily decodes `decode_len` tokens.
pub fn run_trial<T: Scalar>(
    model: &Model<T>,
    trial: &NeedleTrial,
    policy: CachePolicy,
    decode_len: usize,
) -> Result<Vec<NeedleOutcome>> {
    let mut state = FoldState::new(model, policy)?;
    state.run(model, &trial.data_chunks())?;
    let mut out = Vec::with_capacity(trial.needles.len());
    for (i, needle) in trial.needles.iter().enumerate() {
        let question = trial.question_chunk(i);
        let proxy = retrievability_proxy(&state.cache, needle.span.clone(), question.start_position, question.len());
        let mut asked = state.clone();
        let step = asked.step(model, &question)?;
        let last = step.logits.row(question.len() - 1);
        let tokens = greedy_decode(model, &mut asked.cache, last, question.end_position(), decode_len, None)?;
        let decoded: String = tokens.iter().map(|&t| u8::try_from(t).map_or('\u{FFFD}', char::from)).collect();
        let score = score_decode(&decoded, &needle.value);
        out.push(NeedleOutcome { needle: needle.clone(), proxy, decoded, score });
    }
    Ok(out)
}

//! Token sources: byte tokenizer, token files, and a seeded synthetic corpus.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn byte_tokenize(text: &[u8]) -> Vec<u32> {
    text.iter().map(|&b| b as u32).collect()
}

pub fn byte_detokenize(ids: &[u32]) -> Result<Vec<u8>> {
    ids.iter()
        .map(|&id| u8::try_from(id).map_err(|_| Error::TokenOutOfRange { id, vocab: 256 }))
        .collect()
}

/// Parses a token file: unsigned ids separated by whitespace or commas.
pub fn parse_token_file(text: &str) -> Result<Vec<u32>> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<u32>().map_err(|e| Error::Format(format!("bad token `{s}`: {e}"))))
        .collect()
}

/// Token offset into a real document before an evaluation window starts.
pub const DOCUMENT_OFFSET: usize = 200;

/// Takes `len` tokens starting [`DOCUMENT_OFFSET`] tokens into `doc`.
pub fn document_window(doc: &[u32], len: usize) -> Result<Vec<u32>> {
    doc.get(DOCUMENT_OFFSET..DOCUMENT_OFFSET + len)
        .map(<[u32]>::to_vec)
        .ok_or_else(|| {
            Error::Config(format!(
                "document has {} tokens, need {} after the {DOCUMENT_OFFSET}-token offset",
                doc.len(),
                len
            ))
        })
}

const SYLLABLES: &[&str] = &[
    "ka", "lo", "ri", "men", "sa", "tor", "vi", "an", "del", "os", "qu", "ber", "ne", "ith",
    "ul", "pra", "ge", "mor", "ta", "wen", "shi", "dar", "el", "fo",
];

/// Seeded prose-like byte stream with planted long-range copies, so that
/// context from earlier chunks actually helps prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub seed: u64,
    /// A copied span is planted after this many fresh tokens.
    pub copy_every: usize,
    pub copy_len: usize,
    /// Minimum distance back to the copy source.
    pub min_lag: usize,
}

impl SyntheticCorpus {
    pub fn new(seed: u64) -> Self {
        Self { seed, copy_every: 96, copy_len: 32, min_lag: 128 }
    }

    pub fn generate(&self, len: usize) -> Vec<u32> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out: Vec<u32> = Vec::with_capacity(len + 64);
        let mut fresh = 0;
        while out.len() < len {
            if fresh >= self.copy_every && out.len() >= self.min_lag + self.copy_len {
                let latest = out.len() - self.min_lag - self.copy_len;
                let src = rng.random_range(0..=latest);
                for i in 0..self.copy_len {
                    out.push(out[src + i]);
                }
                fresh = 0;
                continue;
            }
            let before = out.len();
            let n_syll = rng.random_range(1..=3);
            for _ in 0..n_syll {
                let s = SYLLABLES.choose(&mut rng).expect("non-empty");
                out.extend(s.bytes().map(u32::from));
            }
            let sep: &[u8] = if rng.random_bool(0.1) { b". " } else { b" " };
            out.extend(sep.iter().map(|&b| u32::from(b)));
            fresh += out.len() - before;
        }
        out.truncate(len);
        out
    }
}

/// Filler text for needle haystacks: the same generator without copies.
pub fn filler_tokens(seed: u64, len: usize) -> Vec<u32> {
    SyntheticCorpus { seed, copy_every: usize::MAX, copy_len: 0, min_lag: 0 }.generate(len)
}

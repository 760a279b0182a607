//! Single-needle trials at several distances, scored on the decoded answer.
//!
//! Synthetic weights carry no retrieval skill, so exact matches stay at zero
//! while the residency check shows the needle is still in the cache.

use kvfold::needle::{build_trial, run_trial, Placement, TrialParams};
use kvfold::{CachePolicy, Model, ModelConfig, Rounding};

fn main() -> kvfold::Result<()> {
    let model = Model::<f32>::synthetic(ModelConfig::with_dims(2, 4, 2, 32, 64, 256, 4096)?, 0, Rounding::Native)?;
    for distance in [1, 4, 15] {
        let trial = build_trial(&TrialParams {
            total_tokens: 2048,
            chunk_len: 128,
            placement: Placement::Distances(vec![distance]),
            seed: distance as u64,
            document: None,
        })?;
        for outcome in run_trial(&model, &trial, CachePolicy::FoldAccumulate, 30)? {
            println!(
                "distance {distance:>2}: key {:<8} gold {} resident {} extracted {:?} exact {}",
                outcome.needle.key,
                outcome.needle.value,
                outcome.proxy.resident,
                outcome.score.extracted,
                outcome.score.exact_match
            );
        }
    }
    Ok(())
}

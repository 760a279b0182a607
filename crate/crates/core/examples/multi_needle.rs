//! Several needles spread evenly through one haystack, each asked separately.

use kvfold::needle::{build_trial, run_trial, Placement, TrialParams};
use kvfold::{CachePolicy, Model, ModelConfig, Rounding};

fn main() -> kvfold::Result<()> {
    let model = Model::<f32>::synthetic(ModelConfig::with_dims(1, 2, 1, 16, 32, 256, 4096)?, 0, Rounding::Native)?;
    let trial = build_trial(&TrialParams {
        total_tokens: 2048,
        chunk_len: 128,
        placement: Placement::Evenly(4),
        seed: 11,
        document: None,
    })?;
    for policy in [CachePolicy::FoldAccumulate, CachePolicy::SinkWindow { n_sinks: 4, window: 508 }] {
        let outcomes = run_trial(&model, &trial, policy, 8)?;
        let resident: Vec<bool> = outcomes.iter().map(|o| o.proxy.resident).collect();
        let chunks: Vec<usize> = outcomes.iter().map(|o| o.needle.insert_chunk).collect();
        println!("{:<20} chunks {chunks:?} resident {resident:?}", policy.to_string());
    }
    Ok(())
}

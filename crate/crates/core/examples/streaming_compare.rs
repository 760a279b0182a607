//! Growing cache versus a sink-plus-window cache on the same haystacks.
//!
//! Prints which needles stay cached under each policy.

use kvfold::needle::{build_trial, retrievability_proxy, Placement, TrialParams};
use kvfold::{fold_run, CachePolicy, Model, ModelConfig, Rounding};

fn main() -> kvfold::Result<()> {
    let model = Model::<f32>::synthetic(ModelConfig::with_dims(1, 1, 1, 4, 8, 256, 8192)?, 0, Rounding::Native)?;
    let distances = [1, 7, 31, 63];
    let policies = [CachePolicy::FoldAccumulate, CachePolicy::SinkWindow { n_sinks: 4, window: 252 }];
    println!("policy               {distances:?}");
    for policy in policies {
        let mut row = vec![];
        for &d in &distances {
            let trial = build_trial(&TrialParams {
                total_tokens: 4096,
                chunk_len: 64,
                placement: Placement::Distances(vec![d]),
                seed: 0,
                document: None,
            })?;
            let (state, _) = fold_run(&model, &trial.data_chunks(), policy)?;
            let q = trial.question_chunk(0);
            row.push(retrievability_proxy(&state.cache, trial.needles[0].span.clone(), q.start_position, q.len()).resident);
        }
        println!("{:<20} {row:?}", policy.to_string());
    }
    Ok(())
}

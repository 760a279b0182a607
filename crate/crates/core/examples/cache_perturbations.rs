//! How far each cache policy moves the logits away from the exact fold.

use kvfold::{chunk_sequence, fold_run, CachePolicy, Model, ModelConfig, QuantBits, Rounding};

fn main() -> kvfold::Result<()> {
    let model = Model::<f64>::synthetic(ModelConfig::tiny(), 2, Rounding::Native)?;
    let tokens: Vec<u32> = (0..1024u32).map(|i| (i * 97 + 13) % 256).collect();
    let chunks = chunk_sequence(&tokens, 64)?;
    let (_, exact) = fold_run(&model, &chunks, CachePolicy::FoldAccumulate)?;

    let policies = [
        CachePolicy::QuantRoundTrip { bits: QuantBits::Int8 },
        CachePolicy::QuantRoundTrip { bits: QuantBits::Int4 },
        CachePolicy::UniformDecay { gamma: 0.99 },
        CachePolicy::AttentionPrune { keep: 256 },
        CachePolicy::SinkWindow { n_sinks: 4, window: 252 },
    ];
    for policy in policies {
        let (state, steps) = fold_run(&model, &chunks, policy)?;
        let last = steps.len() - 1;
        let diff = steps[last]
            .logits
            .data()
            .iter()
            .zip(exact[last].logits.data())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        println!("{:<18} cache rows {:>5}  max |logit diff| on last chunk {diff:.3e}", policy.to_string(), state.cache.len());
    }
    Ok(())
}

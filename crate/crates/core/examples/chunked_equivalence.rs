//! Folding a sequence chunk by chunk reproduces one unchunked causal pass.
//!
//! Runs the same tokens at several chunk sizes and prints the largest logit
//! difference against the full forward.

use kvfold::{chunk_sequence, fold_run, CachePolicy, Model, ModelConfig, Rounding};

fn main() -> kvfold::Result<()> {
    let config = ModelConfig::with_dims(2, 4, 2, 64, 128, 256, 1024)?;
    let model = Model::<f64>::synthetic(config, 7, Rounding::Native)?;
    let tokens: Vec<u32> = (0..512u32).map(|i| (i * 31 + 5) % 256).collect();

    let full = model.forward_chunk(&tokens, &model.empty_kv(), 0)?.logits;
    for c in [16, 64, 100, 512] {
        let chunks = chunk_sequence(&tokens, c)?;
        let (_, steps) = fold_run(&model, &chunks, CachePolicy::FoldAccumulate)?;
        let mut worst = 0.0f64;
        for (chunk, step) in chunks.iter().zip(&steps) {
            for i in 0..chunk.len() {
                let (a, b) = (step.logits.row(i), full.row(chunk.start_position + i));
                let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                worst = a.iter().zip(b).fold(worst, |m, (x, y)| m.max((x - y).abs() / scale));
            }
        }
        println!("C={c:>3}: {} chunks, max relative logit difference {worst:e}", chunks.len());
    }
    Ok(())
}

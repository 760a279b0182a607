//! The same fold in f64, f32 and emulated bf16, scored by mean NLL.

use kvfold::fold::{token_nll, SyntheticCorpus};
use kvfold::{chunk_sequence, fold_run, CachePolicy, Model, ModelConfig, PrecisionMode, Rounding, Scalar, Weights};

fn mean_nll<T: Scalar>(model: &Model<T>, tokens: &[u32]) -> kvfold::Result<f64> {
    let chunks = chunk_sequence(tokens, 64)?;
    let (_, steps) = fold_run(model, &chunks, CachePolicy::FoldAccumulate)?;
    let mut total = 0.0;
    for (chunk, step) in chunks.iter().zip(&steps) {
        for i in 0..chunk.len() {
            if let Some(&target) = tokens.get(chunk.start_position + i + 1) {
                total += token_nll(step.logits.row(i), target);
            }
        }
    }
    Ok(total / (tokens.len() - 1) as f64)
}

fn main() -> kvfold::Result<()> {
    let config = ModelConfig::tiny();
    let weights = Weights::<f64>::synthetic(&config, 9)?;
    let tokens = SyntheticCorpus::new(0).generate(512);
    let reference = mean_nll(&Model::new(config.clone(), weights.clone(), Rounding::Native)?, &tokens)?;
    for mode in [PrecisionMode::NativeF64, PrecisionMode::NativeF32, PrecisionMode::EmulatedBf16] {
        let nll = match mode {
            PrecisionMode::NativeF64 => reference,
            _ => mean_nll(&Model::new(config.clone(), weights.cast::<f32>(), mode.rounding())?, &tokens)?,
        };
        println!(
            "{:<14} mean NLL {nll:.6}  |diff| {:.2e}  tolerance {:e}",
            mode.name(),
            (nll - reference).abs(),
            mode.nll_tolerance()
        );
    }
    Ok(())
}

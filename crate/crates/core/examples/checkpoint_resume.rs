//! Saving the fold state to disk mid-run and resuming from it.

use kvfold::fold::{load_state, save_state};
use kvfold::{chunk_sequence, fold_run, CachePolicy, FoldState, Model, ModelConfig, Rounding};

fn main() -> kvfold::Result<()> {
    let model = Model::<f32>::synthetic(ModelConfig::tiny(), 4, Rounding::Native)?;
    let tokens: Vec<u32> = (0..768u32).map(|i| (i * 13) % 256).collect();
    let chunks = chunk_sequence(&tokens, 64)?;
    let policy = CachePolicy::SinkWindow { n_sinks: 4, window: 252 };
    let (whole, steps) = fold_run(&model, &chunks, policy)?;

    let path = std::env::temp_dir().join("kvfold-example.kvfs");
    let mut first = FoldState::new(&model, policy)?;
    first.run(&model, &chunks[..5])?;
    save_state(&path, &first)?;
    println!("saved after {} tokens ({} cached rows)", first.next_position(), first.cache.len());

    let mut resumed: FoldState<f32> = load_state(&path)?;
    let rest = resumed.run(&model, &chunks[5..])?;
    let same = rest.iter().zip(&steps[5..]).all(|(a, b)| a.logits == b.logits) && resumed == whole;
    println!("resumed run identical to uninterrupted run: {same}");
    std::fs::remove_file(&path)?;
    Ok(())
}

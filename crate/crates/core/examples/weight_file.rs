//! Writing a weight file, validating it and loading it back into a model.

use kvfold::model::file::{load_weights, save_weights, validate_weights};
use kvfold::{Model, ModelConfig, Rounding, Weights};

fn main() -> kvfold::Result<()> {
    let config = ModelConfig::tiny();
    let weights = Weights::<f32>::synthetic(&config, 21)?;
    let path = std::env::temp_dir().join("kvfold-example.kvfw");
    save_weights(&path, &config, &weights)?;

    let bytes = std::fs::read(&path)?;
    let (parsed, tensors) = validate_weights(&bytes)?;
    println!("{} bytes, {} tensors, {} layers", bytes.len(), tensors.len(), parsed.n_layers);
    for t in tensors.iter().take(4) {
        println!("  {:<28} {:?}", t.name, t.shape);
    }

    let (config, loaded) = load_weights::<f32>(&path)?;
    let model = Model::new(config, loaded, Rounding::Native)?;
    let out = model.forward_chunk(&[72, 105, 33], &model.empty_kv(), 0)?;
    println!("logits shape {:?}", out.logits.shape());
    std::fs::remove_file(&path)?;
    Ok(())
}

//! Per-depth drift and chunking advantage over synthetic windows.

use kvfold::fold::{IsolatedPositions, SyntheticCorpus};
use kvfold::metrics::{drift_advantage, plateau_stats, PLATEAU_START};
use kvfold::{eval_three_conditions, CachePolicy, Model, ModelConfig, Rounding};

fn main() -> kvfold::Result<()> {
    let model = Model::<f64>::synthetic(ModelConfig::tiny(), 1, Rounding::Native)?;
    let mut records = vec![];
    for window in 0..2 {
        let tokens = SyntheticCorpus::new(window as u64).generate(1024);
        records.extend(eval_three_conditions(
            &model,
            &tokens,
            64,
            window,
            IsolatedPositions::Local,
            CachePolicy::FoldAccumulate,
        )?);
    }
    let curve = drift_advantage(&records)?;
    print!("{}", curve.to_csv());
    let plateau = plateau_stats(&curve, PLATEAU_START)?;
    println!("plateau mean drift {:e}, span {:e}", plateau.plateau_mean, plateau.plateau_span);
    Ok(())
}

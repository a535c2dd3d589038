//! Save a trained model and load it back bit for bit.
//!
//! cargo run --release --example model_files

use leakguard::data::{standardize, synthetic_dataset, PreprocessStats, SyntheticSpec};
use leakguard::models::{probabilities, train_kind, Hyperparams, ModelKind, TrainedModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = synthetic_dataset(&SyntheticSpec {
        n_rows: 1000,
        seed: 5,
        ..SyntheticSpec::default()
    })?;
    let stats = PreprocessStats::fit(&ds)?;
    let batch = standardize(&ds, &stats)?;
    let hp = Hyperparams {
        epochs: 2,
        ..Hyperparams::default()
    };
    let mut model = train_kind(ModelKind::Adv, &batch, &hp, 5)?;
    model.meta.stats = Some(stats);
    model.meta.threshold = Some(0.5);

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("adv.json");
    model.save(&path)?;
    let back = TrainedModel::load(&path)?;
    let same = probabilities(&model, &batch.features)?
        .iter()
        .zip(probabilities(&back, &batch.features)?)
        .all(|(a, b)| a.to_bits() == b.to_bits());
    println!(
        "{} bytes, {} parameters, lambda {:?}, predictions identical: {same}",
        std::fs::metadata(&path)?.len(),
        back.param_count(),
        back.meta.lambda
    );
    Ok(())
}

//! Train Base, ADV and ADV_per classifiers on one synthetic split and compare them.
//!
//! cargo run --release --example train_task_models

use leakguard::data::{standardize, stratified_split, synthetic_dataset, PreprocessStats, SyntheticSpec};
use leakguard::models::{evaluate, train_kind, Hyperparams, ModelKind};

fn main() -> leakguard::Result<()> {
    let ds = synthetic_dataset(&SyntheticSpec {
        n_rows: 3000,
        seed: 1,
        ..SyntheticSpec::default()
    })?;
    let (train, test) = stratified_split(&ds, 0.2, 0)?;
    let stats = PreprocessStats::fit(&train)?;
    let (train, test) = (standardize(&train, &stats)?, standardize(&test, &stats)?);
    let hp = Hyperparams {
        epochs: 5,
        epochs_adv_per: 8,
        ..Hyperparams::default()
    };
    for kind in ModelKind::ALL {
        let mut model = train_kind(kind, &train, &hp, 1)?;
        // A fixed cut-off here; the CLI calibrates it by cross-validation.
        model.meta.threshold = Some(0.5);
        let m = evaluate(&model, &test)?;
        println!(
            "{:<8} AUC {:.4}  accuracy {:.4}",
            kind.display(),
            m.auc.unwrap_or(f64::NAN),
            m.accuracy.unwrap_or(f64::NAN)
        );
        print!("{}", model.meta.log.to_text());
    }
    Ok(())
}

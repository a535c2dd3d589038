//! Attack raw features and learned representations for the protected attributes.
//!
//! cargo run --release --example attribute_inference_attack

use leakguard::attack::{leakage_verdict, run_attack_pipeline, TaskModels, ThresholdMode};
use leakguard::data::{standardize, stratified_split, synthetic_dataset, PreprocessStats, SyntheticSpec};
use leakguard::models::{train_kind, Hyperparams, ModelKind};

fn main() -> leakguard::Result<()> {
    let ds = synthetic_dataset(&SyntheticSpec {
        n_rows: 3000,
        seed: 2,
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
    let base = train_kind(ModelKind::Base, &train, &hp, 2)?;
    let adv = train_kind(ModelKind::Adv, &train, &hp, 2)?;
    let adv_per = train_kind(ModelKind::AdvPer, &train, &hp, 2)?;
    let task = TaskModels {
        base: &base,
        adv: &adv,
        adv_per: &adv_per,
    };
    let suite = run_attack_pipeline(&train, &test, task, &hp, 2, ThresholdMode::Fixed(0.5))?;
    for (a, tr, te) in &suite.baselines {
        println!("majority share {:<9} TRAIN {tr:.3} TEST {te:.3}", a.name());
    }
    for r in &suite.reports {
        println!(
            "{:<16} {:<9} AUC {:.3} accuracy {:.3}  {:?}",
            r.source.tag(),
            r.attribute.name(),
            r.metrics.auc.unwrap_or(f64::NAN),
            r.metrics.accuracy.unwrap_or(f64::NAN),
            leakage_verdict(r)
        );
    }
    Ok(())
}

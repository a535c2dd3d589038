//! The full experiment driver as a library: data, training, external validation, reports.
//!
//! cargo run --release --example experiment_pipeline

use leakguard::experiment::{self, ExperimentConfig};
use leakguard::models::ModelKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut cfg = ExperimentConfig {
        out_dir: dir.path().to_path_buf(),
        seeds: vec![1],
        model_kinds: vec![ModelKind::Base, ModelKind::Adv],
        ..ExperimentConfig::default()
    };
    cfg.data.synthetic.n_rows = 1000;
    cfg.hyperparams.epochs = 3;
    cfg.hyperparams.cv_folds = 3;
    cfg.external.n_rows = 2000;
    cfg.validate()?;

    for f in experiment::cmd_gen_data(&cfg)?.files {
        println!("{:<5} {:>5} rows, prevalence {:.4}", f.name, f.rows, f.prevalence);
    }
    let train = experiment::cmd_train(&cfg)?;
    let external = experiment::cmd_external(&cfg)?;
    for m in [&train, &external] {
        for (stem, table) in experiment::tables(m) {
            println!("[{stem}]\n{}", table.to_text());
        }
    }
    // Every command leaves a manifest that reruns it exactly.
    let rerun = ExperimentConfig::load(&cfg.layout().manifest(experiment::Command::Train))?;
    println!("manifest reproduces the config: {}", rerun == cfg);
    Ok(())
}

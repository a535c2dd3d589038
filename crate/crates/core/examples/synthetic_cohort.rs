//! Generate a synthetic cohort, round-trip it through CSV and prepare model inputs.
//!
//! cargo run --release --example synthetic_cohort

use leakguard::data::{
    generate_synthetic, load_csv, prepare, standardize, stratified_split, subsample_balance, write_csv, Attribute,
    PreprocessStats, SyntheticSpec,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SyntheticSpec {
        n_rows: 4000,
        prevalence: 0.1,
        missing_rate: 0.02,
        seed: 3,
        ..SyntheticSpec::default()
    };
    let raw = generate_synthetic(&spec)?;
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("cohort.csv");
    write_csv(&path, &raw)?;
    let (ds, excluded) = prepare(&load_csv(&path)?)?;
    println!(
        "{} rows read, {} excluded, prevalence {:.3}",
        ds.len(),
        excluded.len(),
        ds.prevalence()
    );
    for a in Attribute::ALL {
        let ones = ds.attribute(a).iter().filter(|&&v| v == 1).count();
        println!("  {:<9} share of 1s {:.3}", a.name(), ones as f64 / ds.len() as f64);
    }

    let balanced = subsample_balance(&ds, 0.5, 3)?;
    let (train, test) = stratified_split(&balanced, 0.2, 0)?;
    println!(
        "balanced {} rows; TRAIN {} (prev {:.3}), TEST {} (prev {:.3})",
        balanced.len(),
        train.len(),
        train.prevalence(),
        test.len(),
        test.prevalence()
    );

    // Statistics come from TRAIN only and are reused unchanged for TEST.
    let stats = PreprocessStats::fit(&train)?;
    let (tr, te) = (standardize(&train, &stats)?, standardize(&test, &stats)?);
    println!(
        "model inputs: {}x{} and {}x{}",
        tr.len(),
        tr.feature_dim(),
        te.len(),
        te.feature_dim()
    );
    Ok(())
}

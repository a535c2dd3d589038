//! Train on one demographic subgroup, test on its complement, Base against ADV.
//!
//! cargo run --release --example subgroup_cross_test

use leakguard::crosstest::{generalizability_gap, run_crosstest, CrossTestCase};
use leakguard::data::{synthetic_dataset, SyntheticSpec};
use leakguard::models::Hyperparams;

fn main() -> leakguard::Result<()> {
    let ds = synthetic_dataset(&SyntheticSpec {
        n_rows: 2000,
        seed: 4,
        ..SyntheticSpec::default()
    })?;
    let hp = Hyperparams {
        epochs: 4,
        ..Hyperparams::default()
    };
    let mut results = Vec::new();
    for name in ["f2m", "o2y"] {
        let case = CrossTestCase::parse(name).expect("known case");
        let r = run_crosstest(case, &ds, &hp, 4)?;
        println!(
            "{name}: Base AUC {:.4}  ADV AUC {:.4}",
            r.base.auc.unwrap_or(f64::NAN),
            r.adv.auc.unwrap_or(f64::NAN)
        );
        results.push(r);
    }
    println!("largest |AUC gap| {:.4}", generalizability_gap(&results).max_abs);
    Ok(())
}

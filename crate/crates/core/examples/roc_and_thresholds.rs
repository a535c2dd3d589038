//! ROC/AUC, k-fold recall-band threshold calibration and the resulting metrics.
//!
//! cargo run --example roc_and_thresholds

use leakguard::metrics::{calibrate_threshold, evaluate_scores, roc_auc, stratified_kfold, FoldScores, RecallBand};

fn main() -> leakguard::Result<()> {
    let scores = [
        0.9, 0.8, 0.7, 0.6, 0.55, 0.54, 0.53, 0.52, 0.51, 0.505, 0.4, 0.39, 0.38, 0.37, 0.36, 0.35,
    ];
    let labels = [1, 1, 0, 1, 1, 1, 0, 0, 1, 0, 1, 0, 0, 1, 0, 0];
    let roc = roc_auc(&scores, &labels)?;
    println!("AUC {:.4} over {} ROC points", roc.auc, roc.points.len());

    let plan = stratified_kfold(&labels, 4, 11)?;
    let folds: Vec<FoldScores> = (0..4)
        .map(|f| {
            let (_, test) = plan.split(f);
            FoldScores {
                scores: test.iter().map(|&i| scores[i]).collect(),
                labels: test.iter().map(|&i| labels[i]).collect(),
            }
        })
        .collect();
    let cal = calibrate_threshold(&folds, RecallBand::default())?;
    println!(
        "threshold {} (recall {:.3}, specificity {:.3}, in band: {})",
        cal.threshold, cal.recall, cal.specificity, cal.in_band
    );

    let m = evaluate_scores(&scores, &labels, cal.threshold)?;
    for (name, v) in [
        "recall",
        "precision",
        "f1",
        "accuracy",
        "specificity",
        "ppv",
        "npv",
        "auc",
    ]
    .iter()
    .zip(m.columns())
    {
        println!("  {name:<11} {}", v.map_or("NA".into(), |v| format!("{v:.4}")));
    }
    Ok(())
}

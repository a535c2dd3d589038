//! FGSM perturbation of a hidden layer and one regularized training step.
//!
//! cargo run --release --example fgsm_regularization

use leakguard::adversarial::{fgsm_eta, fgsm_training_step, FgsmConfig};
use leakguard::nn::rng::{self, Stream};
use leakguard::nn::{Adam, LayerStack, Matrix, MlpOptions};

fn main() -> leakguard::Result<()> {
    let g = Matrix::from_rows(&[vec![0.3, -0.0001, 0.0, 2.0]]);
    let eta = fgsm_eta(&g, 0.05)?;
    println!("grad {:?} -> eta {:?}", g.as_slice(), eta.as_slice());

    let mut net = LayerStack::mlp(3, &[8, 8], MlpOptions::default(), 1)?;
    let cfg = FgsmConfig::default();
    println!(
        "epsilon {} alpha {} intercepts layer {} of {}",
        cfg.epsilon,
        cfg.alpha,
        cfg.intercept(&net)?,
        net.len()
    );
    let x = Matrix::from_rows(&[
        vec![0.1, 1.0, -0.5],
        vec![1.2, -0.3, 0.8],
        vec![-0.7, 0.4, 0.0],
        vec![0.9, 0.9, -1.1],
    ]);
    let y = [0.0, 1.0, 0.0, 1.0];
    let mut adam = Adam::new(&net);
    let mut masks = rng::stream(1, Stream::Dropout);
    for step in 0..5 {
        let s = fgsm_training_step(&mut net, &mut adam, &x, &y, &cfg, 0.01, &mut masks)?;
        println!(
            "step {step}: clean {:.4} perturbed {:.4} combined {:.4} |eta|max {}",
            s.clean_loss,
            s.adversarial_loss,
            s.combined(cfg.alpha),
            s.eta_max_abs
        );
    }
    Ok(())
}

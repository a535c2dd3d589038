//! The gradient reversal layer: identity going forward, `-lambda * g` going back.
//!
//! cargo run --example gradient_reversal

use leakguard::adversarial::{grl_backward, grl_forward, GrlConfig};
use leakguard::nn::Matrix;

fn main() -> leakguard::Result<()> {
    let h = Matrix::from_rows(&[vec![0.2, -1.0, 3.5], vec![0.0, 0.7, -0.1]]);
    let upstream = Matrix::from_rows(&[vec![1.0, -2.0, 0.5], vec![0.25, 0.0, -4.0]]);
    assert_eq!(grl_forward(&h), h);

    for lambda in [0.0, 1.0, GrlConfig::default().lambda] {
        let cfg = GrlConfig::new(lambda)?;
        let g = grl_backward(&upstream, cfg.lambda);
        println!("lambda {lambda}: {:?}", g.as_slice());
    }
    // The encoder receives the task gradient plus the reversed discriminator gradient, so
    // directions that help the discriminator are pushed the other way.
    let task = Matrix::from_rows(&[vec![0.5, 0.5, 0.5]]);
    let disc = Matrix::from_rows(&[vec![0.5, -0.1, 0.0]]);
    let mut total = task.clone();
    total.add_assign(&grl_backward(&disc, 1.0));
    println!(
        "task {:?} + reversed disc {:?} = {:?}",
        task.as_slice(),
        disc.as_slice(),
        total.as_slice()
    );

    assert!(GrlConfig::new(-1.0).is_err());
    Ok(())
}

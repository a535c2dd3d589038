//! Build a small MLP, verify its gradients numerically, then fit it with Adam.
//!
//! cargo run --release --example mlp_from_scratch

use leakguard::nn::gradcheck::check_gradients;
use leakguard::nn::rng::{self, Stream};
use leakguard::nn::{bce_loss, Adam, LayerStack, Matrix, MlpOptions, Mode};

fn main() -> leakguard::Result<()> {
    // XOR-like target on two inputs, noisy copies in the rest.
    let n = 256;
    let mut xs = Vec::with_capacity(n * 4);
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        let (a, b) = ((i % 2) as f64, ((i / 2) % 2) as f64);
        let jitter = ((i * 37 % 101) as f64 / 101.0 - 0.5) * 0.2;
        xs.extend([a + jitter, b - jitter, a * 0.5, jitter]);
        ys.push(f64::from(u8::from(a != b)));
    }
    let x = Matrix::from_vec(n, 4, xs);

    let opts = MlpOptions {
        dropout: 0.0,
        ..MlpOptions::default()
    };
    let mut net = LayerStack::mlp(4, &[16, 16], opts, 7)?;
    println!("{} layers, {} parameters", net.len(), net.param_count());

    let check = check_gradients(&net, &x.select_rows(&[0, 1, 2, 3, 4, 5]), &ys[..6], 1e-5, 1e-4)?;
    println!(
        "gradient check: {}/{} coordinates agree, worst relative error {:.2e}",
        check.passed, check.checked, check.max_rel_error
    );

    let mut adam = Adam::new(&net);
    let mut masks = rng::stream(7, Stream::Dropout);
    for epoch in 0..=200 {
        let acts = net.forward(&x, Mode::Train, &mut masks)?;
        let loss = bce_loss(&acts.probs(), &ys)?;
        net.backward(&acts, &loss.grad_column())?;
        adam.step(&mut net, 0.01)?;
        if epoch % 50 == 0 {
            println!("epoch {epoch:>3}  loss {:.4}", loss.loss);
        }
    }
    let probs = net.predict(&x)?;
    let correct = probs
        .iter()
        .zip(&ys)
        .filter(|(p, y)| (**p >= 0.5) == (**y == 1.0))
        .count();
    println!("training accuracy {:.3}", correct as f64 / n as f64);
    Ok(())
}

//! Fixed-value checks against hand computations and independent reference code.

mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use leakguard::attack::{attack_auc, train_attacker_with, Source, ThresholdMode};
use leakguard::data::{synthetic_dataset, Attribute, Batch, SyntheticSpec};
use leakguard::metrics::{evaluate_scores, roc_auc, stratified_kfold};
use leakguard::models::{apply_threshold, probabilities, train_base, Hyperparams};
use leakguard::nn::{bce_loss, Adam, Layer, LayerSpec, LayerStack, Matrix, Mode};

fn dense_params(layer: &Layer) -> (&[f64], &[f64]) {
    match layer {
        Layer::Dense { weight, bias } => (weight.values(), bias.values()),
        _ => panic!("not a dense layer"),
    }
}

/// `y = x Wᵀ + b` written out with loops.
fn affine(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(j, bj)| bj + (0..n_in).map(|i| x[i] * w[j * n_in + i]).sum::<f64>())
        .collect()
}

fn small_hp() -> Hyperparams {
    Hyperparams {
        hidden: vec![32, 32],
        epochs: 3,
        batch_size: 32,
        learning_rate: 0.002,
        ..Hyperparams::default()
    }
}

#[test]
fn two_layer_forward_matches_loops() {
    let mut stack = LayerStack::new(
        vec![
            LayerSpec::dense(3, 4),
            LayerSpec::relu(4),
            LayerSpec::dense(4, 1),
            LayerSpec::sigmoid_output(1),
        ],
        11,
    )
    .unwrap();
    // Non-zero biases so the bias path is exercised.
    for (k, p) in stack.params_mut().enumerate() {
        if p.name().ends_with("bias") {
            for (i, v) in p.values_mut().iter_mut().enumerate() {
                *v = 0.1 * (k + i) as f64 - 0.15;
            }
        }
    }
    let rows = [[0.3, -1.2, 2.0], [-0.7, 0.0, 0.4], [1.5, 2.5, -3.0]];
    let x = Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>());
    let got = stack.predict(&x).unwrap();
    let (w1, b1) = dense_params(&stack.layers()[0]);
    let (w2, b2) = dense_params(&stack.layers()[2]);
    for (r, g) in rows.iter().zip(got) {
        let h: Vec<f64> = affine(r, w1, b1).into_iter().map(|v| v.max(0.0)).collect();
        let z = affine(&h, w2, b2)[0];
        let want = 1.0 / (1.0 + (-z).exp());
        assert!((g - want).abs() <= 1e-10, "{g} vs {want}");
    }
}

#[test]
fn bce_matches_hand_value() {
    let out = bce_loss(&[0.9, 0.2], &[1.0, 0.0]).unwrap();
    assert!((out.loss - 0.164252).abs() < 1e-6, "{}", out.loss);
    let want = [-1.0 / 0.9 / 2.0, 1.0 / 0.8 / 2.0];
    for (g, w) in out.grad.iter().zip(want) {
        assert!((g - w).abs() < 1e-12);
    }
}

#[test]
fn adam_matches_a_scalar_trace() {
    let mut stack = LayerStack::new(vec![LayerSpec::dense(1, 1), LayerSpec::sigmoid_output(1)], 5).unwrap();
    let start: Vec<f64> = stack.params().flat_map(|p| p.values().to_vec()).collect();
    let mut adam = Adam::new(&stack);
    let grads = [0.5, -0.25, 2.0, 0.0];
    let lr = 0.01;
    let x = Matrix::column(&[1.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut want = start.clone();
    let (mut m, mut v) = (vec![0.0; want.len()], vec![0.0; want.len()]);
    for (t, g) in grads.iter().enumerate() {
        let acts = stack.forward(&x, Mode::Train, &mut rng).unwrap();
        stack.backward(&acts, &Matrix::column(&[1.0])).unwrap();
        for p in stack.params_mut() {
            p.grad_mut().iter_mut().for_each(|v| *v = *g);
        }
        adam.step(&mut stack, lr).unwrap();

        let t = (t + 1) as i32;
        for i in 0..want.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let mh = m[i] / (1.0 - b1.powi(t));
            let vh = v[i] / (1.0 - b2.powi(t));
            want[i] -= lr * mh / (vh.sqrt() + eps);
        }
        let got: Vec<f64> = stack.params().flat_map(|p| p.values().to_vec()).collect();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-10, "step {t}: {a} vs {b}");
        }
    }
    // The first step moves every parameter by exactly the learning rate.
    let after_one = start[0] - lr * 0.5 / (0.5 + eps);
    assert!((after_one - (start[0] - lr)).abs() < 1e-9);
}

#[test]
fn kfold_sizes_and_balance() {
    let labels: Vec<u8> = (0..103).map(|i| u8::from(i % 3 == 0)).collect();
    let pos = labels.iter().filter(|&&y| y == 1).count();
    for k in [3, 4] {
        let plan = stratified_kfold(&labels, k, 42).unwrap();
        let mut sizes = Vec::new();
        for f in 0..k {
            let (_, test) = plan.split(f);
            let p = test.iter().filter(|&&i| labels[i] == 1).count();
            assert!(p == pos / k || p == pos / k + 1);
            sizes.push(test.len());
        }
        assert_eq!(sizes.iter().sum::<usize>(), labels.len());
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 2);
    }
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn generator_without_leakage_has_no_attribute_signal() {
    let spec = SyntheticSpec {
        leakage_strength: [0.0; 3],
        seed: 3,
        ..SyntheticSpec::default()
    };
    let (train, _) = common::synthetic_split(&spec, 0);
    for a in Attribute::ALL {
        let z = train.attribute(a);
        for j in 0..train.feature_dim() {
            let col: Vec<f64> = (0..train.len()).map(|i| train.features.get(i, j)).collect();
            let r = correlation(&col, &z);
            assert!(r.abs() <= 0.05, "{} vs feature {j}: {r}", a.name());
        }
    }
}

#[test]
fn generator_hits_attribute_priors() {
    let spec = SyntheticSpec {
        seed: 4,
        ..SyntheticSpec::default()
    };
    let ds = synthetic_dataset(&spec).unwrap();
    for a in Attribute::ALL {
        let z = ds.attribute(a);
        let share = z.iter().filter(|&&v| v == 1).count() as f64 / z.len() as f64;
        let prior = spec.attr_priors[a.index()];
        assert!((share - prior).abs() <= 0.02, "{}: {share} vs {prior}", a.name());
    }
    assert!((ds.prevalence() - spec.prevalence).abs() < 1e-3);
}

/// AUC of a difference-of-means direction fitted on TRAIN and scored on TEST.
fn linear_probe_auc(train: &Batch, test: &Batch, target: impl Fn(&Batch) -> Vec<f64>) -> f64 {
    let z = target(train);
    let d = train.feature_dim();
    let mut dir = vec![0.0; d];
    let (n1, n0) = (z.iter().sum::<f64>(), z.iter().map(|v| 1.0 - v).sum::<f64>());
    for (i, zi) in z.iter().enumerate() {
        let w = if *zi == 1.0 { 1.0 / n1 } else { -1.0 / n0 };
        for (dj, x) in dir.iter_mut().zip(train.features.row(i)) {
            *dj += w * x;
        }
    }
    let scores: Vec<f64> = (0..test.len())
        .map(|i| test.features.row(i).iter().zip(&dir).map(|(x, w)| x * w).sum())
        .collect();
    let labels: Vec<u8> = target(test).iter().map(|&v| v as u8).collect();
    roc_auc(&scores, &labels).unwrap().auc
}

#[test]
fn probe_auc_grows_with_leakage() {
    let mut last = 0.0;
    for s in [0.0, 0.5, 1.0, 2.0] {
        let spec = SyntheticSpec {
            n_rows: 5000,
            leakage_strength: [s; 3],
            seed: 8,
            ..SyntheticSpec::default()
        };
        let (train, test) = common::synthetic_split(&spec, 1);
        let aucs: Vec<f64> = Attribute::ALL
            .iter()
            .map(|&a| linear_probe_auc(&train, &test, |b| b.attribute(a)))
            .collect();
        let mean = aucs.iter().sum::<f64>() / 3.0;
        assert!(mean > last, "leakage {s}: probe AUC {mean} not above {last}");
        if s == 0.0 {
            assert!((mean - 0.5).abs() <= 0.05, "no-leak probe AUC {mean}");
        }
        last = mean;
    }
}

#[test]
fn base_model_is_at_chance_without_label_signal() {
    let spec = SyntheticSpec {
        n_rows: 3000,
        label_signal: 0.0,
        seed: 12,
        ..SyntheticSpec::default()
    };
    let (train, test) = common::synthetic_split(&spec, 0);
    let model = train_base(&train, &small_hp(), 1).unwrap();
    let probs = probabilities(&model, &test.features).unwrap();
    let auc = roc_auc(&probs, &test.labels_u8()).unwrap().auc;
    assert!((auc - 0.5).abs() <= 0.05, "AUC {auc}");
}

/// Features are Gaussian noise; `planted` decides the age attribute from them, or not at all.
fn planted_batch(n: usize, seed: u64, planted: bool) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 6;
    let mut feats = Vec::with_capacity(n * d);
    let mut prot = Vec::with_capacity(n * 3);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..d)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let age = if planted {
            f64::from(u8::from(row[0] + row[1] > 0.0))
        } else {
            f64::from(u8::from(rng.random_bool(0.5)))
        };
        prot.extend([age, f64::from(u8::from(rng.random_bool(0.5))), 1.0]);
        labels.push(f64::from(u8::from(rng.random_bool(0.5))));
        feats.extend(row);
    }
    Batch::new(Matrix::from_vec(n, d, feats), labels, Matrix::from_vec(n, 3, prot)).unwrap()
}

#[test]
fn attacker_recovers_a_planted_rule() {
    let train = planted_batch(3000, 1, true);
    let test = planted_batch(1000, 2, true);
    let att = train_attacker_with(
        &train,
        Attribute::Age,
        Source::Raw,
        &small_hp(),
        3,
        ThresholdMode::Fixed(0.5),
    )
    .unwrap();
    let probs = probabilities(&att.model, &test.features).unwrap();
    let z: Vec<u8> = test.attribute(Attribute::Age).iter().map(|&v| v as u8).collect();
    let m = evaluate_scores(&probs, &z, 0.5).unwrap();
    assert!(m.accuracy.unwrap() >= 0.95, "{:?}", m.accuracy);
}

#[test]
fn attacker_is_at_chance_on_an_independent_attribute() {
    let train = planted_batch(3000, 4, false);
    let test = planted_batch(2000, 5, false);
    let att = train_attacker_with(
        &train,
        Attribute::Age,
        Source::Raw,
        &small_hp(),
        6,
        ThresholdMode::Fixed(0.5),
    )
    .unwrap();
    let auc = attack_auc(&att, &test, Source::Raw).unwrap();
    assert!((auc - 0.5).abs() <= 0.05, "AUC {auc}");
}

#[test]
fn calibrated_threshold_splits_nearby_scores() {
    assert_eq!(apply_threshold(&[0.10, 0.20], 0.1551), vec![0, 1]);
    assert_eq!(apply_threshold(&[0.1551], 0.1551), vec![1]);
}

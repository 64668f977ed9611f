use isda_core::linalg::{Matrix, SymMatrix};
use isda_core::loss::{
    adjusted_logits, cross_entropy_backward, cross_entropy_forward, isda_loss_backward, isda_loss_forward,
};
use isda_core::oracle::{finite_difference_gradients, random_instance, random_psd, Gradients};
use isda_core::rng::seeded_rng;
use isda_core::{ClassifierHead, FeatureBatch};

const LAMBDAS: [f64; 5] = [0.0, 0.1, 0.5, 1.0, 5.0];

/// Softmax cross-entropy from scratch, summing in the plain order.
fn reference_ce(head: &ClassifierHead, batch: &FeatureBatch) -> (f64, Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>) {
    let (c, a) = (head.num_classes(), head.feature_dim());
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut gw = vec![vec![0.0; a]; c];
    let mut gb = vec![0.0; c];
    let mut ga = Vec::new();
    for (x, y) in batch.iter() {
        let z: Vec<f64> = (0..c)
            .map(|j| (0..a).map(|k| head.weights().get(j, k) * x[k]).sum::<f64>() + head.bias()[j])
            .collect();
        let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = z.iter().map(|v| (v - zmax).exp()).sum();
        loss += denom.ln() - (z[y] - zmax);
        let mut g_a = vec![0.0; a];
        for j in 0..c {
            let g = (z[j] - zmax).exp() / denom - if j == y { 1.0 } else { 0.0 };
            gb[j] += g / n;
            for k in 0..a {
                gw[j][k] += g * x[k] / n;
                g_a[k] += g * head.weights().get(j, k) / n;
            }
        }
        ga.push(g_a);
    }
    (loss / n, gw, gb, ga)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

#[test]
fn finite_differences_agree_on_random_instances() {
    let mut worst = 0.0f64;
    for seed in 0..120u64 {
        let inst = random_instance(seed, 16, 8, 4);
        let lambda = LAMBDAS[seed as usize % LAMBDAS.len()];
        let analytic = isda_loss_backward(&inst.head, &inst.batch, lambda, &inst.covariances).unwrap();
        let fd = finite_difference_gradients(&inst.head, &inst.batch, lambda, &inst.covariances, 1e-5).unwrap();
        let err = Gradients::from(&analytic).max_relative_error(&fd);
        assert!(err <= 1e-6, "seed {seed} lambda {lambda}: relative error {err}");
        worst = worst.max(err);
    }
    println!("worst relative error {worst:e}");
}

#[test]
fn bound_dominates_cross_entropy_and_grows_with_lambda() {
    for seed in 0..150u64 {
        let inst = random_instance(1000 + seed, 8, 6, 6);
        let ce = cross_entropy_forward(&inst.head, &inst.batch).unwrap();
        let mut prev = ce;
        for &lambda in &[0.0, 0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0] {
            let l = isda_loss_forward(&inst.head, &inst.batch, lambda, &inst.covariances).unwrap();
            assert!(l >= ce, "seed {seed}: {l} < CE {ce} at lambda {lambda}");
            assert!(l >= prev, "seed {seed}: loss fell from {prev} to {l} at lambda {lambda}");
            prev = l;
        }
    }
}

#[test]
fn shifting_every_bias_leaves_the_loss_unchanged() {
    for seed in 0..50u64 {
        let inst = random_instance(2000 + seed, 8, 6, 5);
        let base = isda_loss_forward(&inst.head, &inst.batch, 0.7, &inst.covariances).unwrap();
        let mut shifted = inst.head.clone();
        shifted.bias_mut().iter_mut().for_each(|b| *b += 3.25);
        let moved = isda_loss_forward(&shifted, &inst.batch, 0.7, &inst.covariances).unwrap();
        assert!(close(base, moved, 1e-12), "{base} vs {moved}");
    }
}

#[test]
fn zero_lambda_matches_reference_cross_entropy() {
    for seed in 0..60u64 {
        let inst = random_instance(3000 + seed, 10, 6, 8);
        let (loss, gw, gb, ga) = reference_ce(&inst.head, &inst.batch);
        let r = isda_loss_backward(&inst.head, &inst.batch, 0.0, &inst.covariances).unwrap();
        let ce = cross_entropy_backward(&inst.head, &inst.batch).unwrap();
        assert!(close(r.loss, loss, 1e-12), "loss {} vs {}", r.loss, loss);
        for j in 0..inst.head.num_classes() {
            assert!(close(r.grad_bias[j], gb[j], 1e-12) || (r.grad_bias[j] - gb[j]).abs() < 1e-15);
            for (k, &g) in gw[j].iter().enumerate() {
                let v = r.grad_weights.get(j, k);
                assert!(close(v, g, 1e-12) || (v - g).abs() < 1e-15, "w[{j}][{k}] {v} vs {g}");
            }
        }
        for (i, row) in ga.iter().enumerate() {
            for (k, &g) in row.iter().enumerate() {
                let v = r.grad_features.get(i, k);
                assert!(close(v, g, 1e-12) || (v - g).abs() < 1e-15, "a[{i}][{k}] {v} vs {g}");
            }
        }
        // the dedicated cross-entropy entry point is the same computation
        assert_eq!(ce.loss.to_bits(), r.loss.to_bits());
        assert_eq!(ce.grad_weights, r.grad_weights);
        assert_eq!(ce.grad_bias, r.grad_bias);
        assert_eq!(ce.grad_features, r.grad_features);
    }
}

#[test]
fn forward_matches_term_by_term_evaluation() {
    // A=4, C=3: every quadratic term spelled out as a double sum.
    let mut rng = seeded_rng(44);
    let inst = random_instance(44, 4, 3, 6);
    let (c, a) = (inst.head.num_classes(), inst.head.feature_dim());
    let covs: Vec<SymMatrix> = (0..c).map(|_| random_psd(&mut rng, a, a, 1.0)).collect();
    let lambda = 0.8;
    let mut total = 0.0;
    for (x, y) in inst.batch.iter() {
        let mut z = vec![0.0; c];
        for j in 0..c {
            let mut s = inst.head.bias()[j];
            for k in 0..a {
                s += inst.head.weights().get(j, k) * x[k];
            }
            let mut q = 0.0;
            for p in 0..a {
                for r in 0..a {
                    let dp = inst.head.weights().get(j, p) - inst.head.weights().get(y, p);
                    let dr = inst.head.weights().get(j, r) - inst.head.weights().get(y, r);
                    q += dp * covs[y].get(p, r) * dr;
                }
            }
            z[j] = s + 0.5 * lambda * q;
        }
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        total += -(z[y] - m) + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    }
    let expected = total / inst.batch.len() as f64;
    let got = isda_loss_forward(&inst.head, &inst.batch, lambda, &covs).unwrap();
    assert!(close(got, expected, 1e-12), "{got} vs {expected}");
}

#[test]
fn adjusted_logits_hand_example() {
    let head = ClassifierHead::new(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(), vec![0.0; 2]).unwrap();
    let z = adjusted_logits(&head, &[1.0, 0.0], 0, 1.0, &SymMatrix::identity(2)).unwrap();
    assert_eq!(z, vec![1.0, 1.0]);
    let batch = FeatureBatch::from_rows(&[vec![1.0, 0.0]], vec![0]).unwrap();
    let covs = vec![SymMatrix::identity(2); 2];
    let l = isda_loss_forward(&head, &batch, 1.0, &covs).unwrap();
    assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
}

#[test]
fn true_class_logit_is_never_adjusted() {
    for seed in 0..30u64 {
        let inst = random_instance(4000 + seed, 6, 5, 3);
        for (x, y) in inst.batch.iter() {
            let plain = inst.head.logits(x).unwrap();
            let adj = adjusted_logits(&inst.head, x, y, 3.0, &inst.covariances[y]).unwrap();
            assert_eq!(adj[y].to_bits(), plain[y].to_bits());
            for j in 0..plain.len() {
                assert!(adj[j] >= plain[j]);
            }
        }
    }
}

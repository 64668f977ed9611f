mod common;

use common::gaussian;
use isda_core::linalg::{Matrix, SymMatrix};
use isda_core::loss::{isda_loss_backward, isda_loss_forward};
use isda_core::model::{init_network, MlpNetwork};
use isda_core::oracle::{random_psd, relative_error};
use isda_core::rng::seeded_rng;
use isda_core::{ClassifierHead, FeatureBatch};
use rand::Rng;

fn loss_of(net: &MlpNetwork, head: &ClassifierHead, x: &Matrix, y: &[usize], lambda: f64, covs: &[SymMatrix]) -> f64 {
    let feats = net.features(x).unwrap();
    let batch = FeatureBatch::new(feats, y.to_vec()).unwrap();
    isda_loss_forward(head, &batch, lambda, covs).unwrap()
}

#[test]
fn network_gradients_match_finite_differences() {
    let h = 1e-5;
    let mut worst = 0.0f64;
    for seed in 0..24u64 {
        let mut rng = seeded_rng(seed);
        let mut net = init_network(&[2, 4, 3], seed).unwrap();
        let head = ClassifierHead::init(3, 3, seed + 100).unwrap();
        let x = Matrix::from_vec(5, 2, (0..10).map(|_| gaussian(&mut rng)).collect()).unwrap();
        let y: Vec<usize> = (0..5).map(|_| rng.gen_range(0..3)).collect();
        let covs: Vec<SymMatrix> = (0..3).map(|_| random_psd(&mut rng, 3, 3, 0.5)).collect();
        let lambda = [0.0, 0.5, 1.0, 2.0][seed as usize % 4];

        let (feats, trace) = net.forward(&x).unwrap();
        let batch = FeatureBatch::new(feats, y.clone()).unwrap();
        let r = isda_loss_backward(&head, &batch, lambda, &covs).unwrap();
        let grads = net.backward(&trace, &r.grad_features).unwrap();

        for l in 0..net.layers().len() {
            for idx in 0..net.layers()[l].weights.as_slice().len() {
                let orig = net.layers()[l].weights.as_slice()[idx];
                net.layers_mut()[l].weights.as_mut_slice()[idx] = orig + h;
                let plus = loss_of(&net, &head, &x, &y, lambda, &covs);
                net.layers_mut()[l].weights.as_mut_slice()[idx] = orig - h;
                let minus = loss_of(&net, &head, &x, &y, lambda, &covs);
                net.layers_mut()[l].weights.as_mut_slice()[idx] = orig;
                let fd = (plus - minus) / (2.0 * h);
                let err = relative_error(grads[l].weights.as_slice()[idx], fd);
                assert!(err <= 1e-6, "seed {seed} layer {l} weight {idx}: {err}");
                worst = worst.max(err);
            }
            for idx in 0..net.layers()[l].bias.len() {
                let orig = net.layers()[l].bias[idx];
                net.layers_mut()[l].bias[idx] = orig + h;
                let plus = loss_of(&net, &head, &x, &y, lambda, &covs);
                net.layers_mut()[l].bias[idx] = orig - h;
                let minus = loss_of(&net, &head, &x, &y, lambda, &covs);
                net.layers_mut()[l].bias[idx] = orig;
                let fd = (plus - minus) / (2.0 * h);
                let err = relative_error(grads[l].bias[idx], fd);
                assert!(err <= 1e-6, "seed {seed} layer {l} bias {idx}: {err}");
                worst = worst.max(err);
            }
        }
    }
    println!("worst relative error {worst:e}");
}

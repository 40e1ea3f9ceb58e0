//! Backpropagation oracle: every analytic gradient must match central finite
//! differences on a spread of random architectures, batch norm included.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use skymap_core::nn::{mse, mse_gradient, Activation, LayerSpec, Matrix, Network};

const FD_STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-5;

fn random_architecture(rng: &mut ChaCha12Rng, force_batch_norm: bool) -> Vec<LayerSpec> {
    let depth = rng.gen_range(1..=3);
    let mut dims = Vec::with_capacity(depth + 1);
    for _ in 0..=depth {
        dims.push(rng.gen_range(2..=6));
    }
    let activations = [
        Activation::Identity,
        Activation::Relu,
        Activation::Tanh,
        Activation::Sigmoid,
    ];
    (0..depth)
        .map(|i| {
            let mut spec = LayerSpec::new(
                dims[i],
                dims[i + 1],
                activations[rng.gen_range(0..activations.len())],
            );
            if (force_batch_norm && i == 0) || rng.gen_bool(0.4) {
                spec = spec.with_batch_norm();
            }
            spec
        })
        .collect()
}

fn batch_loss(net: &Network, x: &Matrix, target: &Matrix) -> f64 {
    mse(net.forward_train(x).output(), target)
}

fn check_network(net: &Network, x: &Matrix, target: &Matrix) -> (usize, f64) {
    let cache = net.forward_train(x);
    let (grads, _) = net.backward(&cache, &mse_gradient(cache.output(), target));
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();

    let mut checked = 0;
    let mut worst = 0.0f64;
    for (group, group_grads) in analytic.iter().enumerate() {
        for idx in 0..group_grads.len() {
            let mut plus = net.clone();
            plus.param_slices_mut()[group][idx] += FD_STEP;
            let mut minus = net.clone();
            minus.param_slices_mut()[group][idx] -= FD_STEP;
            let fd = (batch_loss(&plus, x, target) - batch_loss(&minus, x, target))
                / (2.0 * FD_STEP);
            let a = group_grads[idx];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(0.1);
            assert!(
                rel < REL_TOL,
                "group {group} param {idx}: analytic {a} vs finite difference {fd} (rel {rel:.3e})"
            );
            worst = worst.max(rel);
            checked += 1;
        }
    }
    (checked, worst)
}

#[test]
fn backprop_matches_finite_differences_on_random_architectures() {
    let mut rng = ChaCha12Rng::seed_from_u64(20240817);
    let mut total_params = 0;
    let mut worst = 0.0f64;
    let mut with_bn = 0;
    for case in 0..24 {
        let force_bn = case % 3 == 0;
        let specs = random_architecture(&mut rng, force_bn);
        if specs.iter().any(|s| s.batch_norm) {
            with_bn += 1;
        }
        let net = Network::new(&specs, rng.gen());
        let batch = rng.gen_range(2..=5);
        let x = Matrix::from_vec(
            batch,
            specs[0].input,
            (0..batch * specs[0].input)
                .map(|_| rng.gen_range(-1.5..1.5))
                .collect(),
        );
        let out_dim = specs.last().unwrap().output;
        let target = Matrix::from_vec(
            batch,
            out_dim,
            (0..batch * out_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        let (checked, w) = check_network(&net, &x, &target);
        total_params += checked;
        worst = worst.max(w);
    }
    assert!(with_bn >= 8, "batch norm must be exercised, got {with_bn}");
    println!("gradient check: {total_params} parameters over 24 architectures, worst rel err {worst:.3e}");
}

#[test]
fn backprop_through_deep_batch_norm_stack() {
    // A fixed deeper case mirroring the CKM encoder shape.
    let specs = [
        LayerSpec::new(9, 8, Activation::Relu).with_batch_norm(),
        LayerSpec::new(8, 6, Activation::Tanh).with_batch_norm(),
        LayerSpec::new(6, 1, Activation::Identity),
    ];
    let net = Network::new(&specs, 4242);
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let x = Matrix::from_vec(4, 9, (0..36).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let target = Matrix::from_vec(4, 1, (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let (checked, worst) = check_network(&net, &x, &target);
    println!("deep batch-norm stack: {checked} parameters, worst rel err {worst:.3e}");
}

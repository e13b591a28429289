//! Reverse-mode gradients against central finite differences.

use ebscreen_core::nn::{Activation, DenseLayer, Network};
use ebscreen_core::rng::rng_from_seed;
use ndarray::Array2;
use rand::Rng;

const H: f64 = 1e-5;

/// Relative error with a small absolute floor so vanishing gradients do not
/// blow the ratio up.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Random member of the generator/discriminator family: two input branches
/// of ELU layers, concatenation, an ELU trunk and a scalar head.
fn random_network<R: Rng>(rng: &mut R) -> Network {
    let feature_dim = rng.random_range(1..=8);
    let side_dim = rng.random_range(1..=2);
    let branch_width = *[10, 25, 50, 100].get(rng.random_range(0..4)).unwrap();
    let trunk_width = *[8, 20, 40].get(rng.random_range(0..3)).unwrap();
    let depth = rng.random_range(1..=3);
    let head = if rng.random_bool(0.5) {
        Activation::Sigmoid
    } else {
        Activation::Relu
    };
    let mut trunk = vec![DenseLayer::glorot(
        2 * branch_width,
        trunk_width,
        Activation::Elu,
        rng,
    )];
    for _ in 1..depth {
        trunk.push(DenseLayer::glorot(
            trunk_width,
            trunk_width,
            Activation::Elu,
            rng,
        ));
    }
    let mut out = DenseLayer::glorot(trunk_width, 1, head, rng);
    // keep a ReLU head away from its kink so finite differences are valid
    if head == Activation::Relu {
        out.biases[0] = 3.0;
    }
    trunk.push(out);
    let mut branch = |d| {
        let mut l = DenseLayer::glorot(d, branch_width, Activation::Elu, rng);
        l.biases.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        vec![l]
    };
    let branches = vec![branch(feature_dim), branch(side_dim)];
    Network::new(vec![feature_dim, side_dim], branches, trunk).unwrap()
}

/// Scalar objective `sum_ij c_ij out_ij`.
fn objective(net: &Network, inputs: &[Array2<f64>], weights: &Array2<f64>) -> f64 {
    let views: Vec<_> = inputs.iter().map(|a| a.view()).collect();
    (&net.predict(&views).unwrap() * weights).sum()
}

fn perturbed(net: &Network, layer: usize, idx: Param, delta: f64) -> Network {
    let mut branches: Vec<Vec<DenseLayer>> = net.branches().to_vec();
    let mut trunk = net.trunk().to_vec();
    let mut all: Vec<&mut DenseLayer> = branches
        .iter_mut()
        .flatten()
        .chain(trunk.iter_mut())
        .collect();
    match idx {
        Param::Weight(r, c) => all[layer].weights[[r, c]] += delta,
        Param::Bias(r) => all[layer].biases[r] += delta,
    }
    Network::new(net.input_dims().to_vec(), branches, trunk).unwrap()
}

#[derive(Clone, Copy)]
enum Param {
    Weight(usize, usize),
    Bias(usize),
}

/// Max relative error over sampled parameters and every input coordinate.
fn check_network(seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let net = random_network(&mut rng);
    let batch = 3;
    let inputs: Vec<Array2<f64>> = net
        .input_dims()
        .iter()
        .map(|&d| Array2::from_shape_simple_fn((batch, d), || rng.random_range(-1.0..1.0)))
        .collect();
    let weights = Array2::from_shape_simple_fn((batch, 1), || rng.random_range(-1.0..1.0));

    let views: Vec<_> = inputs.iter().map(|a| a.view()).collect();
    let (_, tape) = net.forward(&views).unwrap();
    let bp = net.backward(&tape, weights.view()).unwrap();

    let mut worst: f64 = 0.0;
    let layers: Vec<&DenseLayer> = net.layers().collect();
    for (li, layer) in layers.iter().enumerate() {
        let mut params = vec![];
        for r in 0..layer.out_dim() {
            params.push(Param::Bias(r));
        }
        for _ in 0..40 {
            params.push(Param::Weight(
                rng.random_range(0..layer.out_dim()),
                rng.random_range(0..layer.in_dim()),
            ));
        }
        for p in params.into_iter().take(60) {
            let up = objective(&perturbed(&net, li, p, H), &inputs, &weights);
            let dn = objective(&perturbed(&net, li, p, -H), &inputs, &weights);
            let fd = (up - dn) / (2.0 * H);
            let analytic = match p {
                Param::Weight(r, c) => bp.params.layers[li].weights[[r, c]],
                Param::Bias(r) => bp.params.layers[li].biases[r],
            };
            worst = worst.max(rel_err(analytic, fd));
        }
    }
    for (k, x) in inputs.iter().enumerate() {
        for idx in ndarray::indices(x.dim()) {
            let mut up = inputs.clone();
            let mut dn = inputs.clone();
            up[k][idx] += H;
            dn[k][idx] -= H;
            let fd = (objective(&net, &up, &weights) - objective(&net, &dn, &weights)) / (2.0 * H);
            worst = worst.max(rel_err(bp.inputs[k][idx], fd));
        }
    }
    worst
}

#[test]
fn gradients_match_finite_differences_on_fifty_networks() {
    let worst = (0..50).map(check_network).fold(0.0, f64::max);
    assert!(worst < 1e-4, "max relative error {worst:e}");
}

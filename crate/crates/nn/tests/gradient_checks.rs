//! Central finite-difference checks (ε = 1e-5, f64) for every differentiable op.

use csi2video_nn::gradcheck::{op_suite, random_tensor};
use csi2video_nn::{Conv2d, Graph, ParamSet, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;
const SEEDS: u64 = 20;

#[test]
fn every_op_matches_finite_differences() {
    for seed in 0..SEEDS {
        for (name, err) in op_suite(seed).unwrap() {
            assert!(err < TOL, "{name}: seed {seed} max relative error {err:e}");
        }
    }
}

#[test]
fn forward_and_backward_are_bitwise_deterministic() {
    let run_once = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut params = ParamSet::new();
        let conv = Conv2d::new("c", 3, 4, 3, 2);
        conv.init(&mut params, &mut rng).unwrap();
        let x = random_tensor(&mut rng, &[2, 3, 9, 7]);
        let mut g = Graph::new();
        let xv = g.input(x);
        let y = conv.forward(&mut g, &params, xv).unwrap();
        let y = g.relu(y);
        let target = Tensor::zeros(g.value(y).shape());
        let weight = Tensor::full(g.value(y).shape(), 1.0);
        let l = g.weighted_sq_error(y, &target, &weight).unwrap();
        g.backward(l).unwrap();
        (g.value(l).clone(), g.param_grads().unwrap())
    };
    let (l1, g1) = run_once();
    let (l2, g2) = run_once();
    assert_eq!(l1.data()[0].to_bits(), l2.data()[0].to_bits());
    assert_eq!(g1, g2);
}

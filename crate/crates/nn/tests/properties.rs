use csi2video_nn::gradcheck::random_tensor;
use csi2video_nn::{
    adam_step, checkpoint, AdamConfig, AdamState, Graph, LrSchedule, ParamSet, Tensor,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn checkpoint_file_round_trip_is_bit_exact(seed in any::<u64>(), cout in 1usize..5, cin in 1usize..4, k in 1usize..4) {
        let mut r = rng(seed);
        let mut p = ParamSet::new();
        p.init_conv("a", cout, cin, k, &mut r).unwrap();
        p.insert("extra", random_tensor(&mut r, &[3, 2])).unwrap();
        let mut g = p.clone();
        g.scale(0.7);
        let mut s = AdamState::new();
        adam_step(&mut p, &g, &mut s, 1e-3, &AdamConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        checkpoint::save(&path, &p, Some(&s)).unwrap();
        let (p2, s2) = checkpoint::load(&path).unwrap();
        prop_assert_eq!(&p2, &p);
        prop_assert_eq!(s2.as_ref(), Some(&s));
        prop_assert_eq!(std::fs::read(&path).unwrap(), checkpoint::encode(&p2, s2.as_ref()));
    }

    #[test]
    fn conv2d_without_bias_is_linear(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0, stride in 1usize..3) {
        let mut r = rng(seed);
        let x = random_tensor(&mut r, &[2, 3, 7, 6]);
        let y = random_tensor(&mut r, &[2, 3, 7, 6]);
        let w = random_tensor(&mut r, &[4, 3, 3, 3]);
        let conv = |input: Tensor| {
            let mut g = Graph::new();
            let (xi, wi, bi) = (g.input(input), g.input(w.clone()), g.input(Tensor::zeros(&[4])));
            let out = g.conv2d(xi, wi, bi, stride, 1).unwrap();
            g.value(out).clone()
        };
        let mix: Vec<f64> = x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect();
        let lhs = conv(Tensor::from_vec(x.shape(), mix).unwrap());
        let (cx, cy) = (conv(x), conv(y));
        for ((l, p), q) in lhs.data().iter().zip(cx.data()).zip(cy.data()) {
            prop_assert!((l - (a * p + b * q)).abs() < 1e-12);
        }
    }

    #[test]
    fn resampling_ops_preserve_constants(c in -3.0f64..3.0, h in 2usize..9, w in 2usize..9, oh in 1usize..12, ow in 1usize..12) {
        let mut g = Graph::new();
        let x = g.input(Tensor::full(&[1, 2, 2 * h, 2 * w], c));
        let resized = g.resize_bilinear(x, oh, ow).unwrap();
        let up = g.upsample_bilinear2x(x).unwrap();
        let pooled = g.avg_pool2(x).unwrap();
        for v in [resized, up, pooled] {
            prop_assert!(g.value(v).data().iter().all(|&t| (t - c).abs() < 1e-12));
        }
        prop_assert_eq!(g.value(pooled).shape(), &[1, 2, h, w]);
        prop_assert_eq!(g.value(up).shape(), &[1, 2, 4 * h, 4 * w]);
    }

    #[test]
    fn slicing_a_concatenation_returns_the_parts(seed in any::<u64>(), c1 in 1usize..4, c2 in 1usize..4) {
        let mut r = rng(seed);
        let a = random_tensor(&mut r, &[2, c1, 3, 4]);
        let b = random_tensor(&mut r, &[2, c2, 3, 4]);
        let mut g = Graph::new();
        let (va, vb) = (g.input(a.clone()), g.input(b.clone()));
        let cat = g.concat_channels(&[va, vb]).unwrap();
        let sa = g.slice_channels(cat, 0, c1).unwrap();
        let sb = g.slice_channels(cat, c1, c2).unwrap();
        prop_assert_eq!(g.value(sa), &a);
        prop_assert_eq!(g.value(sb), &b);
    }

    #[test]
    fn zero_gradient_leaves_fresh_parameters_unchanged(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut p = ParamSet::new();
        p.init_conv("c", 3, 2, 3, &mut r).unwrap();
        let before = p.clone();
        adam_step(&mut p, &before.zeros_like(), &mut AdamState::new(), 1e-2, &AdamConfig::default()).unwrap();
        prop_assert_eq!(p, before);
    }

    #[test]
    fn decaying_schedule_never_increases(base in 1e-6f64..1.0, every in 1u32..10, factor in 0.01f64..1.0) {
        let s = LrSchedule { base_lr: base, drop_every: every, drop_factor: factor };
        prop_assert_eq!(s.lr_at(0), base);
        for e in 0..40 {
            prop_assert!(s.lr_at(e + 1) <= s.lr_at(e));
        }
    }
}

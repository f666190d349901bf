//! Small reverse-mode differentiable array substrate.
//!
//! Operations are recorded on a [`Tape`] as they execute and replayed in
//! reverse by [`Tape::backward`]. The op set is exactly what the completion
//! network and its losses need: shared per-point linear maps, batch norm,
//! activations, max pooling over points, and a handful of shape utilities.
//! Scalar losses with hand-derived gradients enter through
//! [`Tape::scalar_fn`].

mod array;
mod gradcheck;
mod real;
mod tape;

pub use array::DiffArray;
pub use gradcheck::{gradcheck, relative_error, GradcheckConfig, GradcheckReport, InputReport};
pub use real::Real;
pub use tape::{sigmoid, BatchStats, BnMode, Tape, Var, BN_EPS, BN_MOMENTUM};

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::error::Error;

    fn arr(shape: &[usize], data: &[f64]) -> DiffArray<f32> {
        DiffArray::from_f64(shape, data).unwrap()
    }

    fn random(shape: &[usize], seed: u64) -> DiffArray<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        DiffArray::new(shape, data).unwrap()
    }

    /// Uniform in ±[0.1, 1]: keeps ReLU inputs away from the kink.
    fn random_off_zero(shape: &[usize], seed: u64) -> DiffArray<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        let data: Vec<f32> = (0..n)
            .map(|_| {
                let m: f32 = rng.random_range(0.1..1.0);
                if rng.random_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect();
        DiffArray::new(shape, data).unwrap()
    }

    #[test]
    fn pointwise_mlp_identity_and_hand_value() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(random(&[3, 5], 1));
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let w = t.constant(arr(&[3, 3], &eye));
        let b = t.constant(arr(&[3], &[0.0; 3]));
        let y = t.pointwise_mlp(x, w, b).unwrap();
        assert_eq!(t.data(y), t.data(x));

        let x = t.constant(arr(&[1, 2], &[3.0, 4.0]));
        let w = t.constant(arr(&[1, 1], &[2.0]));
        let b = t.constant(arr(&[1], &[1.0]));
        let y = t.pointwise_mlp(x, w, b).unwrap();
        assert_eq!(t.data(y), &[7.0, 9.0]);
    }

    #[test]
    fn pointwise_mlp_rejects_mismatched_shapes() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(random(&[3, 5], 1));
        let w = t.constant(random(&[2, 4], 2));
        let b = t.constant(random(&[2], 3));
        assert!(matches!(t.pointwise_mlp(x, w, b), Err(Error::Dimension(_))));
        let w = t.constant(random(&[2, 3], 2));
        let b = t.constant(random(&[3], 3));
        assert!(matches!(t.pointwise_mlp(x, w, b), Err(Error::Dimension(_))));
    }

    #[test]
    fn pointwise_mlp_gradcheck() {
        let report = gradcheck(
            |t, v| t.pointwise_mlp(v[0], v[1], v[2]),
            &[
                ("input", random(&[4, 7], 10)),
                ("weight", random(&[5, 4], 11)),
                ("bias", random(&[5], 12)),
            ],
            &GradcheckConfig::default(),
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn batchnorm_inference_identity() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(random(&[2, 6], 5));
        let g = t.constant(arr(&[2], &[1.0, 1.0]));
        let b = t.constant(arr(&[2], &[0.0, 0.0]));
        let (y, stats) = t
            .batchnorm1d(x, g, b, &[0.0, 0.0], &[1.0, 1.0], BnMode::Eval)
            .unwrap();
        assert!(stats.is_none());
        let scale = (1.0 / (1.0 + BN_EPS)).sqrt() as f32;
        for (a, b) in t.data(y).iter().zip(t.data(x)) {
            assert!((a - b * scale).abs() < 1e-7);
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn batchnorm_training_normalizes_pair() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(arr(&[1, 2], &[1.0, 3.0]));
        let g = t.constant(arr(&[1], &[1.0]));
        let b = t.constant(arr(&[1], &[0.0]));
        let (y, stats) = t
            .batchnorm1d(x, g, b, &[0.0], &[1.0], BnMode::Train)
            .unwrap();
        // mean 2, biased variance 1
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((t.data(y)[0] as f64 + expect).abs() < 1e-6);
        assert!((t.data(y)[1] as f64 - expect).abs() < 1e-6);
        let stats = stats.unwrap();
        assert_eq!(stats.mean, vec![2.0]);
        assert_eq!(stats.var, vec![2.0]);

        let mut rm = vec![0.0f32];
        let mut rv = vec![1.0f32];
        stats.update_running(&mut rm, &mut rv);
        assert!((rm[0] - 0.2).abs() < 1e-7);
        assert!((rv[0] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn batchnorm_single_point_training_is_degenerate() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(arr(&[1, 1], &[1.0]));
        let g = t.constant(arr(&[1], &[1.0]));
        let b = t.constant(arr(&[1], &[0.0]));
        assert!(matches!(
            t.batchnorm1d(x, g, b, &[0.0], &[1.0], BnMode::Train),
            Err(Error::DegenerateBatch(_))
        ));
        assert!(t.batchnorm1d(x, g, b, &[0.0], &[1.0], BnMode::Eval).is_ok());
    }

    #[test]
    fn batchnorm_gradcheck_both_modes() {
        // The plain sum of batch-normalized outputs has zero gradient, so the
        // output is weighted by a fixed random mask before reduction.
        let mask = random(&[3, 8], 99);
        for mode in [BnMode::Train, BnMode::Eval] {
            let report = gradcheck(
                |t, v| {
                    let (y, _) =
                        t.batchnorm1d(v[0], v[1], v[2], &[0.1, -0.2, 0.3], &[0.5, 1.5, 2.0], mode)?;
                    let m = t.constant(mask.clone());
                    t.mul(y, m)
                },
                &[
                    ("input", random(&[3, 8], 20)),
                    ("gamma", random(&[3], 21)),
                    ("beta", random(&[3], 22)),
                ],
                &GradcheckConfig::new(1e-3, 1e-2),
            )
            .unwrap();
            assert!(report.passed(), "{mode:?}: {report:?}");
        }
    }

    #[test]
    fn activations() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(arr(&[3], &[0.0, -2.0, 3.0]));
        let s = t.sigmoid(x);
        let r = t.relu(x);
        assert_eq!(t.data(s)[0], 0.5);
        assert_eq!(t.data(r), &[0.0, 0.0, 3.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let v: f32 = rng.random_range(-30.0..30.0);
            let total = sigmoid(v) + sigmoid(-v);
            assert!((total - 1.0).abs() < 1e-6, "{v}");
        }
        assert_eq!(sigmoid(-1e4f32), 0.0);
        assert_eq!(sigmoid(1e4f32), 1.0);
    }

    #[test]
    fn activation_gradchecks() {
        let cfg = GradcheckConfig::default();
        let r = gradcheck(|t, v| Ok(t.sigmoid(v[0])), &[("x", random(&[4, 6], 7))], &cfg).unwrap();
        assert!(r.passed(), "{r:?}");
        let r = gradcheck(
            |t, v| Ok(t.relu(v[0])),
            &[("x", random_off_zero(&[4, 6], 8))],
            &cfg,
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn maxpool_values_and_invariances() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(arr(&[1, 3], &[1.0, 5.0, 3.0]));
        let m = t.maxpool_points(x).unwrap();
        assert_eq!(t.data(m), &[5.0]);

        let x = t.constant(arr(&[2, 3], &[1.0, 5.0, 3.0, -1.0, -4.0, 0.5]));
        let dup = t.constant(arr(
            &[2, 5],
            &[1.0, 5.0, 3.0, 5.0, 1.0, -1.0, -4.0, 0.5, -4.0, -1.0],
        ));
        let perm = t.constant(arr(&[2, 3], &[3.0, 1.0, 5.0, 0.5, -1.0, -4.0]));
        let a = t.maxpool_points(x).unwrap();
        let b = t.maxpool_points(dup).unwrap();
        let c = t.maxpool_points(perm).unwrap();
        assert_eq!(t.data(a), t.data(b));
        assert_eq!(t.data(a), t.data(c));
    }

    #[test]
    fn maxpool_gradient_goes_to_lowest_tied_index() {
        let mut t = Tape::<f32>::new();
        let mut a = arr(&[1, 4], &[2.0, 7.0, 7.0, 1.0]);
        a.set_requires_grad(true);
        let x = t.leaf(a);
        let m = t.maxpool_points(x).unwrap();
        let s = t.sum(m);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_gradcheck() {
        // distinct values, gaps well above the probe step
        let data: Vec<f64> = vec![0.3, -0.9, 0.75, 0.1, 0.5, -0.2, 0.95, 0.05, -0.6, 0.4, 0.2, -0.35];
        let r = gradcheck(
            |t, v| t.maxpool_points(v[0]),
            &[("x", arr(&[3, 4], &data))],
            &GradcheckConfig::default(),
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn segmented_pool_and_repeat() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(arr(&[2, 4], &[1.0, 3.0, 2.0, 2.0, -1.0, -2.0, 5.0, 0.0]));
        let p = t.maxpool_segments(x, 2).unwrap();
        assert_eq!(t.shape(p), &[2, 2]);
        assert_eq!(t.data(p), &[3.0, 2.0, -1.0, 5.0]);
        let r = t.repeat_columns(p, 3).unwrap();
        assert_eq!(t.shape(r), &[2, 6]);
        assert_eq!(t.data(r), &[3.0, 3.0, 3.0, 2.0, 2.0, 2.0, -1.0, -1.0, -1.0, 5.0, 5.0, 5.0]);
        assert!(t.maxpool_segments(x, 3).is_err());

        let data: Vec<f64> = vec![0.3, -0.9, 0.75, 0.1, 0.5, -0.2, 0.95, 0.05, -0.6, 0.4, 0.2, -0.35];
        let w = random(&[3, 6], 12);
        let r = gradcheck(
            |t, v| {
                let p = t.maxpool_segments(v[0], 2)?;
                let r = t.repeat_columns(p, 3)?;
                let w = t.constant(w.clone());
                t.mul(r, w)
            },
            &[("x", arr(&[3, 4], &data))],
            &GradcheckConfig::default(),
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn shape_utilities() {
        let mut t = Tape::<f32>::new();
        let a = t.constant(arr(&[1], &[1.0]));
        let b = t.constant(arr(&[1], &[2.0]));
        let c = t.concat(&[a, b]).unwrap();
        assert_eq!(t.data(c), &[1.0, 2.0]);

        let x = t.constant(arr(&[2], &[1.0, 2.0]));
        let tiled = t.tile(x, 3).unwrap();
        assert_eq!(t.shape(tiled), &[3, 2]);
        assert_eq!(t.data(tiled), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let cols = t.broadcast_columns(x, 3).unwrap();
        assert_eq!(t.shape(cols), &[2, 3]);
        assert_eq!(t.data(cols), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);

        let m = t.constant(arr(&[2, 3], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]));
        let mt = t.transpose(m).unwrap();
        assert_eq!(t.shape(mt), &[3, 2]);
        assert_eq!(t.data(mt), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        let g = t.gather_rows(m, &[1, 1, 0]).unwrap();
        assert_eq!(t.data(g), &[3.0, 4.0, 5.0, 3.0, 4.0, 5.0, 0.0, 1.0, 2.0]);

        let bad = t.constant(arr(&[3, 2], &[0.0; 6]));
        assert!(matches!(t.concat(&[m, bad]), Err(Error::Dimension(_))));
        assert!(matches!(t.mul(m, bad), Err(Error::Dimension(_))));
        assert!(matches!(t.gather_rows(m, &[2]), Err(Error::Dimension(_))));
    }

    #[test]
    fn shape_utility_gradchecks() {
        let cfg = GradcheckConfig::default();
        let r = gradcheck(
            |t, v| t.mul(v[0], v[1]),
            &[("a", random(&[3, 4], 1)), ("b", random(&[3, 4], 2))],
            &cfg,
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");

        let r = gradcheck(
            |t, v| {
                let c = t.concat(&[v[0], v[1]])?;
                let w = t.constant(random(&[5, 3], 3));
                t.mul(c, w)
            },
            &[("a", random(&[2, 3], 4)), ("b", random(&[3, 3], 5))],
            &cfg,
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");

        let r = gradcheck(
            |t, v| {
                let tiled = t.tile(v[0], 4)?;
                let cols = t.broadcast_columns(v[0], 2)?;
                let w = t.constant(random(&[4, 3], 6));
                let a = t.mul(tiled, w)?;
                let b = t.transpose(cols)?;
                let gathered = t.gather_rows(b, &[1, 0, 1])?;
                let s1 = t.sum(a);
                let s2 = t.sum(gathered);
                let s2 = t.scale(s2, 0.5);
                t.add(s1, s2)
            },
            &[("x", random(&[3], 7))],
            &cfg,
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn second_backward_without_forward_fails() {
        let mut t = Tape::<f32>::new();
        let x = t.leaf(random(&[3], 1).into_parameter());
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert!(matches!(t.backward(s), Err(Error::TapeConsumed)));
        let s2 = t.sum(x);
        assert!(t.backward(s2).is_ok());
    }

    #[test]
    fn gradcheck_catches_corrupted_adjoint() {
        // d/dx sum(x²) is 2x; hand the tape 3x instead.
        let report = gradcheck(
            |t, v| {
                let x = t.data(v[0]).to_vec();
                let value = x.iter().map(|a| a * a).sum::<f32>();
                let wrong = x.iter().map(|a| 3.0 * a).collect();
                t.scalar_fn(v[0], value, wrong)
            },
            &[("x", random_off_zero(&[5], 4))],
            &GradcheckConfig::default(),
        )
        .unwrap();
        assert!(!report.passed());
        assert_eq!(report.failures().count(), 1);
        assert!((report.max_rel_err() - 1.0 / 3.0).abs() < 1e-2);
    }

    #[test]
    fn gradcheck_reports_non_finite_probe() {
        let err = gradcheck(
            |t, v| {
                let x = t.data(v[0])[0];
                let value = if x > 0.5 { f32::INFINITY } else { x };
                t.scalar_fn(v[0], value, vec![1.0])
            },
            &[("x", arr(&[1], &[0.5]))],
            &GradcheckConfig::default(),
        );
        match err {
            Err(Error::NonFinite(msg)) => assert!(msg.contains("x[0]"), "{msg}"),
            other => panic!("expected a non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn replay_is_bitwise_deterministic() {
        let run = || {
            let mut t = Tape::<f32>::new();
            let x = t.leaf(random(&[16, 50], 1).into_parameter());
            let w = t.leaf(random(&[32, 16], 2).into_parameter());
            let b = t.leaf(random(&[32], 3).into_parameter());
            let h = t.pointwise_mlp(x, w, b).unwrap();
            let h = t.relu(h);
            let p = t.maxpool_points(h).unwrap();
            let s = t.sum(p);
            t.backward(s).unwrap();
            (t.grad(x).unwrap().to_vec(), t.grad(w).unwrap().to_vec())
        };
        let (a, b) = run();
        let (c, d) = run();
        assert!(a.iter().zip(&c).all(|(p, q)| p.to_bits() == q.to_bits()));
        assert!(b.iter().zip(&d).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    proptest! {
        #[test]
        fn maxpool_permutation_invariant(
            values in proptest::collection::vec(-10.0f32..10.0, 12),
            perm in Just((0..6usize).collect::<Vec<_>>()).prop_shuffle(),
        ) {
            let mut t = Tape::<f32>::new();
            let x = t.constant(DiffArray::new(&[2, 6], values.clone()).unwrap());
            let mut permuted = vec![0.0; 12];
            for r in 0..2 {
                for (k, &p) in perm.iter().enumerate() {
                    permuted[r * 6 + k] = values[r * 6 + p];
                }
            }
            let y = t.constant(DiffArray::new(&[2, 6], permuted).unwrap());
            let a = t.maxpool_points(x).unwrap();
            let b = t.maxpool_points(y).unwrap();
            prop_assert_eq!(t.data(a), t.data(b));
        }

        #[test]
        fn forward_ops_stay_finite(values in proptest::collection::vec(-1e3f32..1e3, 8)) {
            let mut t = Tape::<f32>::new();
            let x = t.leaf(DiffArray::new(&[2, 4], values).unwrap().into_parameter());
            let s = t.sigmoid(x);
            let r = t.relu(x);
            let g = t.constant(DiffArray::full(&[2], 1.0).unwrap());
            let b = t.constant(DiffArray::full(&[2], 0.0).unwrap());
            let (n, _) = t.batchnorm1d(x, g, b, &[0.0; 2], &[1.0; 2], BnMode::Train).unwrap();
            let m = t.mul(s, r).unwrap();
            let m = t.add(m, n).unwrap();
            let total = t.sum(m);
            prop_assert!(t.value(total).is_finite());
            t.backward(total).unwrap();
            prop_assert!(t.grad(x).unwrap().iter().all(|v| v.is_finite()));
        }
    }
}

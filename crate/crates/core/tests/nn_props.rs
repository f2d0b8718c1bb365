use mabn::nn::{BatchNorm, BnMode, DenseNet, Matrix, NetSpec, NormKind, NormPlacement, Activation};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn batch(max_rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    (2..=max_rows).prop_flat_map(move |m| {
        prop::collection::vec(-5.0f64..5.0, m * cols)
            .prop_map(move |d| Matrix::from_vec(m, cols, d).unwrap())
    })
}

fn layer(f: usize) -> impl Strategy<Value = BatchNorm> {
    (
        prop::collection::vec(0.2f64..3.0, f),
        prop::collection::vec(-2.0f64..2.0, f),
        prop::collection::vec(-2.0f64..2.0, f),
        prop::collection::vec(0.1f64..4.0, f),
    )
        .prop_map(move |(g, b, m, v)| {
            let mut bn = BatchNorm::new(f);
            bn.gamma_scale = g;
            bn.beta_shift = b;
            bn.run_mean = m;
            bn.run_var = v;
            bn
        })
}

fn column(x: &Matrix, j: usize) -> Vec<f64> {
    (0..x.rows()).map(|r| x.get(r, j)).collect()
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n)
}

proptest! {
    #[test]
    fn train_output_has_target_moments(x in batch(12, 3), bn in layer(3)) {
        let mut b = bn.clone();
        let (y, _) = b.forward(&x, BnMode::Train, None).unwrap();
        for j in 0..3 {
            let (_, vx) = mean_var(&column(&x, j));
            let (my, vy) = mean_var(&column(&y, j));
            let g = bn.gamma_scale[j];
            prop_assert!((my - bn.beta_shift[j]).abs() < 1e-9);
            let want = g * g * vx / (vx + bn.epsilon);
            prop_assert!((vy - want).abs() < 1e-8 * (1.0 + want));
        }
    }

    #[test]
    fn running_stats_are_convex_blend(x in batch(10, 2), bn in layer(2)) {
        let mut b = bn.clone();
        b.forward(&x, BnMode::Train, None).unwrap();
        let lambda = bn.momentum;
        for j in 0..2 {
            let (m, v) = mean_var(&column(&x, j));
            prop_assert!((b.run_mean[j] - ((1.0 - lambda) * bn.run_mean[j] + lambda * m)).abs() < 1e-12);
            prop_assert!((b.run_var[j] - ((1.0 - lambda) * bn.run_var[j] + lambda * v)).abs() < 1e-11);
        }
    }

    #[test]
    fn eval_is_affine_and_stateless(x in batch(8, 2), bn in layer(2)) {
        let mut b = bn.clone();
        let (y, _) = b.forward(&x, BnMode::Eval, None).unwrap();
        prop_assert_eq!(&b, &bn);
        for r in 0..x.rows() {
            for j in 0..2 {
                let want = bn.gamma_scale[j] * (x.get(r, j) - bn.run_mean[j])
                    / (bn.run_var[j] + bn.epsilon).sqrt()
                    + bn.beta_shift[j];
                prop_assert!((y.get(r, j) - want).abs() < 1e-12);
            }
        }
        // rows are independent in eval mode
        let (y0, _) = b.forward(&Matrix::row_vector(x.row(0)), BnMode::Eval, None).unwrap();
        prop_assert_eq!(y0.row(0), y.row(0));
    }

    #[test]
    fn train_input_gradient_sums_to_zero(x in batch(12, 3), bn in layer(3), seed in any::<u64>()) {
        let mut b = bn.clone();
        let (_, tape) = b.forward(&x, BnMode::Train, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dy = Matrix::from_vec(x.rows(), 3, (0..x.rows() * 3).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect()).unwrap();
        let g = BatchNorm::backward(tape, &dy).unwrap();
        for j in 0..3 {
            prop_assert!(column(&g.dx, j).iter().sum::<f64>().abs() < 1e-10);
        }
    }

    #[test]
    fn mixed_with_copy_of_batch_matches_train(x in batch(8, 2), bn in layer(2)) {
        // stacking x with itself leaves mean and variance unchanged
        let mut a = bn.clone();
        let mut b = bn.clone();
        let (ya, _) = a.forward(&x, BnMode::Train, None).unwrap();
        let (yb, _) = b.forward(&x, BnMode::StatsOnlyMixed, Some(&x)).unwrap();
        for (p, q) in ya.data().iter().zip(yb.data()) {
            prop_assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn predict_never_mutates(x in batch(6, 3), seed in 0u64..1000, mode_idx in 0usize..3) {
        let mode = [BnMode::Train, BnMode::Eval, BnMode::StatsOnlyMixed][mode_idx];
        let spec = NetSpec {
            input: 3,
            hidden: vec![5],
            output: 1,
            norm: NormKind::Batch,
            placement: NormPlacement::AfterLinear,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Identity,
            bn_momentum: 0.1,
            bn_epsilon: 1e-5,
        };
        let net = DenseNet::new(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let before = net.clone();
        let p = net.predict(&x, mode).unwrap();
        prop_assert_eq!(&net, &before);
        let mut live = net.clone();
        let (y, _) = live.forward(&x, mode, None).unwrap();
        prop_assert_eq!(p, y);
    }
}

#[test]
fn stationary_stream_converges_in_predicted_updates() {
    let x = Matrix::from_rows(&[[1.0, -4.0], [3.0, 0.5], [8.0, 2.5], [-2.0, 1.0]]).unwrap();
    let mut b = BatchNorm::new(2);
    let (mean, var) = x.column_moments();
    let gap = |b: &BatchNorm| {
        (0..2)
            .map(|j| (b.run_mean[j] - mean[j]).abs().max((b.run_var[j] - var[j]).abs()))
            .fold(0.0, f64::max)
    };
    let g0 = gap(&b);
    // each update multiplies the gap by 1 − λ
    let n = ((1e-8 / g0).ln() / (0.9f64).ln()).ceil() as usize;
    for _ in 0..n - 1 {
        b.forward(&x, BnMode::Train, None).unwrap();
    }
    assert!(gap(&b) > 1e-8);
    b.forward(&x, BnMode::Train, None).unwrap();
    assert!(gap(&b) <= 1e-8);
}

use mtdqn::numerics::{
    adam_step, clip_gradients, finite_diff_grad, relative_error, AdamState, CosineSchedule, Tape, Tensor,
};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-3.0..3.0f64, rows * cols).prop_map(move |d| Tensor::matrix(rows, cols, d).unwrap())
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1..6usize, 1..6usize)
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions((r, c) in dims(), seed in any::<u64>(), shift in -50.0..50.0f64) {
        let x = {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-20.0..20.0)).collect()).unwrap()
        };
        let tape = Tape::new();
        let s = tape.constant(x.clone())?.softmax()?.value();
        let shifted = Tensor::matrix(r, c, x.data().iter().map(|v| v + shift).collect()).unwrap();
        let s2 = tape.constant(shifted)?.softmax()?.value();
        for i in 0..r {
            let row = s.row(i);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
        prop_assert!(s.max_abs_diff(&s2) < 1e-12);
    }

    #[test]
    fn matmul_gradient_matches_differences((m, k) in dims(), n in 1..5usize, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut rand_t = |r: usize, c: usize| {
            Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        let (a, b, w) = (rand_t(m, k), rand_t(k, n), rand_t(m, n));
        let loss = |a: &Tensor| {
            let tape = Tape::new();
            let y = tape.constant(a.clone()).unwrap().matmul(tape.constant(b.clone()).unwrap()).unwrap();
            y.mul(tape.constant(w.clone()).unwrap()).unwrap().sum().unwrap().item().unwrap()
        };
        let tape = Tape::new();
        let av = tape.param(&a)?;
        let out = av.matmul(tape.constant(b.clone())?)?.mul(tape.constant(w.clone())?)?.sum()?;
        let analytic = tape.backward(out)?.get(av).unwrap();
        let numeric = finite_diff_grad(loss, &a, 1e-6);
        prop_assert!(relative_error(analytic.data(), numeric.data()) < 1e-7);
    }

    #[test]
    fn clipping_bounds_the_joint_norm(a in matrix(2, 3), b in matrix(1, 4), max_norm in 0.01..10.0f64) {
        let before = a.data().iter().chain(b.data()).map(|v| v * v).sum::<f64>().sqrt();
        let mut grads = vec![a.clone(), b.clone()];
        let reported = clip_gradients(&mut grads, max_norm);
        let after = grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((reported - before).abs() < 1e-12);
        prop_assert!(after <= max_norm * (1.0 + 1e-12) || after <= before);
        if before <= max_norm {
            prop_assert_eq!(&grads[0], &a);
        } else {
            // same direction
            let scale = after / before;
            for (g, o) in grads[0].data().iter().zip(a.data()) {
                prop_assert!((g - o * scale).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cosine_schedule_decays_between_bounds(lr0 in 1e-4..1.0f64, frac in 0.0..1.0f64, total in 1..5000u64) {
        let lr_min = lr0 * frac;
        let s = CosineSchedule::new(lr0, lr_min, total);
        prop_assert!((s.lr(0) - lr0).abs() < 1e-15);
        prop_assert!((s.lr(total) - lr_min).abs() < 1e-12);
        prop_assert_eq!(s.lr(total + 10), s.lr(total));
        let mut prev = s.lr(0);
        for step in (0..=total).step_by((total as usize / 50).max(1)) {
            let lr = s.lr(step);
            prop_assert!(lr <= prev + 1e-15 && lr >= lr_min - 1e-15);
            prev = lr;
        }
    }

    #[test]
    fn first_adam_step_moves_each_coordinate_by_lr(p in matrix(2, 2), g in matrix(2, 2), lr in 1e-4..0.1f64) {
        let mut params = vec![p.clone()];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, std::slice::from_ref(&g), &mut state, lr)?;
        for ((new, old), gi) in params[0].data().iter().zip(p.data()).zip(g.data()) {
            // m̂ = g and v̂ = g² after bias correction
            let expected = -lr * gi / (gi.abs() + state.eps);
            prop_assert!((new - old - expected).abs() < 1e-12);
            prop_assert!((new - old).abs() <= lr);
        }
        prop_assert_eq!(state.step, 1);
    }

    #[test]
    fn relative_error_is_symmetric(a in prop::collection::vec(-5.0..5.0f64, 1..8), noise in -1.0..1.0f64) {
        let b: Vec<f64> = a.iter().map(|x| x + noise).collect();
        prop_assert_eq!(relative_error(&a, &a), 0.0);
        prop_assert!((relative_error(&a, &b) - relative_error(&b, &a)).abs() < 1e-15);
    }
}

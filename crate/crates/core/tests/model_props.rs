use proptest::prelude::*;

use sosd::model::{backward, forward, gen_dataset, init_params, linearized_attention, softmax_rows, DataSpec, ModelConfig};
use sosd::rng;
use sosd::verification::{gradcheck_state, softmax_gap_slack, softmax_jacobian_slack, GRAD_REL_TOL};

fn config(seed: u64, n: usize, d: usize, classes: usize, sigma: f64) -> ModelConfig {
    ModelConfig { n, d, classes, init_sigma: sigma, seed }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_rows_are_stochastic(seed in any::<u64>(), n in 2usize..10, d in 2usize..10, log_sigma in -2.0f64..0.5) {
        let c = config(seed, n, d, 3, 10f64.powf(log_sigma));
        let state = init_params(&c).unwrap();
        let batch = gen_dataset(&c, &DataSpec::default(), seed).unwrap();
        let cache = forward(&state, &batch).unwrap();
        for i in 0..n {
            let row = cache.a.row(i);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        prop_assert!(cache.loss.is_finite() && cache.loss >= 0.0);
    }

    #[test]
    fn softmax_gap_saturation(seed in any::<u64>(), k in 2usize..12, scale in 0.01f64..50.0) {
        let mut g = rng::stream(seed, 0);
        let u: Vec<f64> = (0..k).map(|_| rng::gaussian(&mut g) * scale).collect();
        prop_assert!(softmax_gap_slack(&u) >= -1e-9);
    }

    #[test]
    fn softmax_jacobian_bound(seed in any::<u64>(), k in 2usize..12, scale in 0.01f64..20.0) {
        let m = rng::gaussian_matrix(&mut rng::stream(seed, 0), 1, k, scale);
        let a = softmax_rows(&m);
        prop_assert!(softmax_jacobian_slack(a.row(0)).unwrap() >= -1e-9);
    }

    #[test]
    fn linearization_error_is_second_order(seed in any::<u64>(), n in 2usize..8) {
        let m = rng::gaussian_matrix(&mut rng::stream(seed, 0), n, n, 1.0);
        let err = |s: f64| {
            let ms = m.scale(s);
            softmax_rows(&ms).sub(&linearized_attention(&ms).unwrap()).frobenius()
        };
        // at least second order; two-entry rows have no quadratic term and give 8
        let ratio = err(2e-3) / err(1e-3);
        prop_assert!(ratio > 3.5 && ratio < 8.5, "ratio {ratio}");
    }

    #[test]
    fn gradients_match_finite_differences(seed in any::<u64>(), n in 2usize..6, d in 2usize..6, classes in 2usize..5) {
        let c = config(seed, n, d, classes, 0.5);
        let state = init_params(&c).unwrap();
        let batch = gen_dataset(&c, &DataSpec { noise: 0.5, mean_norm: 1.0 }, seed).unwrap();
        prop_assert!(gradcheck_state(&state, &batch).unwrap() < GRAD_REL_TOL);
    }

    #[test]
    fn gradient_shapes_match_parameters(seed in any::<u64>()) {
        let c = config(seed, 4, 4, 3, 0.1);
        let state = init_params(&c).unwrap();
        let batch = gen_dataset(&c, &DataSpec::default(), seed).unwrap();
        let cache = forward(&state, &batch).unwrap();
        let grads = backward(&state, &batch, &cache).unwrap();
        prop_assert_eq!(grads.trainable().map(|g| g.shape()), state.trainable().map(|w| w.shape()));
        prop_assert!(grads.global_norm().is_finite());
    }
}

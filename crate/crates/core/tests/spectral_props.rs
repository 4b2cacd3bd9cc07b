use proptest::prelude::*;

use sosd::linalg::{singular_values, svd};
use sosd::model::semi_orthogonal;
use sosd::rng;
use sosd::spectral::{sd_variation, trace_normalize, SpectralSnapshot};
use sosd::DenseMatrix;

fn gaussian(seed: u64, rows: usize, cols: usize) -> DenseMatrix {
    rng::gaussian_matrix(&mut rng::stream(seed, 0), rows, cols, 1.0)
}

fn orthogonal(seed: u64, n: usize) -> DenseMatrix {
    semi_orthogonal(&rng::gaussian_matrix(&mut rng::stream(seed, 1), n, n, 1.0))
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Closed-form singular values of a 2×2 matrix.
fn sv_2x2(a: f64, b: f64, c: f64, d: f64) -> (f64, f64) {
    let s1 = a * a + b * b + c * c + d * d;
    let det = (a * d - b * c).abs();
    let root = (s1 * s1 - 4.0 * det * det).max(0.0).sqrt();
    (((s1 + root) / 2.0).sqrt(), det / ((s1 + root) / 2.0).sqrt().max(f64::MIN_POSITIVE))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn svd_reconstructs_with_orthonormal_factors(seed in any::<u64>(), r in 1usize..12, c in 1usize..12) {
        let m = gaussian(seed, r, c);
        let s = svd(&m).unwrap();
        let err = s.reconstruct().sub(&m).frobenius();
        prop_assert!(err <= 1e-12 * m.frobenius().max(1.0));
        let k = s.singular_values.len();
        prop_assert!(s.u.t_matmul(&s.u).sub(&DenseMatrix::identity(k)).max_abs() < 1e-12);
        prop_assert!(s.v.t_matmul(&s.v).sub(&DenseMatrix::identity(k)).max_abs() < 1e-12);
        prop_assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn two_by_two_matches_closed_form(a in -10.0f64..10.0, b in -10.0f64..10.0, c in -10.0f64..10.0, d in -10.0f64..10.0) {
        let sv = singular_values(&DenseMatrix::from_vec(2, 2, vec![a, b, c, d]).unwrap()).unwrap();
        let (hi, lo) = sv_2x2(a, b, c, d);
        prop_assert!((sv[0] - hi).abs() <= 1e-12 * hi.max(1.0));
        prop_assert!((sv[1] - lo).abs() <= 1e-10 * hi.max(1.0));
    }

    #[test]
    fn mirsky_inequality(seed in any::<u64>(), r in 1usize..10, c in 1usize..10, eps in 1e-6f64..10.0) {
        let a = gaussian(seed, r, c);
        let e = gaussian(seed ^ 0x5555, r, c).scale(eps);
        let sa = singular_values(&a).unwrap();
        let sb = singular_values(&a.add(&e)).unwrap();
        prop_assert!(l2(&sa, &sb) <= e.frobenius() * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn von_neumann_trace_inequality(seed in any::<u64>(), n in 1usize..10) {
        let a = gaussian(seed, n, n);
        let b = gaussian(seed.wrapping_add(1), n, n);
        let trace: f64 = (0..n).map(|i| a.matmul(&b)[(i, i)]).sum();
        let bound: f64 = singular_values(&a).unwrap().iter().zip(singular_values(&b).unwrap()).map(|(x, y)| x * y).sum();
        prop_assert!(trace.abs() <= bound * (1.0 + 1e-12));
    }

    #[test]
    fn spectrum_is_orthogonally_invariant(seed in any::<u64>(), n in 2usize..9) {
        let a = gaussian(seed, n, n);
        let rotated = orthogonal(seed, n).matmul(&a).matmul(&orthogonal(seed ^ 1, n));
        let sa = singular_values(&a).unwrap();
        let sr = singular_values(&rotated).unwrap();
        prop_assert!(l2(&sa, &sr) <= 1e-11 * sa[0]);
    }

    #[test]
    fn distribution_is_scale_invariant(seed in any::<u64>(), n in 2usize..9, log_s in -6.0f64..6.0) {
        let a = gaussian(seed, n, n);
        let pa = trace_normalize(&SpectralSnapshot::of(&a).unwrap()).unwrap();
        let ps = trace_normalize(&SpectralSnapshot::of(&a.scale(10f64.powf(log_s))).unwrap()).unwrap();
        prop_assert!(l2(&pa, &ps) < 1e-12);
        prop_assert!((pa.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalization_is_lipschitz(seed in any::<u64>(), n in 2usize..9, eps in 1e-6f64..1.0) {
        let a = gaussian(seed, n, n);
        let b = a.add(&gaussian(seed ^ 7, n, n).scale(eps));
        let sa = SpectralSnapshot::of(&a).unwrap();
        let sb = SpectralSnapshot::of(&b).unwrap();
        let dist = sd_variation(&sa, &sb).unwrap();
        let bound = (1.0 + (n as f64).sqrt()) * l2(sa.singular_values(), sb.singular_values()) / sa.trace().min(sb.trace());
        prop_assert!(dist <= bound * (1.0 + 1e-12));
        let spec_bound = (1.0 + (n as f64).sqrt()) * a.sub(&b).frobenius() / sa.trace().min(sb.trace());
        prop_assert!(dist <= spec_bound * (1.0 + 1e-12));
    }
}

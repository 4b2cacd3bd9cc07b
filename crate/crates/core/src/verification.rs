//! Seeded randomized checks of the supporting inequalities, the descent
//! lemma on exact quadratics, and finite-difference gradient checks.
//!
//! Trial `i` draws from `rng::stream(seed, i)`, so reports do not depend on
//! the order in which trials run.

use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dot, singular_values, symmetric_eigenvalues, DenseMatrix};
use crate::model::{
    backward, forward, gen_dataset, init_params, linearized_attention, semi_orthogonal,
    softmax_in_place, softmax_rows, Batch, DataSpec, ModelConfig, ModelState,
};
use crate::rng;
use crate::spectral::{sd_variation, SpectralSnapshot};

/// Slack below `-TOLERANCE` counts as a violation.
pub const TOLERANCE: f64 = 1e-9;
/// Central-difference step for gradient checks.
pub const FD_STEP: f64 = 1e-5;
/// Maximum accepted relative gradient error.
pub const GRAD_REL_TOL: f64 = 1e-6;
/// Magnitude below which gradient errors are measured absolutely.
pub const GRAD_ABS_FLOOR: f64 = 1e-4;
/// Required residual ratio when the score matrix is halved.
pub const LINEARIZATION_RATIO: f64 = 3.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Lemma {
    L1,
    L2,
    L3,
    L4,
    L6,
    L7,
    L8,
}

impl Lemma {
    pub const ALL: [Lemma; 7] = [
        Lemma::L1,
        Lemma::L2,
        Lemma::L3,
        Lemma::L4,
        Lemma::L6,
        Lemma::L7,
        Lemma::L8,
    ];

    pub fn describe(self) -> &'static str {
        match self {
            Lemma::L1 => "L1 normalization Lipschitz",
            Lemma::L2 => "L2 Mirsky",
            Lemma::L3 => "L3 von Neumann trace",
            Lemma::L4 => "L4 normalized-spectrum Lipschitz",
            Lemma::L6 => "L6 softmax gap saturation",
            Lemma::L7 => "L7 softmax Jacobian",
            Lemma::L8 => "L8 linearized attention order",
        }
    }
}

impl FromStr for Lemma {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Lemma::ALL
            .into_iter()
            .find(|l| format!("{l:?}").eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown lemma {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub trials: usize,
    pub violations: usize,
    /// Smallest slack seen; negative means the inequality was exceeded.
    pub worst_slack: f64,
    /// Smallest slack among satisfied checks.
    pub min_margin: f64,
    pub seed: u64,
    pub dims: (usize, usize),
    /// Largest entrywise relative gradient error (gradcheck only).
    pub max_error: Option<f64>,
    /// Largest `|ΔL − lower bound|` at `η = 1/β` (descent only).
    pub equality_gap: Option<f64>,
}

impl SuiteReport {
    fn new(name: impl Into<String>, seed: u64, dims: (usize, usize)) -> Self {
        Self {
            name: name.into(),
            trials: 0,
            violations: 0,
            worst_slack: f64::INFINITY,
            min_margin: f64::INFINITY,
            seed,
            dims,
            max_error: None,
            equality_gap: None,
        }
    }

    fn record(&mut self, slack: f64) {
        self.worst_slack = self.worst_slack.min(slack);
        if slack < -TOLERANCE || slack.is_nan() {
            self.violations += 1;
        } else {
            self.min_margin = self.min_margin.min(slack);
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0 && self.trials > 0
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[{}]", self.name)?;
        writeln!(f, "trials = {}", self.trials)?;
        writeln!(f, "violations = {}", self.violations)?;
        writeln!(f, "worst_slack = {:e}", self.worst_slack)?;
        writeln!(f, "min_margin = {:e}", self.min_margin)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "dims = {}..={}", self.dims.0, self.dims.1)?;
        if let Some(e) = self.max_error {
            writeln!(f, "max_error = {e:e}")?;
        }
        if let Some(g) = self.equality_gap {
            writeln!(f, "equality_gap = {g:e}")?;
        }
        write!(f, "status = {}", if self.passed() { "pass" } else { "FAIL" })
    }
}

/// Gaussian matrix rescaled to a Frobenius norm drawn log-uniformly from
/// `[1e-3, 1e3]`.
fn scaled_matrix(g: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    let m = rng::gaussian_matrix(g, rows, cols, 1.0);
    let target = 10f64.powf(g.random_range(-3.0..3.0));
    m.scale(target / m.frobenius())
}

fn sorted_sv(m: &DenseMatrix) -> Vec<f64> {
    singular_values(m).expect("finite random matrix")
}

/// Runs `trials` instances of one inequality over dimensions in `dims`.
pub fn check_inequality_suite(
    lemma: Lemma,
    trials: usize,
    seed: u64,
    dims: RangeInclusive<usize>,
) -> Result<SuiteReport> {
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    let (lo, hi) = (*dims.start(), *dims.end());
    if lo < 2 || hi < lo {
        return Err(Error::invalid(format!("dimension range {lo}..={hi} must start at 2 or more")));
    }
    let mut report = SuiteReport::new(lemma.describe(), seed, (lo, hi));
    for trial in 0..trials {
        let mut g = rng::stream(seed, trial as u64);
        let n = g.random_range(lo..=hi);
        let slack = match lemma {
            Lemma::L1 => trial_l1(&mut g, n),
            Lemma::L2 => {
                let m = g.random_range(lo..=hi);
                trial_l2(&mut g, m, n)
            }
            Lemma::L3 => {
                let m = g.random_range(lo..=hi);
                trial_l3(&mut g, m, n)
            }
            Lemma::L4 => trial_l4(&mut g, n),
            Lemma::L6 => trial_l6(&mut g, n),
            Lemma::L7 => trial_l7(&mut g, n)?,
            Lemma::L8 => trial_l8(&mut g, n)?,
        };
        report.trials += 1;
        report.record(slack);
    }
    Ok(report)
}

/// Positive vector, perturbed copy at a random relative distance.
fn positive_pair(g: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
    let scale = 10f64.powf(g.random_range(-3.0..3.0));
    let a: Vec<f64> = (0..n).map(|_| scale * rng::gaussian(g).abs() + 1e-12).collect();
    let rel = 10f64.powf(g.random_range(-6.0..0.5));
    let b = a
        .iter()
        .map(|&x| (x + rel * scale * rng::gaussian(g)).abs() + 1e-12)
        .collect();
    (a, b)
}

fn trial_l1(g: &mut ChaCha8Rng, n: usize) -> f64 {
    let (a, b) = positive_pair(g, n);
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    let lhs = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (x / sa - y / sb).powi(2))
        .sum::<f64>()
        .sqrt();
    let diff = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let rhs = (1.0 + (n as f64).sqrt()) / sa.min(sb) * diff;
    rhs - lhs
}

fn perturbed_pair(g: &mut ChaCha8Rng, m: usize, n: usize) -> (DenseMatrix, DenseMatrix) {
    let a = scaled_matrix(g, m, n);
    let b = match g.random_range(0..3) {
        0 => {
            let r = semi_orthogonal(&rng::gaussian_matrix(g, m, m, 1.0));
            r.matmul(&a)
        }
        1 => {
            let e = rng::gaussian_matrix(g, m, n, 1.0);
            let rel = 10f64.powf(g.random_range(-8.0..0.0));
            a.add(&e.scale(rel * a.frobenius() / e.frobenius()))
        }
        _ => scaled_matrix(g, m, n),
    };
    (a, b)
}

fn trial_l2(g: &mut ChaCha8Rng, m: usize, n: usize) -> f64 {
    let (a, b) = perturbed_pair(g, m, n);
    let (sa, sb) = (sorted_sv(&a), sorted_sv(&b));
    let lhs = sa.iter().zip(&sb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    a.sub(&b).frobenius() - lhs
}

fn trial_l3(g: &mut ChaCha8Rng, m: usize, n: usize) -> f64 {
    let a = scaled_matrix(g, m, n);
    let b = scaled_matrix(g, m, n);
    let rhs = dot(&sorted_sv(&a), &sorted_sv(&b));
    rhs - a.inner(&b)
}

fn trial_l4(g: &mut ChaCha8Rng, d: usize) -> f64 {
    let w = scaled_matrix(g, d, d);
    let grad = scaled_matrix(g, d, d);
    let eta = 10f64.powf(g.random_range(-4.0..0.0));
    let mut next = w.clone();
    next.axpy(-eta, &grad);
    let (sa, sb) = (
        SpectralSnapshot::of(&w).expect("finite"),
        SpectralSnapshot::of(&next).expect("finite"),
    );
    let lhs = sd_variation(&sa, &sb).expect("nonzero traces");
    let rhs = (1.0 + (d as f64).sqrt()) / sa.trace().min(sb.trace()) * next.sub(&w).frobenius();
    rhs - lhs
}

fn random_logits(g: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let scale = 10f64.powf(g.random_range(-3.0..1.5));
    (0..m).map(|_| scale * rng::gaussian(g)).collect()
}

/// Slack of both saturation bounds for one softmax row.
pub fn softmax_gap_slack(u: &[f64]) -> f64 {
    let m = u.len();
    let gap = crate::telemetry::gap(u).expect("length >= 2");
    let star = (0..m).max_by(|&i, &j| u[i].total_cmp(&u[j])).expect("nonempty");
    let mut s = u.to_vec();
    softmax_in_place(&mut s);
    let rest: f64 = (0..m).filter(|&j| j != star).map(|j| s[j]).sum();
    let worst_other = (0..m).filter(|&j| j != star).map(|j| s[j]).fold(0.0, f64::max);
    let bound = (-gap).exp();
    ((m - 1) as f64 * bound - rest).min(bound - worst_other)
}

fn trial_l6(g: &mut ChaCha8Rng, m: usize) -> f64 {
    softmax_gap_slack(&random_logits(g, m))
}

/// Slack of `J(a) ⪰ 0`, `‖J‖₂ ≤ 1 − ‖a‖²` and `1 − ‖a‖² ≤ 2(1 − a_max)`.
pub fn softmax_jacobian_slack(a: &[f64]) -> Result<f64> {
    let m = a.len();
    let j = DenseMatrix::from_fn(m, m, |i, k| f64::from(u8::from(i == k)) * a[i] - a[i] * a[k]);
    let eig = symmetric_eigenvalues(&j)?;
    let (top, bottom) = (eig[0], eig[m - 1]);
    let middle = 1.0 - dot(a, a);
    let a_max = a.iter().copied().fold(0.0, f64::max);
    Ok(bottom.min(middle - top).min(2.0 * (1.0 - a_max) - middle))
}

fn trial_l7(g: &mut ChaCha8Rng, m: usize) -> Result<f64> {
    let mut a = random_logits(g, m);
    softmax_in_place(&mut a);
    softmax_jacobian_slack(&a)
}

/// `r(M)/r(M/2)` for `r = ‖softmax(M) − linearized(M)‖_F`.
pub fn linearization_ratio(m: &DenseMatrix) -> Result<f64> {
    let residual = |m: &DenseMatrix| -> Result<f64> {
        Ok(softmax_rows(m).sub(&linearized_attention(m)?).frobenius())
    };
    Ok(residual(m)? / residual(&m.scale(0.5))?)
}

fn trial_l8(g: &mut ChaCha8Rng, n: usize) -> Result<f64> {
    let m = rng::gaussian_matrix(g, n, n, 1.0);
    let m = m.scale(1e-2 / m.frobenius());
    Ok(linearization_ratio(&m)? - LINEARIZATION_RATIO)
}

/// Both descent inequalities on `L(w) = ½β‖w‖²` with random `w`.
pub fn check_descent_lemma(beta: f64, eta: f64, trials: usize, seed: u64) -> Result<SuiteReport> {
    if !(beta > 0.0) || !(eta > 0.0 && eta <= 2.0 / beta) {
        return Err(Error::invalid(format!("need beta > 0 and 0 < eta <= 2/beta (beta {beta}, eta {eta})")));
    }
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    let mut report = SuiteReport::new(format!("descent beta={beta} eta={eta}"), seed, (1, 16));
    let mut gap = 0.0f64;
    for trial in 0..trials {
        let mut g = rng::stream(seed, trial as u64);
        let k = g.random_range(1..=16);
        let w: Vec<f64> = (0..k).map(|_| rng::gaussian(&mut g)).collect();
        let grad: Vec<f64> = w.iter().map(|x| beta * x).collect();
        let next: Vec<f64> = w.iter().zip(&grad).map(|(x, gx)| x - eta * gx).collect();
        let loss = |v: &[f64]| 0.5 * beta * dot(v, v);
        let dl = loss(&w) - loss(&next);
        let g2 = dot(&grad, &grad);
        let lower = eta * (1.0 - eta * beta / 2.0) * g2;
        let upper = eta * (1.0 + eta * beta / 2.0) * g2;
        report.trials += 1;
        report.record(dl - lower);
        report.record(upper - dl);
        gap = gap.max((dl - lower).abs());
    }
    if (eta * beta - 1.0).abs() < 1e-15 {
        report.equality_gap = Some(gap);
    }
    Ok(report)
}

/// Worst relative error between analytic and central-difference gradients of
/// `W_Q, W_K, W_V` at one state.
pub fn gradcheck_state(state: &ModelState, batch: &Batch) -> Result<f64> {
    let cache = forward(state, batch)?;
    let grads = backward(state, batch, &cache)?;
    let mut worst = 0.0f64;
    for (m, analytic) in grads.trainable().iter().enumerate() {
        for idx in 0..analytic.as_slice().len() {
            let eval = |delta: f64| -> Result<f64> {
                let mut s = state.clone();
                s.trainable_mut()[m].as_mut_slice()[idx] += delta;
                Ok(forward(&s, batch)?.loss)
            };
            let fd = (eval(FD_STEP)? - eval(-FD_STEP)?) / (2.0 * FD_STEP);
            let a = analytic.as_slice()[idx];
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(GRAD_ABS_FLOOR);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Gradient check over `configs` random models with `n, d ≤ 8`, `C ≤ 5`.
pub fn finite_diff_gradcheck(configs: usize, seed: u64) -> Result<SuiteReport> {
    if configs == 0 {
        return Err(Error::invalid("need at least one config"));
    }
    let mut report = SuiteReport::new("gradcheck", seed, (2, 8));
    let mut worst = 0.0f64;
    for trial in 0..configs {
        let mut g = rng::stream(seed, trial as u64);
        let config = ModelConfig {
            n: g.random_range(2..=8),
            d: g.random_range(2..=8),
            classes: g.random_range(2..=5),
            init_sigma: 0.5,
            seed: g.random(),
        };
        let data = DataSpec {
            noise: 0.5,
            mean_norm: 1.0,
        };
        let state = init_params(&config)?;
        let batch = gen_dataset(&config, &data, config.seed)?;
        let err = gradcheck_state(&state, &batch)?;
        worst = worst.max(err);
        report.trials += 1;
        report.record(GRAD_REL_TOL - err);
    }
    report.max_error = Some(worst);
    Ok(report)
}

/// Phase-I loss-decrease bound `3D²η / (2(1+√d))`.
pub fn check_phase1_bound(d: usize, eta: f64, d_const: f64) -> f64 {
    3.0 * d_const * d_const * eta / (2.0 * (1.0 + (d as f64).sqrt()))
}

/// Least-squares slope of `ln ΔL` on `ln ΔΣ` over pairs `(ΔΣ, ΔL)` with both
/// coordinates positive. `None` with fewer than 5 such pairs or a constant
/// abscissa.
pub fn fit_phase2_exponent(pairs: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = pairs
        .iter()
        .filter(|(s, l)| *s > 0.0 && *l > 0.0 && s.is_finite() && l.is_finite())
        .map(|(s, l)| (s.ln(), l.ln()))
        .collect();
    if pts.len() < 5 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let scale: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    if sxx <= 1e-24 * scale.max(f64::MIN_POSITIVE) {
        return None;
    }
    Some(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirsky_orthogonal_example() {
        let mut g = rng::stream(3, 0);
        let a = rng::gaussian_matrix(&mut g, 5, 4, 1.0);
        let r = semi_orthogonal(&rng::gaussian_matrix(&mut g, 5, 5, 1.0));
        let b = r.matmul(&a);
        let (sa, sb) = (sorted_sv(&a), sorted_sv(&b));
        let spectral: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(spectral < 1e-12);
        assert!(a.sub(&b).frobenius() - spectral > 0.0);
    }

    #[test]
    fn softmax_gap_example() {
        let u = [2.0, 0.0, 0.0];
        let mut s = u.to_vec();
        softmax_in_place(&mut s);
        assert!((1.0 - s[0] - 0.21301).abs() < 1e-5);
        assert!((2.0 * (-2f64).exp() - 0.27067).abs() < 1e-5);
        assert!(softmax_gap_slack(&u) > 0.0);
    }

    #[test]
    fn jacobian_example() {
        // ‖J‖₂ = 0.5 = 1 − ‖a‖², 2(1 − a_max) = 1.
        let slack = softmax_jacobian_slack(&[0.5, 0.5]).unwrap();
        assert!(slack.abs() < 1e-15);
        let j = DenseMatrix::from_rows(&[vec![0.25, -0.25], vec![-0.25, 0.25]]).unwrap();
        assert!((symmetric_eigenvalues(&j).unwrap()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn descent_examples() {
        // β = 2, η = 1/2, w = 1: ΔL = 1, lower = 1, upper = 3.
        let (beta, eta, w): (f64, f64, f64) = (2.0, 0.5, 1.0);
        let g = beta * w;
        let dl = 0.5 * beta * w * w - 0.5 * beta * (w - eta * g).powi(2);
        assert_eq!(dl, 1.0);
        assert_eq!(eta * (1.0 - eta * beta / 2.0) * g * g, 1.0);
        assert_eq!(eta * (1.0 + eta * beta / 2.0) * g * g, 3.0);

        let r = check_descent_lemma(2.0, 0.5, 200, 1).unwrap();
        assert!(r.passed());
        assert!(r.equality_gap.unwrap() < 1e-12);
        let r = check_descent_lemma(2.0, 0.25, 200, 1).unwrap();
        assert!(r.passed());
        assert!(r.equality_gap.is_none());
        let tiny = check_descent_lemma(2.0, 1e-12, 10, 1).unwrap();
        assert!(tiny.passed() && tiny.worst_slack.abs() < 1e-9);
        assert!(check_descent_lemma(2.0, 1.5, 10, 1).is_err());
    }

    #[test]
    fn phase1_bound_examples() {
        assert!((check_phase1_bound(4, 0.1, 1.0) - 0.05).abs() < 1e-15);
        assert_eq!(check_phase1_bound(4, 0.1, 0.0), 0.0);
        assert!((check_phase1_bound(9, 0.2, 1.5) - 2.0 * check_phase1_bound(9, 0.1, 1.5)).abs() < 1e-15);
    }

    #[test]
    fn exponent_fits() {
        let xs: Vec<f64> = (1..20).map(|i| 1e-3 * i as f64).collect();
        let cubic: Vec<_> = xs.iter().map(|&x| (x, x.powi(3))).collect();
        assert!((fit_phase2_exponent(&cubic).unwrap() - 3.0).abs() < 1e-9);
        let linear: Vec<_> = xs.iter().map(|&x| (x, 7.0 * x)).collect();
        assert!((fit_phase2_exponent(&linear).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(fit_phase2_exponent(&cubic[..4]), None);
        assert_eq!(fit_phase2_exponent(&[(0.1, 1.0); 8]), None);

        let mut g = rng::stream(11, 0);
        let noisy: Vec<_> = xs
            .iter()
            .map(|&x| (x, x.powi(3) * g.random_range(0.9..1.1)))
            .collect();
        let p = fit_phase2_exponent(&noisy).unwrap();
        assert!((2.5..=3.5).contains(&p), "{p}");
    }

    #[test]
    fn gradcheck_zero_gradient_instance() {
        // One class only in the labels and a readout that already separates
        // it perfectly is hard to force; zero W_V gives uniform logits whose
        // gradient wrt W_Q and W_K is exactly zero.
        let config = ModelConfig { n: 4, d: 3, classes: 2, init_sigma: 0.5, seed: 1 };
        let mut state = init_params(&config).unwrap();
        state.wv = DenseMatrix::zeros(3, 3);
        let batch = gen_dataset(&config, &DataSpec::default(), 1).unwrap();
        let cache = forward(&state, &batch).unwrap();
        let grads = backward(&state, &batch, &cache).unwrap();
        assert!(grads.wq.max_abs() == 0.0 && grads.wk.max_abs() == 0.0);
        assert!(gradcheck_state(&state, &batch).unwrap() < GRAD_REL_TOL);
    }

    #[test]
    fn directional_derivative_matches_oracle() {
        let config = ModelConfig { n: 5, d: 4, classes: 3, init_sigma: 0.5, seed: 4 };
        let state = init_params(&config).unwrap();
        let batch = gen_dataset(&config, &DataSpec::default(), 4).unwrap();
        let g = backward(&state, &batch, &forward(&state, &batch).unwrap()).unwrap();
        let shift = |h: f64| {
            let mut s = state.clone();
            s.wq[(1, 2)] += h;
            forward(&s, &batch).unwrap().loss
        };
        let fd = (shift(FD_STEP) - shift(-FD_STEP)) / (2.0 * FD_STEP);
        assert!((fd - g.wq[(1, 2)]).abs() < 1e-9);
    }

    #[test]
    fn small_suites_pass_and_repeat() {
        for lemma in Lemma::ALL {
            let a = check_inequality_suite(lemma, 200, 7, 2..=16).unwrap();
            assert!(a.passed(), "{a}");
            let b = check_inequality_suite(lemma, 200, 7, 2..=16).unwrap();
            assert_eq!(a, b);
        }
        assert!(check_inequality_suite(Lemma::L1, 0, 7, 2..=16).is_err());
        assert!(check_inequality_suite(Lemma::L1, 5, 7, 1..=16).is_err());
    }

    #[test]
    fn gradcheck_passes() {
        let r = finite_diff_gradcheck(20, 5).unwrap();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn lemma_names_parse() {
        assert_eq!("l7".parse::<Lemma>().unwrap(), Lemma::L7);
        assert!("L5".parse::<Lemma>().is_err());
    }
}

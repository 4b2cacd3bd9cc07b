//! Per-step measurements, threshold prediction and two-phase detection.

mod phase;

pub use phase::{
    assumption_monitor, descent_monitor, detect_sosd_onset, detect_sosd_onset_with,
    lipschitz_slacks, phase_report, sd_series, AssumptionReport, DescentReport, EpsilonMode,
    PhaseOptions, PhaseReport, DEFAULT_ONSET_WINDOW,
};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::model::{ForwardCache, ModelState};
use crate::spectral::SpectralSnapshot;

/// Telemetry for one trainable matrix at one step. `NaN` marks a skipped value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixMetrics {
    pub fro_norm: f64,
    /// Nuclear norm `τ`.
    pub nuc_norm: f64,
    /// `INFINITY` when the matrix is numerically singular.
    pub cond: f64,
    pub grad_norm: f64,
    /// SD variation from the previous step to this one.
    pub sd_var: f64,
    /// `cos⟨W_t, W_T⟩`, filled in after the run.
    pub cos_to_final: f64,
}

impl MatrixMetrics {
    pub fn skipped() -> Self {
        Self {
            fro_norm: f64::NAN,
            nuc_norm: f64::NAN,
            cond: f64::NAN,
            grad_norm: f64::NAN,
            sd_var: f64::NAN,
            cos_to_final: f64::NAN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub step: u64,
    pub loss: f64,
    /// Rate used for the update out of this step.
    pub lr: f64,
    /// `W_Q`, `W_K`, `W_V` in that order.
    pub matrices: [MatrixMetrics; 3],
    pub gamma_min: f64,
    pub omega_min: f64,
    /// Smoothness estimate between the previous step and this one.
    pub beta_est: f64,
    /// `‖G_H‖_F`; not persisted in trace files.
    pub gh_norm: f64,
}

impl MetricsRecord {
    /// `‖∇L‖²` over the concatenated trainable matrices.
    pub fn grad_sq_norm(&self) -> f64 {
        self.matrices.iter().map(|m| m.grad_norm * m.grad_norm).sum()
    }
}

/// Largest minus second-largest entry.
pub fn gap(u: &[f64]) -> Result<f64> {
    if u.len() < 2 {
        return Err(Error::invalid("gap needs at least two entries"));
    }
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &x in u {
        if x > first {
            second = first;
            first = x;
        } else if x > second {
            second = x;
        }
    }
    Ok(first - second)
}

/// `(γ_min, ω_min)` for the given nuclear norms of `W_Q, W_K, W_V`.
pub fn margins_with_norms(cache: &ForwardCache, labels: &[usize], nuc: [f64; 3]) -> Result<(f64, f64)> {
    if nuc.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::Degenerate("margins need nonzero nuclear norms".into()));
    }
    if labels.len() != cache.z.rows() {
        return Err(Error::shape("label count differs from logit rows"));
    }
    let score_scale = 1.0 / (nuc[0] * nuc[1]);
    let mut gamma = f64::INFINITY;
    let mut row = vec![0.0; cache.m.cols()];
    for i in 0..cache.m.rows() {
        for (r, &m) in row.iter_mut().zip(cache.m.row(i)) {
            *r = m * score_scale;
        }
        gamma = gamma.min(gap(&row)?);
    }
    let mut omega = f64::INFINITY;
    for (i, &y) in labels.iter().enumerate() {
        let z = cache.z.row(i);
        let rival = z
            .iter()
            .enumerate()
            .filter(|&(c, _)| c != y)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        omega = omega.min((z[y] - rival) / nuc[2]);
    }
    Ok((gamma, omega))
}

/// Attention margin `γ_min` and logit margin `ω_min`. Either may be negative.
pub fn margins(state: &ModelState, cache: &ForwardCache, labels: &[usize]) -> Result<(f64, f64)> {
    let mut nuc = [0.0; 3];
    for (t, w) in nuc.iter_mut().zip(state.trainable()) {
        *t = SpectralSnapshot::of(w)?.trace();
    }
    margins_with_norms(cache, labels, nuc)
}

/// `‖∇_{t+1} − ∇_t‖ / ‖θ_{t+1} − θ_t‖` over the concatenated matrices.
pub fn estimate_beta(
    theta_t: &[&DenseMatrix],
    theta_next: &[&DenseMatrix],
    grad_t: &[&DenseMatrix],
    grad_next: &[&DenseMatrix],
) -> Result<f64> {
    let n = theta_t.len();
    if theta_next.len() != n || grad_t.len() != n || grad_next.len() != n {
        return Err(Error::shape("estimate_beta inputs have different lengths"));
    }
    let sq_diff = |a: &[&DenseMatrix], b: &[&DenseMatrix]| -> Result<f64> {
        let mut s = 0.0;
        for (x, y) in a.iter().zip(b) {
            if x.shape() != y.shape() {
                return Err(Error::shape("estimate_beta shape mismatch"));
            }
            s += x.sub(y).frobenius().powi(2);
        }
        Ok(s)
    };
    let disp = sq_diff(theta_next, theta_t)?.sqrt();
    if disp == 0.0 {
        return Err(Error::Degenerate("zero parameter displacement".into()));
    }
    Ok(sq_diff(grad_next, grad_t)?.sqrt() / disp)
}

/// `ε = (1+√d)·η·G/τ`, the per-step cap on SD variation.
pub fn stability_bound(d: usize, eta: f64, g: f64, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::Degenerate("stability bound needs a positive nuclear norm".into()));
    }
    Ok((1.0 + (d as f64).sqrt()) * eta * g / tau)
}

/// Measured inputs of the threshold formulas.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ThresholdConstants {
    pub d: usize,
    pub eta: f64,
    /// Running-max gradient norm.
    pub g: f64,
    /// Initial Frobenius norms of `W_V`, `W_Q`, `W_K`.
    pub v0: f64,
    pub q0: f64,
    pub k0: f64,
    pub c_v: f64,
    pub c_m: f64,
    pub epsilon: f64,
    /// Unspecified constant in front of `T*`.
    pub c: f64,
}

impl ThresholdConstants {
    pub fn c0(&self) -> f64 {
        self.c_m * self.v0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Thresholds {
    pub t_v: f64,
    /// `√(C₀² + 2C₀Λη G)`.
    pub t_qk: f64,
    /// Exact hitting time `(−C₀ + √(C₀² + 2C₀Λ)) / (C_M C_V)`.
    pub t_qk_exact: f64,
    pub t_star: f64,
    pub lambda: f64,
    /// Set when `Λ(ε) ≤ 0`, i.e. the bound already holds at initialization.
    pub qk_already_stable: bool,
}

pub fn predict_thresholds(k: &ThresholdConstants) -> Result<Thresholds> {
    let positive = [
        ("epsilon", k.epsilon),
        ("C_V", k.c_v),
        ("C_M", k.c_m),
        ("v0", k.v0),
        ("q0", k.q0),
        ("G", k.g),
        ("eta", k.eta),
        ("C", k.c),
    ];
    if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::invalid(format!("{name} must be positive, got {v}")));
    }
    if k.d == 0 {
        return Err(Error::invalid("d must be positive"));
    }
    let sd = (k.d as f64).sqrt();
    let drive = (1.0 + sd) * k.eta * k.g;
    let t_v = ((drive - k.epsilon * k.v0) / (k.epsilon * k.c_v * sd)).max(0.0);
    let lambda = (1.0 + sd).ln() - (k.epsilon * k.q0 * sd).ln();
    let c0 = k.c0();
    let (t_qk, t_qk_exact, qk_already_stable) = if lambda <= 0.0 {
        (0.0, 0.0, true)
    } else {
        let t = (c0 * c0 + 2.0 * c0 * lambda * k.eta * k.g).sqrt();
        let exact = (-c0 + (c0 * c0 + 2.0 * c0 * lambda).sqrt()) / (k.c_m * k.c_v);
        (t, exact, false)
    };
    let v_branch = drive / (k.epsilon * k.c_v * sd);
    Ok(Thresholds {
        t_v,
        t_qk,
        t_qk_exact,
        t_star: k.c * v_branch.max(t_qk),
        lambda,
        qk_already_stable,
    })
}

/// `C_V = λ_min(X)·‖G_H(0)‖_F / √n`.
pub fn c_v(n: usize, lambda_min_x: f64, gh0: f64) -> f64 {
    lambda_min_x * gh0 / (n as f64).sqrt()
}

/// `C_Q = (√n − 1)·λ_min³·‖G_H‖_F / (n^{3/2} d^{5/2} κ_K κ_V)`; `C_K` swaps `κ_K` for `κ_Q`.
pub fn c_qk(n: usize, d: usize, lambda_min_x: f64, gh0: f64, kappa_a: f64, kappa_b: f64) -> f64 {
    let (n, d) = (n as f64, d as f64);
    (n.sqrt() - 1.0) * lambda_min_x.powi(3) * gh0 / (n.powf(1.5) * d.powf(2.5) * kappa_a * kappa_b)
}

/// Median of the finite entries, `None` if there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    })
}

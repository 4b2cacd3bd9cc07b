use serde::Serialize;

use super::{median, stability_bound, MetricsRecord};
use crate::error::{Error, Result};
use crate::verification::{check_phase1_bound, fit_phase2_exponent};

pub const DEFAULT_ONSET_WINDOW: usize = 50;
const BETA_WINDOW: usize = 100;

/// Smallest `t` with `trace[s] < ε` for every `s` in `[t, t + window)`.
pub fn detect_sosd_onset(trace: &[f64], epsilon: f64, window: usize) -> Result<Option<usize>> {
    detect_sosd_onset_with(trace, &vec![epsilon; trace.len()], window)
}

/// Onset detection against a per-step threshold. `NaN` entries never count
/// as stable.
pub fn detect_sosd_onset_with(trace: &[f64], epsilon: &[f64], window: usize) -> Result<Option<usize>> {
    if trace.is_empty() {
        return Err(Error::invalid("empty SD-variation trace"));
    }
    if window == 0 {
        return Err(Error::invalid("onset window must be at least 1"));
    }
    if epsilon.len() != trace.len() {
        return Err(Error::shape("threshold series length differs from trace"));
    }
    let mut run = 0;
    for (t, (&v, &e)) in trace.iter().zip(epsilon).enumerate() {
        if v < e {
            run += 1;
            if run == window {
                return Ok(Some(t + 1 - window));
            }
        } else {
            run = 0;
        }
    }
    Ok(None)
}

/// `ΔΣ_t`, the SD variation from step `t` to `t + 1`, for matrix `m`.
pub fn sd_series(records: &[MetricsRecord], m: usize) -> Vec<f64> {
    records.iter().skip(1).map(|r| r.matrices[m].sd_var).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsilonMode {
    /// `(1+√d)·η_t·G_t/τ_t` with `G_t` the running-max gradient norm.
    StabilityBound,
    Fixed(f64),
}

fn epsilon_series(records: &[MetricsRecord], d: usize, mode: EpsilonMode, m: usize) -> Vec<f64> {
    let mut g = 0.0f64;
    records[..records.len() - 1]
        .iter()
        .map(|r| {
            for mm in &r.matrices {
                if mm.grad_norm.is_finite() {
                    g = g.max(mm.grad_norm);
                }
            }
            match mode {
                EpsilonMode::Fixed(e) => e,
                EpsilonMode::StabilityBound => {
                    stability_bound(d, r.lr, g, r.matrices[m].nuc_norm).unwrap_or(f64::NAN)
                }
            }
        })
        .collect()
}

/// Slack of `ΔΣ_t ≤ (1+√d)/min(τ_t, τ_{t+1})·η_t·‖G_t‖_F` for matrix `m`;
/// negative entries are violations.
pub fn lipschitz_slacks(records: &[MetricsRecord], d: usize, m: usize) -> Vec<f64> {
    let k = 1.0 + (d as f64).sqrt();
    records
        .windows(2)
        .map(|w| {
            let (a, b) = (&w[0].matrices[m], &w[1].matrices[m]);
            let tau = a.nuc_norm.min(b.nuc_norm);
            k / tau * w[0].lr * a.grad_norm - b.sd_var
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    /// `(step, matrix index)` where a Frobenius norm decreased.
    pub norm_decreases: Vec<(u64, usize)>,
    pub max_condition: [f64; 3],
    pub max_grad_norm: [f64; 3],
    /// Running max over all matrices and steps.
    pub g: f64,
    /// `None` when `‖G_H‖` was not recorded.
    pub gh_vanished: Option<bool>,
}

/// Never fails; malformed or short traces produce an empty report.
pub fn assumption_monitor(records: &[MetricsRecord]) -> AssumptionReport {
    let mut report = AssumptionReport {
        norm_decreases: Vec::new(),
        max_condition: [0.0; 3],
        max_grad_norm: [0.0; 3],
        g: 0.0,
        gh_vanished: None,
    };
    for (i, r) in records.iter().enumerate() {
        for (m, mm) in r.matrices.iter().enumerate() {
            if i > 0 && mm.fro_norm < records[i - 1].matrices[m].fro_norm {
                report.norm_decreases.push((r.step, m));
            }
            if !mm.cond.is_nan() {
                report.max_condition[m] = report.max_condition[m].max(mm.cond);
            }
            if mm.grad_norm.is_finite() {
                report.max_grad_norm[m] = report.max_grad_norm[m].max(mm.grad_norm);
                report.g = report.g.max(mm.grad_norm);
            }
        }
        if r.gh_norm.is_finite() {
            let vanished = r.gh_norm < 1e-12;
            report.gh_vanished = Some(report.gh_vanished.unwrap_or(false) || vanished);
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DescentReport {
    pub checked: usize,
    pub violations: usize,
    pub worst_slack: f64,
}

/// Both descent inequalities along a trajectory with `β̂` the running max of
/// the recorded estimates. Steps with `η·β̂ ≥ 2` are not checked.
pub fn descent_monitor(records: &[MetricsRecord]) -> DescentReport {
    let mut report = DescentReport {
        checked: 0,
        violations: 0,
        worst_slack: f64::INFINITY,
    };
    let mut beta = 0.0f64;
    for w in records.windows(2) {
        if w[1].beta_est.is_finite() {
            beta = beta.max(w[1].beta_est);
        }
        let eta = w[0].lr;
        if !(eta * beta < 2.0) {
            continue;
        }
        let g2 = w[0].grad_sq_norm();
        let dl = w[0].loss - w[1].loss;
        let tol = 1e-6 * w[0].loss.max(1.0);
        let lower = eta * (1.0 - eta * beta / 2.0) * g2;
        let upper = eta * (1.0 + eta * beta / 2.0) * g2;
        let slack = (dl - lower).min(upper - dl) + tol;
        report.checked += 1;
        report.worst_slack = report.worst_slack.min(slack);
        if slack < 0.0 {
            report.violations += 1;
        }
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseOptions {
    pub d: usize,
    pub window: usize,
    pub epsilon: EpsilonMode,
}

impl PhaseOptions {
    pub fn new(d: usize) -> Self {
        Self {
            d,
            window: DEFAULT_ONSET_WINDOW,
            epsilon: EpsilonMode::StabilityBound,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseReport {
    /// Empirical onset step per matrix.
    pub onsets: [Option<u64>; 3],
    /// Last step of phase I.
    pub t_f: u64,
    /// First step after which all matrices are stable; `None` if one never is.
    pub t_s: Option<u64>,
    pub t_beta: Option<u64>,
    pub phase1_mean_dl: f64,
    pub phase2_mean_dl: Option<f64>,
    pub p_hat: Option<f64>,
    pub d_estimate: f64,
    /// `3D²η/(2(1+√d))` with `η` the mean phase-I rate.
    pub phase1_bound: f64,
    /// `3D²/(2(1+√d))`, the `η = 1/β` form.
    pub phase1_bound_unit_step: f64,
}

pub fn phase_report(records: &[MetricsRecord], opts: &PhaseOptions) -> Result<PhaseReport> {
    if records.len() < 2 {
        return Err(Error::invalid("phase report needs at least two records"));
    }
    if records.windows(2).any(|w| w[1].step != w[0].step + 1) {
        return Err(Error::invalid("phase report needs consecutive steps"));
    }
    let base = records[0].step;
    let transitions = records.len() - 1;
    let deltas: Vec<Vec<f64>> = (0..3).map(|m| sd_series(records, m)).collect();

    let mut onsets = [None; 3];
    for (m, onset) in onsets.iter_mut().enumerate() {
        let eps = epsilon_series(records, opts.d, opts.epsilon, m);
        *onset = detect_sosd_onset_with(&deltas[m], &eps, opts.window)?;
    }
    let earliest = onsets.iter().flatten().min().copied();
    let t_s = if onsets.iter().all(Option::is_some) {
        onsets.iter().flatten().max().copied()
    } else {
        None
    };
    let t_f = match earliest {
        Some(e) => e.saturating_sub(1),
        None => transitions - 1,
    };

    let dl: Vec<f64> = records.windows(2).map(|w| w[0].loss - w[1].loss).collect();
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let phase1_mean_dl = mean(&dl[..=t_f]);
    let phase2 = t_s.map(|s| s + 1).filter(|&s| s < transitions);
    let phase2_mean_dl = phase2.map(|s| mean(&dl[s..]));

    let max_delta = |t: usize| {
        deltas
            .iter()
            .map(|d| d[t])
            .filter(|v| v.is_finite())
            .fold(f64::NAN, f64::max)
    };
    let p_hat = phase2.and_then(|s| {
        let pairs: Vec<(f64, f64)> = (s..transitions).map(|t| (max_delta(t), dl[t])).collect();
        fit_phase2_exponent(&pairs)
    });

    let d_estimate = (0..=t_f)
        .map(|t| {
            (0..3)
                .map(|m| records[t].matrices[m].nuc_norm * deltas[m][t])
                .filter(|v| v.is_finite())
                .fold(f64::NAN, f64::max)
        })
        .filter(|v| v.is_finite())
        .fold(f64::INFINITY, f64::min);
    let d_estimate = if d_estimate.is_finite() { d_estimate } else { 0.0 };
    let eta1 = mean(&records[..=t_f].iter().map(|r| r.lr).collect::<Vec<_>>());
    let phase1_bound = check_phase1_bound(opts.d, eta1, d_estimate);
    let phase1_bound_unit_step = check_phase1_bound(opts.d, 1.0, d_estimate);

    let betas: Vec<f64> = records.iter().map(|r| r.beta_est).collect();
    let t_beta = beta_threshold(&betas, BETA_WINDOW);

    let at = |i: usize| base + i as u64;
    Ok(PhaseReport {
        onsets: onsets.map(|o| o.map(at)),
        t_f: at(t_f),
        t_s: t_s.map(at),
        t_beta: t_beta.map(at),
        phase1_mean_dl,
        phase2_mean_dl,
        p_hat,
        d_estimate,
        phase1_bound,
        phase1_bound_unit_step,
    })
}

/// First index after which every estimate stays within a factor 2 of its
/// trailing median for `window` consecutive steps.
fn beta_threshold(betas: &[f64], window: usize) -> Option<usize> {
    let within: Vec<bool> = (0..betas.len())
        .map(|t| {
            let lo = (t + 1).saturating_sub(window);
            match median(&betas[lo..=t]) {
                Some(m) if betas[t].is_finite() => betas[t] <= 2.0 * m && betas[t] >= 0.5 * m,
                _ => false,
            }
        })
        .collect();
    let mut run = 0;
    for (t, &ok) in within.iter().enumerate() {
        run = if ok { run + 1 } else { 0 };
        if run == window {
            return Some(t + 1 - window);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::MatrixMetrics;

    fn record(step: u64, loss: f64, fro: f64, grad: f64, sd: f64) -> MetricsRecord {
        let mm = MatrixMetrics {
            fro_norm: fro,
            nuc_norm: fro,
            cond: 1.0,
            grad_norm: grad,
            sd_var: sd,
            cos_to_final: f64::NAN,
        };
        MetricsRecord {
            step,
            loss,
            lr: 0.1,
            matrices: [mm; 3],
            gamma_min: 0.0,
            omega_min: 0.0,
            beta_est: f64::NAN,
            gh_norm: f64::NAN,
        }
    }

    #[test]
    fn onset_examples() {
        let trace = [1.0, 1.0, 0.1, 0.01, 0.005, 0.004];
        assert_eq!(detect_sosd_onset(&trace, 0.05, 2).unwrap(), Some(3));
        assert_eq!(detect_sosd_onset(&trace, 1e-3, 2).unwrap(), None);
        assert_eq!(detect_sosd_onset(&trace, 0.2, 1).unwrap(), Some(2));
        assert!(detect_sosd_onset(&[], 0.1, 1).is_err());
        assert!(detect_sosd_onset(&trace, 0.1, 0).is_err());
        assert_eq!(detect_sosd_onset(&[0.0, f64::NAN, 0.0], 1.0, 2).unwrap(), None);
    }

    #[test]
    fn monitor_examples() {
        let recs: Vec<_> = [1.0, 1.1, 1.2]
            .iter()
            .enumerate()
            .map(|(i, &f)| record(i as u64, 1.0, f, 1.0, 0.0))
            .collect();
        assert!(assumption_monitor(&recs).norm_decreases.is_empty());

        let recs = vec![record(0, 1.0, 1.0, 0.5, 0.0), record(1, 1.0, 0.9, 2.0, 0.0)];
        let r = assumption_monitor(&recs);
        assert_eq!(r.norm_decreases, vec![(1, 0), (1, 1), (1, 2)]);

        let recs: Vec<_> = [0.5, 2.0, 1.0]
            .iter()
            .enumerate()
            .map(|(i, &g)| record(i as u64, 1.0, 1.0, g, 0.0))
            .collect();
        let r = assumption_monitor(&recs);
        assert_eq!(r.g, 2.0);
        assert_eq!(r.gh_vanished, None);
    }

    fn synthetic(dl: &[f64], ds: &[f64]) -> Vec<MetricsRecord> {
        let mut loss = 10.0;
        let mut recs = vec![record(0, loss, 1.0, 1.0, f64::NAN)];
        for (t, (&l, &s)) in dl.iter().zip(ds).enumerate() {
            loss -= l;
            recs.push(record(t as u64 + 1, loss, 1.0, 1.0, s));
        }
        recs
    }

    #[test]
    fn exact_power_law_gives_exponent() {
        let ds: Vec<f64> = (0..40).map(|t| if t < 3 { 1.0 } else { 0.01 * (1.0 + t as f64 * 0.1) }).collect();
        let dl: Vec<f64> = ds.iter().map(|s| s.powi(3)).collect();
        let opts = PhaseOptions { d: 4, window: 5, epsilon: EpsilonMode::Fixed(0.5) };
        let r = phase_report(&synthetic(&dl, &ds), &opts).unwrap();
        assert_eq!(r.onsets, [Some(3); 3]);
        assert_eq!(r.t_f, 2);
        assert_eq!(r.t_s, Some(3));
        assert!((r.p_hat.unwrap() - 3.0).abs() < 1e-9);
        assert!(r.phase1_mean_dl > r.phase2_mean_dl.unwrap());
    }

    #[test]
    fn single_step_phase_one() {
        let ds: Vec<f64> = (0..20).map(|t| if t == 0 { 1.0 } else { 0.01 }).collect();
        let dl = vec![0.1; 20];
        let opts = PhaseOptions { d: 4, window: 3, epsilon: EpsilonMode::Fixed(0.5) };
        let r = phase_report(&synthetic(&dl, &ds), &opts).unwrap();
        assert_eq!(r.onsets, [Some(1); 3]);
        assert_eq!(r.t_f, 0);
        // Constant abscissa in phase II: no exponent.
        assert_eq!(r.p_hat, None);
        // D = τ·δ at step 0 = 1.
        assert_eq!(r.d_estimate, 1.0);
        assert!((r.phase1_bound - 0.05).abs() < 1e-15);
    }

    #[test]
    fn report_rejects_gaps() {
        let mut recs = synthetic(&[0.1, 0.1], &[0.1, 0.1]);
        recs[2].step = 5;
        assert!(phase_report(&recs, &PhaseOptions::new(4)).is_err());
    }

    #[test]
    fn descent_on_exact_quadratic_trajectory() {
        // L = w², GD with η = 0.1 from w = 1; gradient 2w, β = 2.
        let mut recs = Vec::new();
        let mut w: f64 = 1.0;
        for t in 0..10 {
            let mut r = record(t, w * w, 1.0, 0.0, 0.0);
            r.matrices[0].grad_norm = 2.0 * w;
            r.matrices[1].grad_norm = 0.0;
            r.matrices[2].grad_norm = 0.0;
            r.beta_est = if t == 0 { f64::NAN } else { 2.0 };
            recs.push(r);
            w -= 0.1 * 2.0 * w;
        }
        let r = descent_monitor(&recs);
        assert_eq!(r.checked, 9);
        assert_eq!(r.violations, 0);
    }

    #[test]
    fn beta_threshold_finds_settling() {
        let mut b: Vec<f64> = (0..50).map(|t| if t % 2 == 0 { 100.0 } else { 0.01 }).collect();
        b.extend(std::iter::repeat(3.0).take(150));
        let t = beta_threshold(&b, 100).unwrap();
        assert!((50..=100).contains(&t), "{t}");
    }
}

//! Training loop with full per-step telemetry.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io::config::RunConfig;
use crate::linalg::{singular_values, DenseMatrix};
use crate::model::{self, backward, forward, init_params, GradientSet, ModelState};
use crate::optim::{lr_at, optimizer_step, OptState};
use crate::spectral::{sd_variation, NormBundle, SpectralSnapshot};
use crate::telemetry::{
    self, estimate_beta, margins_with_norms, stability_bound, MatrixMetrics, MetricsRecord,
    ThresholdConstants,
};

/// Run-level quantities needed by the threshold formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConstants {
    pub n: usize,
    pub d: usize,
    /// Smallest singular value of the step-0 input.
    pub lambda_min_x: f64,
    /// `‖G_H‖_F` at step 0.
    pub gh0: f64,
    /// Running-max condition numbers of `W_Q, W_K, W_V`.
    pub kappa: [f64; 3],
    /// Initial Frobenius norms of `W_Q, W_K, W_V`.
    pub init_norms: [f64; 3],
    /// Running-max gradient norm.
    pub g: f64,
    pub c_v: f64,
    pub c_m: f64,
    /// Smallest final-step stability bound over the three matrices.
    pub epsilon: f64,
    pub base_lr: f64,
}

impl RunConstants {
    pub fn threshold_constants(&self, c: f64) -> ThresholdConstants {
        ThresholdConstants {
            d: self.d,
            eta: self.base_lr,
            g: self.g,
            v0: self.init_norms[2],
            q0: self.init_norms[0],
            k0: self.init_norms[1],
            c_v: self.c_v,
            c_m: self.c_m,
            epsilon: self.epsilon,
            c,
        }
    }
}

pub struct StepView<'a> {
    pub state: &'a ModelState,
    pub record: &'a MetricsRecord,
}

pub struct TrainSummary {
    pub records: Vec<MetricsRecord>,
    pub final_state: ModelState,
    pub constants: RunConstants,
}

fn matrix_metrics(
    snap: Option<&SpectralSnapshot>,
    prev: Option<&SpectralSnapshot>,
    grad: &DenseMatrix,
) -> MatrixMetrics {
    let mut m = MatrixMetrics::skipped();
    m.grad_norm = grad.frobenius();
    if let Some(s) = snap {
        let norms = NormBundle::from_snapshot(s);
        m.fro_norm = norms.frobenius;
        m.nuc_norm = norms.nuclear;
        m.cond = norms.condition_number;
        if let Some(p) = prev {
            m.sd_var = sd_variation(p, s).unwrap_or(f64::NAN);
        }
    }
    m
}

/// Trains for `config.train.steps` updates, calling `on_step` after the
/// telemetry of each of the `steps + 1` visited states is computed.
pub fn train(
    config: &RunConfig,
    mut on_step: impl FnMut(StepView<'_>) -> Result<()>,
) -> Result<TrainSummary> {
    config.validate()?;
    let steps = config.train.steps;
    let d = config.model.d;
    let data = config.data.spec();
    let data_seed = config.data_seed();
    let mut state = init_params(&config.model)?;
    let mut opt = OptState::new(&config.optimizer, &state);
    let mut batch = model::gen_dataset(&config.model, &data, data_seed)?;

    let lambda_min_x = *singular_values(&batch.x)?.last().expect("nonempty");
    let init_norms = state.trainable().map(DenseMatrix::frobenius);
    let mut kappa = [0.0f64; 3];
    let mut g_max = 0.0f64;
    let mut gh0 = f64::NAN;

    let mut records = Vec::with_capacity(steps as usize + 1);
    let mut prev_snaps: [Option<SpectralSnapshot>; 3] = [None, None, None];
    let mut prev_point: Option<(ModelState, GradientSet)> = None;

    for t in 0..=steps {
        if config.data.resample && t > 0 {
            batch = model::gen_batch(&config.model, &data, data_seed, t)?;
        }
        let cache = forward(&state, &batch)?;
        let grads = backward(&state, &batch, &cache)?;
        let gh_norm = grads.h.frobenius();
        if t == 0 {
            gh0 = gh_norm;
        }

        let snaps: Vec<Option<SpectralSnapshot>> = state
            .trainable()
            .iter()
            .map(|w| SpectralSnapshot::of(w).ok())
            .collect();
        let mut matrices = [MatrixMetrics::skipped(); 3];
        for (i, mm) in matrices.iter_mut().enumerate() {
            *mm = matrix_metrics(snaps[i].as_ref(), prev_snaps[i].as_ref(), grads.trainable()[i]);
            if !mm.cond.is_nan() {
                kappa[i] = kappa[i].max(mm.cond);
            }
            g_max = g_max.max(mm.grad_norm);
        }
        let nuc = matrices.map(|m| m.nuc_norm);
        let (gamma_min, omega_min) =
            margins_with_norms(&cache, &batch.labels, nuc).unwrap_or((f64::NAN, f64::NAN));
        let beta_est = match &prev_point {
            Some((ps, pg)) => estimate_beta(
                &ps.trainable(),
                &state.trainable(),
                &pg.trainable(),
                &grads.trainable(),
            )
            .unwrap_or(f64::NAN),
            None => f64::NAN,
        };
        let lr = lr_at(&config.schedule, t, steps)?;
        let record = MetricsRecord {
            step: t,
            loss: cache.loss,
            lr,
            matrices,
            gamma_min,
            omega_min,
            beta_est,
            gh_norm,
        };
        on_step(StepView {
            state: &state,
            record: &record,
        })?;
        records.push(record);
        for (p, s) in prev_snaps.iter_mut().zip(snaps) {
            *p = s;
        }

        if t < steps {
            let before = state.clone();
            optimizer_step(&mut state, &grads, &config.optimizer, &mut opt, lr)?;
            prev_point = Some((before, grads));
        }
    }

    let n = config.model.n;
    let c_v = telemetry::c_v(n, lambda_min_x, gh0);
    let c_q = telemetry::c_qk(n, d, lambda_min_x, gh0, kappa[1], kappa[2]);
    let c_k = telemetry::c_qk(n, d, lambda_min_x, gh0, kappa[0], kappa[2]);
    let last = records.last().expect("at least one step");
    let base_lr = config.schedule.base_lr();
    let epsilon = last
        .matrices
        .iter()
        .filter_map(|m| stability_bound(d, base_lr, g_max, m.nuc_norm).ok())
        .fold(f64::INFINITY, f64::min);
    let constants = RunConstants {
        n,
        d,
        lambda_min_x,
        gh0,
        kappa,
        init_norms,
        g: g_max,
        c_v,
        c_m: c_q.min(c_k),
        epsilon,
        base_lr,
    };
    Ok(TrainSummary {
        records,
        final_state: state,
        constants,
    })
}

//! GD, AdamW and Muon with decoupled weight decay, plus learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::model::{GradientSet, ModelState};

/// Quintic Newton–Schulz coefficients `(a, b, c)`.
pub const NS_COEFFS: (f64, f64, f64) = (3.4445, -4.7750, 2.0315);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ScheduleSpec {
    Constant {
        base_lr: f64,
    },
    /// Multiplies the rate by `factor` at each milestone, given as a
    /// fraction of the total step count.
    Step {
        base_lr: f64,
        milestones: Vec<f64>,
        factor: f64,
    },
    /// Linear warmup from 0, flat, then linear decay to 0. The three phases
    /// must add up to the run length.
    Wsd {
        base_lr: f64,
        warmup: u64,
        stable: u64,
        decay: u64,
    },
    /// Linear warmup, then half-cosine down to `min_ratio · base_lr`.
    Cosine {
        base_lr: f64,
        warmup: u64,
        min_ratio: f64,
    },
}

impl ScheduleSpec {
    pub fn base_lr(&self) -> f64 {
        match *self {
            Self::Constant { base_lr }
            | Self::Step { base_lr, .. }
            | Self::Wsd { base_lr, .. }
            | Self::Cosine { base_lr, .. } => base_lr,
        }
    }

    pub fn validate(&self, total_steps: u64) -> Result<()> {
        let base = self.base_lr();
        if !(base > 0.0 && base.is_finite()) {
            return Err(Error::invalid(format!("base_lr must be positive, got {base}")));
        }
        match self {
            Self::Constant { .. } => {}
            Self::Step { milestones, factor, .. } => {
                if milestones.iter().any(|&m| !(m > 0.0 && m < 1.0))
                    || milestones.windows(2).any(|w| w[0] >= w[1])
                {
                    return Err(Error::invalid(
                        "milestones must be strictly increasing fractions in (0, 1)",
                    ));
                }
                if !(*factor > 0.0 && factor.is_finite()) {
                    return Err(Error::invalid("step factor must be positive"));
                }
            }
            Self::Wsd { warmup, stable, decay, .. } => {
                if warmup + stable + decay != total_steps {
                    return Err(Error::invalid(format!(
                        "wsd phases {warmup}+{stable}+{decay} do not sum to {total_steps} steps"
                    )));
                }
            }
            Self::Cosine { warmup, min_ratio, .. } => {
                if !(*min_ratio > 0.0 && *min_ratio <= 1.0) {
                    return Err(Error::invalid("min_ratio must lie in (0, 1]"));
                }
                if *warmup > total_steps {
                    return Err(Error::invalid("cosine warmup exceeds the run length"));
                }
            }
        }
        Ok(())
    }
}

/// Learning rate used for the update from step `t` to `t + 1`.
pub fn lr_at(schedule: &ScheduleSpec, t: u64, total_steps: u64) -> Result<f64> {
    if t > total_steps {
        return Err(Error::invalid(format!("step {t} beyond total {total_steps}")));
    }
    schedule.validate(total_steps)?;
    let (tf, total) = (t as f64, total_steps as f64);
    let warm = |base: f64, w: u64| base * tf / w as f64;
    Ok(match *schedule {
        ScheduleSpec::Constant { base_lr } => base_lr,
        ScheduleSpec::Step {
            base_lr,
            ref milestones,
            factor,
        } => {
            let passed = milestones.iter().filter(|&&m| tf >= m * total).count();
            base_lr * factor.powi(passed as i32)
        }
        ScheduleSpec::Wsd {
            base_lr,
            warmup,
            stable,
            decay,
        } => {
            if t < warmup {
                warm(base_lr, warmup)
            } else if t < warmup + stable {
                base_lr
            } else {
                base_lr * (total_steps - t) as f64 / decay as f64
            }
        }
        ScheduleSpec::Cosine {
            base_lr,
            warmup,
            min_ratio,
        } => {
            if t < warmup {
                warm(base_lr, warmup)
            } else if total_steps == warmup {
                base_lr
            } else {
                let min = min_ratio * base_lr;
                let progress = (t - warmup) as f64 / (total_steps - warmup) as f64;
                min + (base_lr - min) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Gd,
    Adamw,
    Muon,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Muon momentum coefficient.
    pub momentum: f64,
    pub newton_schulz_steps: u32,
    /// Decoupled decay `λ`: `W ← W(1 − ηλ)` before the gradient step.
    pub weight_decay: f64,
    /// Global-norm clip threshold over all trainable gradients.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Gd,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            momentum: 0.95,
            newton_schulz_steps: 5,
            weight_decay: 0.0,
            clip_norm: None,
        }
    }
}

impl OptimizerSpec {
    pub fn new(kind: OptimizerKind) -> Self {
        Self { kind, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..1.0).contains(&v);
        if !unit(self.beta1) || !unit(self.beta2) || !unit(self.momentum) {
            return Err(Error::invalid("beta1, beta2 and momentum must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("eps must be positive"));
        }
        if self.newton_schulz_steps == 0 {
            return Err(Error::invalid("newton_schulz_steps must be at least 1"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight_decay must be nonnegative"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::invalid("clip_norm must be positive"));
            }
        }
        Ok(())
    }
}

/// Per-matrix buffers: AdamW moments, or the Muon momentum in `first`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub first: Vec<DenseMatrix>,
    pub second: Vec<DenseMatrix>,
    /// Number of updates applied so far.
    pub t: u64,
}

impl OptState {
    pub fn new(spec: &OptimizerSpec, state: &ModelState) -> Self {
        let zeros = || {
            state
                .trainable()
                .iter()
                .map(|w| DenseMatrix::zeros(w.rows(), w.cols()))
                .collect()
        };
        let (first, second) = match spec.kind {
            OptimizerKind::Gd => (Vec::new(), Vec::new()),
            OptimizerKind::Adamw => (zeros(), zeros()),
            OptimizerKind::Muon => (zeros(), Vec::new()),
        };
        Self { first, second, t: 0 }
    }
}

/// Approximate orthogonalization `UVᵀ` of `m = UΣVᵀ` by the quintic
/// iteration `X ← aX + (bB + cB²)X`, `B = XXᵀ`, started from `m / ‖m‖_F`.
pub fn newton_schulz(m: &DenseMatrix, steps: u32) -> Result<DenseMatrix> {
    m.check_finite()?;
    let norm = m.frobenius();
    if norm == 0.0 {
        return Err(Error::Degenerate("newton_schulz of a zero matrix".into()));
    }
    if steps == 0 {
        return Err(Error::invalid("newton_schulz needs at least one step"));
    }
    let tall = m.rows() > m.cols();
    let mut x = if tall { m.transpose() } else { m.clone() };
    x.scale_in_place(1.0 / norm);
    let (a, b, c) = NS_COEFFS;
    for _ in 0..steps {
        let gram = x.matmul_t(&x);
        let mut poly = gram.matmul(&gram).scale(c);
        poly.axpy(b, &gram);
        let mut next = poly.matmul(&x);
        next.axpy(a, &x);
        x = next;
    }
    Ok(if tall { x.transpose() } else { x })
}

/// One in-place update of `W_Q, W_K, W_V`. `W_C` is never touched.
pub fn optimizer_step(
    state: &mut ModelState,
    grads: &GradientSet,
    spec: &OptimizerSpec,
    opt: &mut OptState,
    lr: f64,
) -> Result<()> {
    spec.validate()?;
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::invalid(format!("learning rate must be >= 0, got {lr}")));
    }
    for (w, g) in state.trainable().iter().zip(grads.trainable()) {
        if w.shape() != g.shape() {
            return Err(Error::shape(format!(
                "gradient {:?} for parameter {:?}",
                g.shape(),
                w.shape()
            )));
        }
    }
    let expected_buffers = match spec.kind {
        OptimizerKind::Gd => (0, 0),
        OptimizerKind::Adamw => (3, 3),
        OptimizerKind::Muon => (3, 0),
    };
    if (opt.first.len(), opt.second.len()) != expected_buffers {
        return Err(Error::invalid("optimizer state does not match optimizer kind"));
    }

    let clip = match spec.clip_norm {
        Some(c) => {
            let norm = grads.global_norm();
            if norm > c {
                c / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    opt.t += 1;
    let t = opt.t as i32;
    let decay = 1.0 - lr * spec.weight_decay;

    for (i, (w, g)) in state
        .trainable_mut()
        .into_iter()
        .zip(grads.trainable())
        .enumerate()
    {
        if spec.weight_decay != 0.0 {
            w.scale_in_place(decay);
        }
        match spec.kind {
            OptimizerKind::Gd => w.axpy(-lr * clip, g),
            OptimizerKind::Adamw => {
                let (b1, b2) = (spec.beta1, spec.beta2);
                let m = &mut opt.first[i];
                let v = &mut opt.second[i];
                for ((mv, vv), &gv) in m
                    .as_mut_slice()
                    .iter_mut()
                    .zip(v.as_mut_slice())
                    .zip(g.as_slice())
                {
                    let gv = gv * clip;
                    *mv = b1 * *mv + (1.0 - b1) * gv;
                    *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                }
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                for ((wv, &mv), &vv) in w
                    .as_mut_slice()
                    .iter_mut()
                    .zip(m.as_slice())
                    .zip(v.as_slice())
                {
                    *wv -= lr * (mv / c1) / ((vv / c2).sqrt() + spec.eps);
                }
            }
            OptimizerKind::Muon => {
                let buf = &mut opt.first[i];
                buf.scale_in_place(spec.momentum);
                buf.axpy(clip, g);
                if buf.frobenius() > 0.0 {
                    let dir = newton_schulz(buf, spec.newton_schulz_steps)?;
                    w.axpy(-lr, &dir);
                }
            }
        }
    }
    Ok(())
}

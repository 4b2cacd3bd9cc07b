//! Single-layer, single-head attention classifier with analytic gradients.
//!
//! ```text
//! Q = X W_Q   K = X W_K   V = X W_V
//! M = Q Kᵀ / √d          A = softmax_rows(M)
//! H = A V                 Z = H W_C        P = softmax_rows(Z)
//! L = −(1/n) Σᵢ log P[i, yᵢ]
//! ```
//!
//! `W_C` is a fixed semi-orthogonal readout; only `W_Q`, `W_K`, `W_V` train.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, DenseMatrix};
use crate::rng;

pub const MATRIX_NAMES: [&str; 3] = ["W_Q", "W_K", "W_V"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Sequence length.
    pub n: usize,
    /// Feature dimension.
    pub d: usize,
    /// Number of classes.
    pub classes: usize,
    /// Standard deviation of the Gaussian initialization.
    pub init_sigma: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n: 16,
            d: 32,
            classes: 8,
            init_sigma: 0.01,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.d < 2 || self.classes < 2 {
            return Err(Error::invalid(format!(
                "need n, d, classes >= 2 (got {}, {}, {})",
                self.n, self.d, self.classes
            )));
        }
        if !(self.init_sigma > 0.0 && self.init_sigma.is_finite()) {
            return Err(Error::invalid("init_sigma must be positive"));
        }
        Ok(())
    }
}

/// Synthetic data: tokens are noisy copies of per-class mean vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    /// Per-coordinate standard deviation of the token noise.
    pub noise: f64,
    /// Euclidean norm of every class mean.
    #[serde(default = "unit")]
    pub mean_norm: f64,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            noise: 0.3,
            mean_norm: 1.0,
        }
    }
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub wq: DenseMatrix,
    pub wk: DenseMatrix,
    pub wv: DenseMatrix,
    /// Fixed readout, `d × C`.
    pub wc: DenseMatrix,
}

impl ModelState {
    pub fn trainable(&self) -> [&DenseMatrix; 3] {
        [&self.wq, &self.wk, &self.wv]
    }

    pub fn trainable_mut(&mut self) -> [&mut DenseMatrix; 3] {
        [&mut self.wq, &mut self.wk, &mut self.wv]
    }

    pub fn d(&self) -> usize {
        self.wq.rows()
    }

    pub fn classes(&self) -> usize {
        self.wc.cols()
    }

    fn check(&self) -> Result<()> {
        let d = self.d();
        for (name, w) in MATRIX_NAMES.iter().zip(self.trainable()) {
            if w.shape() != (d, d) {
                return Err(Error::shape(format!("{name} is {:?}, expected {d}x{d}", w.shape())));
            }
        }
        if self.wc.rows() != d {
            return Err(Error::shape(format!("W_C has {} rows, expected {d}", self.wc.rows())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: DenseMatrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(x: DenseMatrix, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != x.rows() {
            return Err(Error::shape(format!(
                "{} labels for {} tokens",
                labels.len(),
                x.rows()
            )));
        }
        Ok(Self { x, labels })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    /// One-hot label matrix `Y`, `n × classes`.
    pub fn one_hot(&self, classes: usize) -> DenseMatrix {
        DenseMatrix::from_fn(self.n(), classes, |i, c| f64::from(u8::from(self.labels[i] == c)))
    }
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub q: DenseMatrix,
    pub k: DenseMatrix,
    pub v: DenseMatrix,
    /// Attention scores.
    pub m: DenseMatrix,
    /// Row-stochastic attention.
    pub a: DenseMatrix,
    pub h: DenseMatrix,
    /// Logits.
    pub z: DenseMatrix,
    pub p: DenseMatrix,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct GradientSet {
    pub wq: DenseMatrix,
    pub wk: DenseMatrix,
    pub wv: DenseMatrix,
    pub z: DenseMatrix,
    pub h: DenseMatrix,
    pub a: DenseMatrix,
    pub m: DenseMatrix,
}

impl GradientSet {
    pub fn trainable(&self) -> [&DenseMatrix; 3] {
        [&self.wq, &self.wk, &self.wv]
    }

    pub fn trainable_mut(&mut self) -> [&mut DenseMatrix; 3] {
        [&mut self.wq, &mut self.wk, &mut self.wv]
    }

    /// Frobenius norm of the concatenated trainable gradients.
    pub fn global_norm(&self) -> f64 {
        self.trainable()
            .iter()
            .map(|g| g.frobenius().powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Gaussian `W_Q, W_K, W_V` and a semi-orthogonal `W_C`, all from `config.seed`.
pub fn init_params(config: &ModelConfig) -> Result<ModelState> {
    config.validate()?;
    let d = config.d;
    let mut g = rng::stream(config.seed, 0);
    let wq = rng::gaussian_matrix(&mut g, d, d, config.init_sigma);
    let wk = rng::gaussian_matrix(&mut g, d, d, config.init_sigma);
    let wv = rng::gaussian_matrix(&mut g, d, d, config.init_sigma);
    let mut g = rng::stream(config.seed, 1);
    let raw = rng::gaussian_matrix(&mut g, d, config.classes, 1.0);
    let wc = semi_orthogonal(&raw);
    Ok(ModelState { wq, wk, wv, wc })
}

/// Orthonormalizes the columns (tall or square input) or the rows (wide
/// input) by twice-iterated modified Gram–Schmidt.
pub fn semi_orthogonal(m: &DenseMatrix) -> DenseMatrix {
    if m.rows() < m.cols() {
        return semi_orthogonal(&m.transpose()).transpose();
    }
    let (r, c) = m.shape();
    let mut cols: Vec<Vec<f64>> = (0..c).map(|j| m.column(j)).collect();
    for j in 0..c {
        for _ in 0..2 {
            for k in 0..j {
                let proj = dot(&cols[j], &cols[k]);
                let (head, tail) = cols.split_at_mut(j);
                for (x, y) in tail[0].iter_mut().zip(&head[k]) {
                    *x -= proj * y;
                }
            }
        }
        let norm = dot(&cols[j], &cols[j]).sqrt();
        cols[j].iter_mut().for_each(|x| *x /= norm);
    }
    DenseMatrix::from_fn(r, c, |i, j| cols[j][i])
}

/// Class means drawn once from `seed`; this is draw 0 of [`gen_batch`].
pub fn gen_dataset(config: &ModelConfig, data: &DataSpec, seed: u64) -> Result<Batch> {
    gen_batch(config, data, seed, 0)
}

/// Batch number `draw` over the class means fixed by `seed`. Labels are
/// uniform; token `i` is `mean_norm · μ[yᵢ] + noise · ξᵢ`.
pub fn gen_batch(config: &ModelConfig, data: &DataSpec, seed: u64, draw: u64) -> Result<Batch> {
    config.validate()?;
    if !(data.noise >= 0.0 && data.mean_norm > 0.0) {
        return Err(Error::invalid("noise must be >= 0 and mean_norm > 0"));
    }
    let (n, d, classes) = (config.n, config.d, config.classes);
    let mut g = rng::stream(seed, 2);
    let mut means = rng::gaussian_matrix(&mut g, classes, d, 1.0);
    for c in 0..classes {
        let row = means.row_mut(c);
        let norm = dot(row, row).sqrt();
        row.iter_mut().for_each(|x| *x *= data.mean_norm / norm);
    }
    let mut g = rng::stream(seed, 3 + draw);
    let labels: Vec<usize> = (0..n)
        .map(|_| rand::Rng::random_range(&mut g, 0..classes))
        .collect();
    let mut x = DenseMatrix::zeros(n, d);
    for (i, &y) in labels.iter().enumerate() {
        for j in 0..d {
            let xi = rng::gaussian(&mut g);
            x[(i, j)] = means[(y, j)] + data.noise * xi;
        }
    }
    Batch::new(x, labels)
}

/// Row-wise softmax with the row maximum subtracted before exponentiation.
pub fn softmax_rows(m: &DenseMatrix) -> DenseMatrix {
    let mut out = m.clone();
    for i in 0..out.rows() {
        softmax_in_place(out.row_mut(i));
    }
    out
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

fn log_softmax_at(row: &[f64], idx: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row[idx] - max - lse
}

pub fn forward(state: &ModelState, batch: &Batch) -> Result<ForwardCache> {
    state.check()?;
    let d = state.d();
    if batch.x.cols() != d {
        return Err(Error::shape(format!(
            "tokens have {} features, model expects {d}",
            batch.x.cols()
        )));
    }
    if let Some(&bad) = batch.labels.iter().find(|&&y| y >= state.classes()) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {} classes",
            state.classes()
        )));
    }
    let x = &batch.x;
    let q = x.matmul(&state.wq);
    let k = x.matmul(&state.wk);
    let v = x.matmul(&state.wv);
    let m = q.matmul_t(&k).scale(1.0 / (d as f64).sqrt());
    let a = softmax_rows(&m);
    let h = a.matmul(&v);
    let z = h.matmul(&state.wc);
    let p = softmax_rows(&z);
    let n = batch.n() as f64;
    let loss = -batch
        .labels
        .iter()
        .enumerate()
        .map(|(i, &y)| log_softmax_at(z.row(i), y))
        .sum::<f64>()
        / n;
    Ok(ForwardCache {
        q,
        k,
        v,
        m,
        a,
        h,
        z,
        p,
        loss,
    })
}

pub fn backward(state: &ModelState, batch: &Batch, cache: &ForwardCache) -> Result<GradientSet> {
    state.check()?;
    let (n, d, classes) = (batch.n(), state.d(), state.classes());
    let expect = [
        ("Q", &cache.q, (n, d)),
        ("K", &cache.k, (n, d)),
        ("V", &cache.v, (n, d)),
        ("M", &cache.m, (n, n)),
        ("A", &cache.a, (n, n)),
        ("H", &cache.h, (n, d)),
        ("Z", &cache.z, (n, classes)),
        ("P", &cache.p, (n, classes)),
    ];
    for (name, m, shape) in expect {
        if m.shape() != shape {
            return Err(Error::shape(format!(
                "stale cache: {name} is {:?}, expected {shape:?}",
                m.shape()
            )));
        }
        m.check_finite()
            .map_err(|_| Error::invalid(format!("stale cache: {name} is not finite")))?;
    }

    let g_z = cache
        .p
        .sub(&batch.one_hot(classes))
        .scale(1.0 / n as f64);
    let g_h = g_z.matmul_t(&state.wc);
    let g_a = g_h.matmul_t(&cache.v);
    // Row i: J(aᵢ) gᵢ = aᵢ ⊙ (gᵢ − ⟨aᵢ, gᵢ⟩)
    let mut g_m = DenseMatrix::zeros(n, n);
    for i in 0..n {
        let a = cache.a.row(i);
        let g = g_a.row(i);
        let centre = dot(a, g);
        for (out, (&ai, &gi)) in g_m.row_mut(i).iter_mut().zip(a.iter().zip(g)) {
            *out = ai * (gi - centre);
        }
    }
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    let x = &batch.x;
    let wq = x.t_matmul(&g_m.matmul(&cache.k)).scale(inv_sqrt_d);
    let wk = x.t_matmul(&g_m.t_matmul(&cache.q)).scale(inv_sqrt_d);
    let wv = x.t_matmul(&cache.a.t_matmul(&g_h));
    Ok(GradientSet {
        wq,
        wk,
        wv,
        z: g_z,
        h: g_h,
        a: g_a,
        m: g_m,
    })
}

/// First-order expansion of the row softmax around zero scores:
/// `(1/n)(1 + M[i,j] − mean_k M[i,k])`, i.e. `A₀ + M·J₁`.
pub fn linearized_attention(m: &DenseMatrix) -> Result<DenseMatrix> {
    m.check_finite()?;
    let n = m.cols() as f64;
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let mean = row.iter().sum::<f64>() / n;
        row.iter_mut().for_each(|v| *v = (1.0 + *v - mean) / n);
    }
    Ok(out)
}

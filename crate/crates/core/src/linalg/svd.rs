//! One-sided (Hestenes) Jacobi SVD.
//!
//! Columns of the working copy are rotated pairwise in a fixed cyclic order
//! until every pair is orthogonal to within [`ROTATION_TOL`] relative to the
//! product of their norms. At that point the column norms are the singular
//! values, the normalized columns are the left vectors and the accumulated
//! rotations are the right vectors.

use crate::error::{Error, Result};
use crate::linalg::matrix::dot;
use crate::linalg::DenseMatrix;

/// Relative off-diagonal size below which a column pair counts as orthogonal.
pub const ROTATION_TOL: f64 = 1e-12;
/// Sweep budget before the decomposition is rejected.
pub const MAX_SWEEPS: usize = 60;

/// Thin SVD `M = U · diag(σ) · Vᵀ` with `k = min(rows, cols)` columns in `U`
/// and `V`, singular values descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DenseMatrix,
    pub singular_values: Vec<f64>,
    pub v: DenseMatrix,
    pub sweeps: usize,
}

impl Svd {
    /// `U · diag(σ) · Vᵀ`
    pub fn reconstruct(&self) -> DenseMatrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, s) in self.singular_values.iter().enumerate() {
                us[(i, j)] *= s;
            }
        }
        us.matmul_t(&self.v)
    }
}

/// Full thin SVD.
pub fn svd(m: &DenseMatrix) -> Result<Svd> {
    let out = jacobi(m, true)?;
    Ok(out.into_svd(m.rows() < m.cols()))
}

/// Singular values only, descending. Skips right-vector accumulation.
pub fn singular_values(m: &DenseMatrix) -> Result<Vec<f64>> {
    Ok(jacobi(m, false)?.sorted_values())
}

struct Work {
    /// Column-major working copy, `p` rows by `q` columns, `p ≥ q`.
    cols: Vec<f64>,
    p: usize,
    q: usize,
    /// Column-major `q × q` accumulated rotations.
    v: Option<Vec<f64>>,
    norms: Vec<f64>,
    sweeps: usize,
}

fn jacobi(m: &DenseMatrix, want_v: bool) -> Result<Work> {
    m.check_finite()?;
    let (rows, cols) = m.shape();
    // Work on the orientation with at least as many rows as columns.
    let (p, q) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    let mut a = vec![0.0; p * q];
    for i in 0..rows {
        for j in 0..cols {
            let x = m[(i, j)];
            if rows >= cols {
                a[j * p + i] = x;
            } else {
                a[i * p + j] = x;
            }
        }
    }
    let mut v = want_v.then(|| {
        let mut v = vec![0.0; q * q];
        for i in 0..q {
            v[i * q + i] = 1.0;
        }
        v
    });
    let mut norms = vec![0.0; q];

    let mut sweeps = 0;
    loop {
        for (j, n) in norms.iter_mut().enumerate() {
            let c = &a[j * p..(j + 1) * p];
            *n = dot(c, c);
        }
        if sweeps == MAX_SWEEPS {
            let residual = max_off_diagonal(&a, p, q, &norms);
            if residual <= ROTATION_TOL {
                break;
            }
            return Err(Error::NoConvergence { sweeps, residual });
        }
        sweeps += 1;
        let mut rotated = false;
        for i in 0..q {
            for j in i + 1..q {
                let alpha = norms[i];
                let beta = norms[j];
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let (ci, cj) = two_columns(&mut a, p, i, j);
                let gamma = dot(ci, cj);
                if gamma.abs() <= ROTATION_TOL * (alpha.sqrt() * beta.sqrt()) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(ci, cj, c, s);
                norms[i] = alpha - t * gamma;
                norms[j] = beta + t * gamma;
                if let Some(v) = v.as_mut() {
                    let (vi, vj) = two_columns(v, q, i, j);
                    rotate(vi, vj, c, s);
                }
            }
        }
        if !rotated {
            for (j, n) in norms.iter_mut().enumerate() {
                let c = &a[j * p..(j + 1) * p];
                *n = dot(c, c);
            }
            break;
        }
    }
    Ok(Work {
        cols: a,
        p,
        q,
        v,
        norms,
        sweeps,
    })
}

fn max_off_diagonal(a: &[f64], p: usize, q: usize, norms: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..q {
        for j in i + 1..q {
            let denom = norms[i].sqrt() * norms[j].sqrt();
            if denom > 0.0 {
                let g = dot(&a[i * p..(i + 1) * p], &a[j * p..(j + 1) * p]);
                worst = worst.max(g.abs() / denom);
            }
        }
    }
    worst
}

fn two_columns(buf: &mut [f64], len: usize, i: usize, j: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(i < j);
    let (lo, hi) = buf.split_at_mut(j * len);
    (&mut lo[i * len..(i + 1) * len], &mut hi[..len])
}

fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let (xa, yb) = (*a, *b);
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}

impl Work {
    /// Column order by descending singular value; stable on ties.
    fn order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.q).collect();
        idx.sort_by(|&a, &b| self.norms[b].total_cmp(&self.norms[a]));
        idx
    }

    fn sorted_values(&self) -> Vec<f64> {
        self.order().into_iter().map(|j| self.norms[j].sqrt()).collect()
    }

    fn into_svd(self, transposed: bool) -> Svd {
        let order = self.order();
        let (p, q) = (self.p, self.q);
        let sigma: Vec<f64> = order.iter().map(|&j| self.norms[j].sqrt()).collect();
        let smax = sigma.first().copied().unwrap_or(0.0);
        // Columns this small carry no usable direction; they are replaced by
        // an orthonormal completion below.
        let cutoff = smax * (p as f64) * f64::EPSILON;

        let mut left: Vec<Option<Vec<f64>>> = order
            .iter()
            .zip(&sigma)
            .map(|(&j, &s)| {
                (s > cutoff && s > 0.0)
                    .then(|| self.cols[j * p..(j + 1) * p].iter().map(|x| x / s).collect())
            })
            .collect();
        complete_basis(&mut left, p);

        let v = self.v.expect("right vectors requested");
        let right: Vec<&[f64]> = order.iter().map(|&j| &v[j * q..(j + 1) * q]).collect();

        let left_m = DenseMatrix::from_fn(p, q, |i, k| left[k].as_ref().unwrap()[i]);
        let right_m = DenseMatrix::from_fn(q, q, |i, k| right[k][i]);
        let (u, v) = if transposed {
            (right_m, left_m)
        } else {
            (left_m, right_m)
        };
        Svd {
            u,
            singular_values: sigma,
            v,
            sweeps: self.sweeps,
        }
    }
}

/// Fills the `None` slots with unit vectors orthogonal to every other slot,
/// drawn from the standard basis by twice-iterated Gram–Schmidt.
fn complete_basis(basis: &mut [Option<Vec<f64>>], dim: usize) {
    let mut candidate = 0;
    for slot in 0..basis.len() {
        if basis[slot].is_some() {
            continue;
        }
        while candidate < dim {
            let mut e = vec![0.0; dim];
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for other in basis.iter().flatten() {
                    let proj = dot(&e, other);
                    for (x, o) in e.iter_mut().zip(other) {
                        *x -= proj * o;
                    }
                }
            }
            let norm = dot(&e, &e).sqrt();
            if norm > 1e-8 {
                e.iter_mut().for_each(|x| *x /= norm);
                basis[slot] = Some(e);
                break;
            }
        }
    }
}

/// Eigenvalues of a symmetric matrix by cyclic two-sided Jacobi, descending.
pub fn symmetric_eigenvalues(s: &DenseMatrix) -> Result<Vec<f64>> {
    s.check_finite()?;
    let n = s.rows();
    if n != s.cols() {
        return Err(Error::shape("symmetric_eigenvalues needs a square matrix"));
    }
    let mut a = s.clone();
    let scale = a.frobenius();
    for sweep in 0..=MAX_SWEEPS {
        let mut off: f64 = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off = off.max(a[(i, j)].abs());
            }
        }
        if off <= ROTATION_TOL * scale || scale == 0.0 {
            break;
        }
        if sweep == MAX_SWEEPS {
            return Err(Error::NoConvergence {
                sweeps: sweep,
                residual: off / scale,
            });
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    Ok(eig)
}

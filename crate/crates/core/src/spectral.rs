//! Singular distributions and the metrics built on them.
//!
//! The singular distribution of `W` is its singular value vector divided by
//! the nuclear norm. SD variation is the Euclidean distance between two such
//! distributions; it ignores any change of overall scale.

use crate::error::{Error, Result};
use crate::linalg::{self, dot, DenseMatrix};

/// Ratio `σ_min / σ_max` below which the condition number is reported infinite.
pub const SINGULAR_RATIO: f64 = 1e-14;

/// Sorted spectrum of one matrix with its trace-normalized distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSnapshot {
    singular_values: Vec<f64>,
    trace: f64,
    distribution: Option<Vec<f64>>,
}

impl SpectralSnapshot {
    pub fn of(m: &DenseMatrix) -> Result<Self> {
        Self::from_singular_values(linalg::singular_values(m)?)
    }

    /// Accepts an already-computed spectrum; it must be nonnegative, finite
    /// and sorted descending.
    pub fn from_singular_values(singular_values: Vec<f64>) -> Result<Self> {
        if singular_values.is_empty() {
            return Err(Error::invalid("empty spectrum"));
        }
        if singular_values.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::invalid("singular values must be finite and nonnegative"));
        }
        if singular_values.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::invalid("singular values must be sorted descending"));
        }
        let trace: f64 = singular_values.iter().sum();
        let distribution =
            (trace > 0.0).then(|| singular_values.iter().map(|s| s / trace).collect());
        Ok(Self {
            singular_values,
            trace,
            distribution,
        })
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// Nuclear norm.
    pub fn trace(&self) -> f64 {
        self.trace
    }

    /// `None` for a zero matrix.
    pub fn distribution(&self) -> Option<&[f64]> {
        self.distribution.as_deref()
    }

    pub fn len(&self) -> usize {
        self.singular_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.singular_values.is_empty()
    }
}

/// The trace-normalized spectrum. Rejects a zero-trace snapshot.
pub fn trace_normalize(snapshot: &SpectralSnapshot) -> Result<Vec<f64>> {
    snapshot
        .distribution()
        .map(<[f64]>::to_vec)
        .ok_or_else(|| Error::Degenerate("zero-trace spectrum has no distribution".into()))
}

/// Euclidean distance between the singular distributions of two snapshots.
pub fn sd_variation(a: &SpectralSnapshot, b: &SpectralSnapshot) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "spectrum lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let pa = trace_normalize(a)?;
    let pb = trace_normalize(b)?;
    Ok(pa
        .iter()
        .zip(&pb)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Cosine of the angle between two equally shaped matrices, flattened.
pub fn cosine_similarity(a: &DenseMatrix, b: &DenseMatrix) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "cosine of {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    cosine_similarity_slices(a.as_slice(), b.as_slice())
}

/// Cosine between two vectors, e.g. two spectra.
pub fn cosine_similarity_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("cosine of vectors with different lengths"));
    }
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine with a zero operand".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormBundle {
    pub frobenius: f64,
    pub nuclear: f64,
    pub spectral: f64,
    /// `σ_max / σ_min`; `f64::INFINITY` when flagged singular.
    pub condition_number: f64,
}

impl NormBundle {
    pub fn from_snapshot(s: &SpectralSnapshot) -> Self {
        let sv = s.singular_values();
        let spectral = sv[0];
        let smin = sv[sv.len() - 1];
        let condition_number = if spectral == 0.0 || smin < SINGULAR_RATIO * spectral {
            f64::INFINITY
        } else {
            spectral / smin
        };
        Self {
            frobenius: dot(sv, sv).sqrt(),
            nuclear: s.trace(),
            spectral,
            condition_number,
        }
    }

    pub fn is_singular(&self) -> bool {
        self.condition_number.is_infinite()
    }
}

pub fn matrix_norms(m: &DenseMatrix) -> Result<NormBundle> {
    Ok(NormBundle::from_snapshot(&SpectralSnapshot::of(m)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snap(v: &[f64]) -> SpectralSnapshot {
        SpectralSnapshot::from_singular_values(v.to_vec()).unwrap()
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(trace_normalize(&snap(&[2.0, 1.0, 1.0])).unwrap(), vec![0.5, 0.25, 0.25]);
        let d = 7;
        let uniform = trace_normalize(&snap(&vec![1.0; d])).unwrap();
        assert!(uniform.iter().all(|&p| (p - 1.0 / d as f64).abs() < 1e-16));
        assert_eq!(
            trace_normalize(&snap(&[3.0, 1.0])).unwrap(),
            trace_normalize(&snap(&[6.0, 2.0])).unwrap()
        );
        assert_eq!(trace_normalize(&snap(&[3.0, 1.0])).unwrap(), vec![0.75, 0.25]);
    }

    #[test]
    fn zero_trace_is_rejected() {
        let z = SpectralSnapshot::of(&DenseMatrix::zeros(3, 3)).unwrap();
        assert!(matches!(trace_normalize(&z), Err(Error::Degenerate(_))));
        assert!(sd_variation(&z, &z).is_err());
    }

    #[test]
    fn unsorted_spectrum_is_rejected() {
        assert!(SpectralSnapshot::from_singular_values(vec![1.0, 2.0]).is_err());
        assert!(SpectralSnapshot::from_singular_values(vec![1.0, -0.5]).is_err());
    }

    #[test]
    fn sd_variation_examples() {
        let w = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![-0.5, 3.0]]).unwrap();
        let a = SpectralSnapshot::of(&w).unwrap();
        assert_eq!(sd_variation(&a, &a).unwrap(), 0.0);
        let b = SpectralSnapshot::of(&w.scale(3.0)).unwrap();
        assert!(sd_variation(&a, &b).unwrap() < 1e-15);

        let x = SpectralSnapshot::of(&DenseMatrix::diag(&[3.0, 1.0])).unwrap();
        let y = SpectralSnapshot::of(&DenseMatrix::identity(2)).unwrap();
        // (0.75, 0.25) vs (0.5, 0.5): sqrt(2 * 0.25^2) = sqrt(0.125)
        let v = sd_variation(&x, &y).unwrap();
        assert!((v - 0.125f64.sqrt()).abs() < 1e-15);
        assert!((v - 0.353553).abs() < 1e-6);
        assert_eq!(v, sd_variation(&y, &x).unwrap());

        assert!(sd_variation(&x, &snap(&[1.0, 1.0, 1.0])).is_err());
    }

    #[test]
    fn cosine_examples() {
        let a = DenseMatrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 4.0]]).unwrap();
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_similarity(&a, &a.scale(2.5)).unwrap() - 1.0).abs() < 1e-15);
        let c = cosine_similarity(&DenseMatrix::diag(&[1.0, 0.0]), &DenseMatrix::diag(&[0.0, 1.0]));
        assert_eq!(c.unwrap(), 0.0);
        let s = cosine_similarity_slices(&[3.0, 1.0], &[1.0, 1.0]).unwrap();
        assert!((s - 4.0 / 20f64.sqrt()).abs() < 1e-15);
        assert!((s - 0.894427).abs() < 1e-6);
        assert!(cosine_similarity(&a, &DenseMatrix::zeros(2, 2)).is_err());
        assert!(cosine_similarity(&a, &DenseMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn norm_examples() {
        let n = matrix_norms(&DenseMatrix::diag(&[3.0, 4.0])).unwrap();
        assert!((n.frobenius - 5.0).abs() < 1e-15);
        assert!((n.nuclear - 7.0).abs() < 1e-15);
        assert!((n.spectral - 4.0).abs() < 1e-15);
        assert!((n.condition_number - 4.0 / 3.0).abs() < 1e-15);

        let d = 5;
        let n = matrix_norms(&DenseMatrix::identity(d)).unwrap();
        assert!((n.frobenius - (d as f64).sqrt()).abs() < 1e-15);
        assert!((n.nuclear - d as f64).abs() < 1e-15);
        assert_eq!(n.spectral, 1.0);
        assert_eq!(n.condition_number, 1.0);

        let n = matrix_norms(&DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap())
            .unwrap();
        assert!(n.is_singular());
    }
}

//! Seeded generators. Every random draw in the crate goes through ChaCha8 so
//! runs are bitwise reproducible across hosts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::DenseMatrix;

/// Generator for a `(seed, stream)` pair. Independent streams never overlap,
/// so per-trial generators can be derived in any order.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> DenseMatrix {
    let data = (0..rows * cols).map(|_| std * gaussian(rng)).collect();
    DenseMatrix::from_vec(rows, cols, data).expect("shape is consistent by construction")
}

//! Seeded weight initialization: Glorot-uniform matrices, zero biases,
//! `N(0, 0.01)` embeddings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Tensor;

pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn uniform(&mut self, n: usize, limit: f64) -> Vec<f64> {
        (0..n).map(|_| self.rng.random_range(-limit..limit)).collect()
    }

    /// `[rows × cols]`, uniform in `±√(6 / (cols + rows))`.
    pub fn matrix(&mut self, rows: usize, cols: usize) -> Tensor {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        Tensor::matrix(rows, cols, self.uniform(rows * cols, limit)).expect("positive dims")
    }

    /// Projection vector such as `v_a`, treated as a `[1 × d]` matrix.
    pub fn weight_vector(&mut self, d: usize) -> Tensor {
        let limit = (6.0 / (d + 1) as f64).sqrt();
        Tensor::vector(self.uniform(d, limit))
    }

    pub fn bias(&mut self, d: usize) -> Tensor {
        Tensor::vector(vec![0.0; d])
    }

    pub fn embedding(&mut self, vocab: usize, dim: usize) -> Tensor {
        let normal = Normal::new(0.0, 0.01).expect("valid std");
        let data = (0..vocab * dim).map(|_| normal.sample(&mut self.rng)).collect();
        Tensor::matrix(vocab, dim, data).expect("positive dims")
    }
}

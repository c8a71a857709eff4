//! Token-id to vector lookup table.

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::rng::Rng;

/// Embedding table: one row per vocabulary id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub vocab_size: usize,
    pub dim: usize,
    pub rows: Matrix,
}

impl EmbeddingTable {
    pub fn init_uniform(rng: &mut Rng, vocab_size: usize, dim: usize, scale: f64) -> Self {
        EmbeddingTable {
            vocab_size,
            dim,
            rows: Matrix::init_uniform(rng, vocab_size, dim, scale),
        }
    }

    pub fn lookup(&self, id: u32) -> &[f64] {
        self.rows.row(id as usize)
    }

    pub fn embed_sequence(&self, ids: &[u32]) -> Vec<Vec<f64>> {
        ids.iter().map(|&id| self.lookup(id).to_vec()).collect()
    }
}

/// Dense gradient buffer for an embedding table. Vocabularies here are small
/// enough that a dense accumulator is simpler than a sparse one.
#[derive(Debug, Clone)]
pub struct EmbeddingGrads {
    pub rows: Matrix,
}

impl EmbeddingGrads {
    pub fn zeros(table: &EmbeddingTable) -> Self {
        EmbeddingGrads {
            rows: Matrix::zeros(table.vocab_size, table.dim),
        }
    }

    /// Accumulate the gradient flowing into the vector for `id`.
    pub fn accumulate(&mut self, id: u32, dx: &[f64]) {
        for (g, d) in self.rows.row_mut(id as usize).iter_mut().zip(dx) {
            *g += d;
        }
    }
}

//! Deterministic fixtures shared by the benchmarks.

use mast_core::data::{BOS, EOS};
use mast_core::model::{AUDIO_DIM, VIDEO_DIM};
use mast_core::{Dims, Model, ModelConfig, ModelInput, Tensor, Variant};

pub const VOCAB: usize = 200;

/// Smooth pseudo-random values without an RNG dependency.
pub fn wave(n: usize, phase: f64) -> Vec<f64> {
    (0..n).map(|i| (i as f64 * 0.7 + phase).sin() * 0.5).collect()
}

pub fn matrix(rows: usize, cols: usize, phase: f64) -> Tensor {
    Tensor::matrix(rows, cols, wave(rows * cols, phase)).expect("consistent shape")
}

pub fn model(variant: Variant, dim: usize) -> Model {
    let mut cfg = ModelConfig::new(variant, VOCAB);
    cfg.dims = Dims::uniform(dim);
    Model::build(cfg, 7).expect("valid config")
}

/// `text_len` tokens with 4 audio frames per token and 8 video steps.
pub fn input(text_len: usize) -> ModelInput {
    let text = (0..text_len).map(|i| 4 + (i * 37) % (VOCAB - 4)).collect();
    ModelInput::new(
        text,
        Some(matrix(text_len * 4, AUDIO_DIM, 0.3)),
        Some(matrix(8, VIDEO_DIM, 1.1)),
    )
}

/// Gold summary of `len` tokens followed by `<eos>`.
pub fn targets(len: usize) -> Vec<usize> {
    let mut t: Vec<usize> = (0..len).map(|i| (BOS + 3 + i * 11) % VOCAB).collect();
    t.push(EOS);
    t
}

pub fn sentence(words: usize, offset: usize) -> Vec<String> {
    (0..words).map(|i| format!("w{}", (i * 7 + offset) % 23)).collect()
}

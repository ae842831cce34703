//! Frozen encoder contracts consumed by the prompt and distillation paths,
//! plus deterministic bundled implementations for desk-scale runs.
//!
//! The text encoder must expose a differentiable path so learnable prompt
//! tokens can be optimized through it while its own weights stay frozen.

use image::RgbImage;
use ndarray::{Array1, Array2, ArrayD, IxDyn};
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::imgio;
use crate::nn::layers::seeded_rng;
use crate::nn::{ops, Tape, Var};

/// Frozen language encoder: token-embedding sequences to text embeddings.
pub trait TextEncoder {
    fn token_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// Frozen vocabulary lookup for a template word.
    fn embed_word(&self, word: &str) -> Array1<f64>;
    /// Encode a `[L, token_dim]` token sequence to a unit-norm embedding.
    fn encode(&self, tokens: &Array2<f64>) -> Array1<f64>;
    /// Differentiable encode; the encoder's own weights enter as constants.
    fn encode_on_tape<'t>(&self, tape: &'t Tape, tokens: Var<'t>) -> Var<'t>;
    /// Content hash of the frozen state, for freeze audits.
    fn state_hash(&self) -> [u8; 32];
}

/// Frozen image encoder used during stage-1 token learning.
pub trait ImageEncoder {
    fn output_dim(&self) -> usize;
    fn embed(&self, crop: &RgbImage) -> Array1<f64>;
    fn state_hash(&self) -> [u8; 32];
}

/// Frozen re-identification teacher for feature-level distillation.
pub trait TeacherEmbedder {
    fn embedding_dim(&self) -> usize;
    fn embed(&self, crop: &RgbImage) -> Array1<f64>;
    fn state_hash(&self) -> [u8; 32];
}

fn hash_arrays(label: &str, arrays: &[&ArrayD<f64>]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(label.as_bytes());
    for a in arrays {
        for &x in a.iter() {
            hasher.update(x.to_le_bytes());
        }
    }
    hasher.finalize().into()
}

/// Bundled frozen text encoder: position-weighted token pooling followed by
/// a fixed random two-layer mixer, output L2-normalized. Deterministic in
/// its seed.
pub struct HashingTextEncoder {
    seed: u64,
    token_dim: usize,
    output_dim: usize,
    w1: ArrayD<f64>,
    w2: ArrayD<f64>,
}

impl HashingTextEncoder {
    pub fn new(seed: u64, token_dim: usize, output_dim: usize) -> Self {
        let mut rng = seeded_rng(seed, "text-encoder.w1");
        let s1 = (1.0 / token_dim as f64).sqrt();
        let w1 = ArrayD::from_shape_simple_fn(IxDyn(&[token_dim, output_dim]), || {
            rng.random_range(-s1..s1)
        });
        let mut rng = seeded_rng(seed, "text-encoder.w2");
        let s2 = (1.0 / output_dim as f64).sqrt();
        let w2 = ArrayD::from_shape_simple_fn(IxDyn(&[output_dim, output_dim]), || {
            rng.random_range(-s2..s2)
        });
        HashingTextEncoder { seed, token_dim, output_dim, w1, w2 }
    }

    fn position_weights(len: usize) -> Vec<f64> {
        (0..len).map(|l| 1.0 + 0.25 * ((l + 1) as f64).sin()).collect()
    }
}

impl TextEncoder for HashingTextEncoder {
    fn token_dim(&self) -> usize {
        self.token_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn embed_word(&self, word: &str) -> Array1<f64> {
        let mut rng = seeded_rng(self.seed, &format!("text-encoder.vocab.{word}"));
        let mut v = Array1::from_shape_simple_fn(self.token_dim, || rng.random_range(-1.0f64..1.0));
        let norm = v.dot(&v).sqrt().max(1e-12);
        v.mapv_inplace(|x| x / norm);
        v
    }

    fn encode(&self, tokens: &Array2<f64>) -> Array1<f64> {
        let tape = Tape::new();
        let t = tape.constant(tokens.clone().into_dyn());
        let out = self.encode_on_tape(&tape, t);
        let v = out.value();
        Array1::from_iter(v.iter().copied())
    }

    fn encode_on_tape<'t>(&self, tape: &'t Tape, tokens: Var<'t>) -> Var<'t> {
        let shape = tokens.shape();
        assert_eq!(shape.len(), 2, "token sequence must be [L, token_dim]");
        assert_eq!(shape[1], self.token_dim, "token dim mismatch");
        let len = shape[0];
        let weights = Self::position_weights(len);
        let total: f64 = weights.iter().sum();
        let wrow = tape.constant(
            ArrayD::from_shape_vec(IxDyn(&[1, len]), weights.iter().map(|w| w / total).collect())
                .expect("weight row"),
        );
        let pooled = ops::matmul(wrow, tokens); // [1, token_dim]
        let h = ops::tanh(ops::matmul(pooled, tape.constant(self.w1.clone())));
        let out = ops::matmul(h, tape.constant(self.w2.clone()));
        ops::reshape(ops::l2norm_rows(out, 1e-12), &[self.output_dim])
    }

    fn state_hash(&self) -> [u8; 32] {
        hash_arrays("hashing-text-encoder", &[&self.w1, &self.w2])
    }
}

/// Bundled frozen image encoder: the crop is resized to a small canonical
/// grid, flattened, and passed through a fixed random projection.
pub struct ProjectionImageEncoder {
    output_dim: usize,
    grid: u32,
    w: ArrayD<f64>,
}

impl ProjectionImageEncoder {
    pub fn new(seed: u64, output_dim: usize) -> Self {
        let grid = 16;
        let in_dim = (3 * grid * grid) as usize;
        let mut rng = seeded_rng(seed, "image-encoder.w");
        let s = (1.0 / in_dim as f64).sqrt();
        let w = ArrayD::from_shape_simple_fn(IxDyn(&[in_dim, output_dim]), || {
            rng.random_range(-s..s)
        });
        ProjectionImageEncoder { output_dim, grid, w }
    }
}

impl ImageEncoder for ProjectionImageEncoder {
    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn embed(&self, crop: &RgbImage) -> Array1<f64> {
        let small = imgio::resize(crop, self.grid, self.grid);
        let chw = imgio::to_chw(&small);
        let flat: Vec<f64> = chw.iter().copied().collect();
        let w2 = self.w.view().into_dimensionality::<ndarray::Ix2>().expect("w 2-d");
        let x = Array1::from(flat);
        let mut out = x.dot(&w2).mapv(f64::tanh);
        let norm = out.dot(&out).sqrt().max(1e-12);
        out.mapv_inplace(|v| v / norm);
        out
    }

    fn state_hash(&self) -> [u8; 32] {
        hash_arrays("projection-image-encoder", &[&self.w])
    }
}

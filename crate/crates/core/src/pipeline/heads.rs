//! Branch heads over pooled region features.
//!
//! Both the detection head and the identity head map `[n, d, h, w]` pooled
//! features to `[n, 2d, ceil(h/2), ceil(w/2)]` branch features through a
//! stride-2 3x3 convolution and a residual 1x1 mix; they are built with
//! disjoint parameter prefixes and share nothing.

use ndarray::Array1;

use crate::nn::conv::halved_extent;
use crate::nn::layers::{Conv2d, Linear};
use crate::nn::{ops, scalar_array, ParamStore, Tape, Var};

#[derive(Debug, Clone)]
pub struct BranchHead {
    pub prefix: String,
    down: Conv2d,
    mix: Conv2d,
}

impl BranchHead {
    pub fn new(prefix: &str, in_channels: usize) -> Self {
        let out = 2 * in_channels;
        BranchHead {
            prefix: prefix.to_string(),
            down: Conv2d::new(format!("{prefix}.down"), in_channels, out, 3, 2, 1),
            mix: Conv2d::new(format!("{prefix}.mix"), out, out, 1, 1, 0),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.down.out_ch
    }

    pub fn out_extent(&self, pooled_extent: usize) -> usize {
        halved_extent(pooled_extent)
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        self.down.init(store, seed);
        self.mix.init(store, seed);
    }

    /// `[n, d, h, w] -> [n, 2d, ceil(h/2), ceil(w/2)]`.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        pooled: Var<'t>,
        trainable: bool,
    ) -> Var<'t> {
        let h = ops::relu(self.down.forward(tape, store, pooled, trainable));
        ops::relu(ops::add(self.mix.forward(tape, store, h, trainable), h))
    }
}

/// Norm-aware embedding: the pooled branch feature is projected to the
/// embedding space, its direction carries identity and its norm carries the
/// objectness signal.
#[derive(Debug, Clone)]
pub struct NaeHead {
    pub prefix: String,
    bottleneck: Linear,
}

pub struct NaeOutput<'t> {
    /// Pre-normalization embedding `[n, o]`; the distillation target space.
    pub pre_norm: Var<'t>,
    /// Unit-norm retrieval embedding `[n, o]`.
    pub embeddings: Var<'t>,
    /// Raw embedding norms `[n]`.
    pub norms: Var<'t>,
    /// Calibrated norm-derived objectness `[n]` in (0, 1).
    pub scores: Var<'t>,
}

impl NaeHead {
    pub fn new(prefix: &str, in_features: usize, embedding_dim: usize) -> Self {
        NaeHead {
            prefix: prefix.to_string(),
            bottleneck: Linear::new(format!("{prefix}.bottleneck"), in_features, embedding_dim),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.bottleneck.out_dim
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        self.bottleneck.init(store, seed);
        store.insert(format!("{}.norm_scale", self.prefix), scalar_array(1.0));
        store.insert(format!("{}.norm_bias", self.prefix), scalar_array(0.0));
    }

    /// Branch features `[n, 2d, hb, wb]` to norm-aware embeddings.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        branch: Var<'t>,
        trainable: bool,
    ) -> NaeOutput<'t> {
        let pooled = ops::global_avg_pool(branch);
        let pre_norm = self.bottleneck.forward(tape, store, pooled, trainable);
        let embeddings = ops::l2norm_rows(pre_norm, 1e-12);
        let norms = ops::row_norms(pre_norm);
        let a = tape.param(store, &format!("{}.norm_scale", self.prefix), trainable);
        let b = tape.param(store, &format!("{}.norm_bias", self.prefix), trainable);
        let scores = ops::sigmoid(ops::add_scalar_var(ops::mul_scalar_var(norms, a), b));
        NaeOutput { pre_norm, embeddings, norms, scores }
    }
}

/// Softmax probabilities from logits, rows summing to one.
pub fn softmax_probs(logits: Var<'_>) -> Var<'_> {
    ops::exp(ops::log_softmax_rows(logits))
}

/// Per-identity embedding with its norm-derived score, extracted from one
/// row of an [`NaeOutput`].
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityEmbedding {
    pub vector: Array1<f64>,
    pub norm_score: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};

    #[test]
    fn branch_shapes_at_both_configs() {
        for (d, h) in [(1024usize, 14usize), (128, 7)] {
            let head = BranchHead::new("det", d);
            assert_eq!(head.out_channels(), 2 * d);
            assert_eq!(head.out_extent(h), if h == 14 { 7 } else { 4 });
        }
    }

    #[test]
    fn nae_embeddings_are_unit_norm() {
        let head = BranchHead::new("id", 16);
        let nae = NaeHead::new("id.nae", 32, 24);
        let mut store = ParamStore::new();
        head.init(&mut store, 3);
        nae.init(&mut store, 3);
        let tape = Tape::new();
        let pooled = tape.constant(ArrayD::from_shape_fn(IxDyn(&[3, 16, 7, 7]), |ix| {
            (ix[0] as f64 - 1.0) * 0.1 + ix[1] as f64 * 0.01
        }));
        let branch = head.forward(&tape, &store, pooled, false);
        assert_eq!(branch.shape(), vec![3, 32, 4, 4]);
        let out = nae.forward(&tape, &store, branch, false);
        assert_eq!(out.embeddings.shape(), vec![3, 24]);
        let emb = out.embeddings.value();
        let emb = emb.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        for row in emb.rows() {
            let norm: f64 = row.dot(&row).sqrt();
            assert!((norm - 1.0).abs() < 1e-5, "norm {norm}");
        }
        for s in out.scores.value().iter() {
            assert!(*s > 0.0 && *s < 1.0);
        }
    }
}

//! Dual-granularity semantic-region alignment losses.
//!
//! Object granularity: each pooled region feature is pulled toward the
//! foreground or background prompt embedding according to its proposal
//! label. Identity granularity: ground-truth box features classify against
//! the per-identity prompt embeddings.

use ndarray::{Array1, Array2, ArrayD, IxDyn};
use thiserror::Error;

use crate::datamodel::IdentityId;
use crate::nn::{ops, Tape, Var};

#[derive(Debug, Error)]
pub enum SraError {
    #[error("identity {label} has no learned prompt (bank holds {num_prompts})")]
    MissingPrompt { label: u32, num_prompts: usize },
    #[error("feature dim {got} does not match text dim {expected}")]
    DimMismatch { expected: usize, got: usize },
}

fn normalized_const<'t>(tape: &'t Tape, rows: &Array2<f64>) -> Var<'t> {
    let mut out = rows.clone();
    for mut row in out.rows_mut() {
        let norm = row.dot(&row).sqrt().max(1e-12);
        row.mapv_inplace(|v| v / norm);
    }
    tape.constant(out.into_dyn())
}

/// Object-granularity alignment over region features `[n, dim]`.
///
/// With cosine similarities `s1` (foreground prompt) and `s2` (background
/// prompt), a foreground region contributes `-log(e^s1 / (e^s1 + e^s2))`
/// and a background region the mirrored term; similarities enter unscaled.
pub fn sra_obj_loss<'t>(
    tape: &'t Tape,
    region_features: Var<'t>,
    labels: &[bool],
    t_fore: &Array1<f64>,
    t_back: &Array1<f64>,
    normalize: bool,
) -> Var<'t> {
    let shape = region_features.shape();
    assert_eq!(shape.len(), 2, "region features must be [n, dim]");
    assert_eq!(shape[0], labels.len(), "one label per region");
    assert_eq!(t_fore.len(), t_back.len());
    if labels.is_empty() {
        return tape.constant(crate::nn::scalar_array(0.0));
    }
    let n = labels.len();

    let prompts = {
        let mut m = Array2::zeros((2, t_fore.len()));
        m.row_mut(0).assign(t_fore);
        m.row_mut(1).assign(t_back);
        m
    };
    let prompts = normalized_const(tape, &prompts);
    let feats = ops::l2norm_rows(region_features, 1e-12);
    let sims = ops::matmul_nt(feats, prompts); // [n, 2]: (s1, s2)

    // c=1 -> softplus(s2 - s1); c=0 -> softplus(s1 - s2)
    let signs = ArrayD::from_shape_fn(IxDyn(&[n, 2]), |ix| {
        let fore = labels[ix[0]];
        match (fore, ix[1]) {
            (true, 0) | (false, 1) => -1.0,
            _ => 1.0,
        }
    });
    let signed = ops::mul(sims, tape.constant(signs));
    // sum the two signed columns per row: (s2 - s1) or (s1 - s2)
    let ones = tape.constant(ArrayD::from_elem(IxDyn(&[1, 2]), 1.0));
    let diffs = ops::reshape(ops::matmul_nt(signed, ones), &[n]);
    let mut loss = ops::sum_all(ops::softplus(diffs));
    if normalize {
        loss = ops::scale(loss, 1.0 / n as f64);
    }
    loss
}

/// Row-wise softmax cross-entropy over logits, summed across rows.
///
/// Shared by the identity-granularity alignment loss; exposed so the
/// softmax shift invariance can be property-tested directly.
pub fn softmax_ce_rows<'t>(logits: Var<'t>, label_cols: &[usize], normalize: bool) -> Var<'t> {
    let n = label_cols.len();
    assert_eq!(logits.shape()[0], n, "one label per row");
    let mut loss = ops::neg(ops::sum_all(ops::pick_per_row(ops::log_softmax_rows(logits), label_cols)));
    if normalize && n > 0 {
        loss = ops::scale(loss, 1.0 / n as f64);
    }
    loss
}

/// Identity-granularity alignment of ground-truth box features `[m, dim]`
/// against per-identity text embeddings `[C, dim]`.
///
/// Cosine similarities are scaled by `logit_scale` before the softmax.
pub fn sra_id_loss<'t>(
    tape: &'t Tape,
    gt_features: Var<'t>,
    identities: &[IdentityId],
    text_embeddings: &Array2<f64>,
    logit_scale: f64,
    normalize: bool,
) -> Result<Var<'t>, SraError> {
    let shape = gt_features.shape();
    assert_eq!(shape.len(), 2, "features must be [m, dim]");
    assert_eq!(shape[0], identities.len(), "one identity per feature row");
    if shape[0] == 0 {
        return Ok(tape.constant(crate::nn::scalar_array(0.0)));
    }
    if shape[1] != text_embeddings.ncols() {
        return Err(SraError::DimMismatch { expected: text_embeddings.ncols(), got: shape[1] });
    }
    let num_prompts = text_embeddings.nrows();
    let mut cols = Vec::with_capacity(identities.len());
    for id in identities {
        let c = id.get() as usize;
        if c > num_prompts {
            return Err(SraError::MissingPrompt { label: id.get(), num_prompts });
        }
        cols.push(c - 1);
    }

    let prompts = normalized_const(tape, text_embeddings);
    let feats = ops::l2norm_rows(gt_features, 1e-12);
    let logits = ops::scale(ops::matmul_nt(feats, prompts), logit_scale);
    Ok(softmax_ce_rows(logits, &cols, normalize))
}

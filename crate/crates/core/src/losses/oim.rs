//! Online instance matching: classification against a lookup table of
//! per-identity prototypes plus a circular queue of unlabeled embeddings.

use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::IdentityId;
use crate::nn::layers::seeded_rng;
use crate::nn::{ops, Tape, Var};
use rand::Rng;

#[derive(Debug, Error)]
pub enum OimError {
    #[error("identity label {label} exceeds table capacity {num_identities}")]
    LabelOutOfRange { label: u32, num_identities: usize },
    #[error("embedding dim {got} does not match table dim {expected}")]
    DimMismatch { expected: usize, got: usize },
}

/// Memory of per-identity embedding prototypes and a fixed-length circular
/// queue for unlabeled embeddings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentityLookupTable {
    prototypes: Array2<f64>,
    queue: Array2<f64>,
    queue_head: usize,
    momentum: f64,
    scale: f64,
}

impl IdentityLookupTable {
    /// Prototypes start as random unit vectors (deterministic in `seed`),
    /// the queue starts at zero.
    pub fn new(
        num_identities: usize,
        embed_dim: usize,
        queue_len: usize,
        momentum: f64,
        scale: f64,
        seed: u64,
    ) -> Self {
        assert!(momentum > 0.0 && momentum < 1.0, "momentum must lie in (0,1)");
        assert!(scale > 0.0, "logit scale must be positive");
        let mut rng = seeded_rng(seed, "oim.prototypes");
        let mut prototypes = Array2::from_shape_simple_fn((num_identities, embed_dim), || {
            rng.random_range(-1.0f64..1.0)
        });
        for mut row in prototypes.rows_mut() {
            let norm = row.dot(&row).sqrt().max(1e-12);
            row.mapv_inplace(|v| v / norm);
        }
        IdentityLookupTable {
            prototypes,
            queue: Array2::zeros((queue_len, embed_dim)),
            queue_head: 0,
            momentum,
            scale,
        }
    }

    pub fn num_identities(&self) -> usize {
        self.prototypes.nrows()
    }

    pub fn embed_dim(&self) -> usize {
        self.prototypes.ncols()
    }

    pub fn queue_len(&self) -> usize {
        self.queue.nrows()
    }

    pub fn queue_head(&self) -> usize {
        self.queue_head
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn prototypes(&self) -> &Array2<f64> {
        &self.prototypes
    }

    pub fn queue(&self) -> &Array2<f64> {
        &self.queue
    }

    /// Prototypes stacked over queue entries: `[C + Q, o]`.
    pub fn bank(&self) -> Array2<f64> {
        if self.queue.nrows() == 0 {
            self.prototypes.clone()
        } else {
            concatenate(Axis(0), &[self.prototypes.view(), self.queue.view()])
                .expect("bank concatenate")
        }
    }
}

/// Temperature-scaled classification of embeddings against the table, with
/// the table update applied functionally.
///
/// Labeled rows contribute cross-entropy over `C + Q` classes and update
/// their prototype by momentum mixing followed by renormalization; unlabeled
/// rows contribute nothing and push into the queue. Logits are computed
/// against the pre-update table.
pub fn oim_loss<'t>(
    tape: &'t Tape,
    embeddings: Var<'t>,
    identities: &[Option<IdentityId>],
    table: &IdentityLookupTable,
    normalize: bool,
) -> Result<(Var<'t>, IdentityLookupTable), OimError> {
    let shape = embeddings.shape();
    assert_eq!(shape.len(), 2, "embeddings must be [n, o]");
    assert_eq!(shape[0], identities.len(), "one identity per embedding row");
    if shape[1] != table.embed_dim() {
        return Err(OimError::DimMismatch { expected: table.embed_dim(), got: shape[1] });
    }
    for id in identities.iter().flatten() {
        if id.get() as usize > table.num_identities() {
            return Err(OimError::LabelOutOfRange {
                label: id.get(),
                num_identities: table.num_identities(),
            });
        }
    }

    let labeled: Vec<(usize, usize)> = identities
        .iter()
        .enumerate()
        .filter_map(|(i, id)| id.map(|id| (i, id.get() as usize - 1)))
        .collect();

    let loss = if labeled.is_empty() {
        tape.constant(crate::nn::scalar_array(0.0))
    } else {
        let bank = tape.constant(table.bank().into_dyn());
        let rows: Vec<usize> = labeled.iter().map(|&(i, _)| i).collect();
        let cols: Vec<usize> = labeled.iter().map(|&(_, c)| c).collect();
        let picked = ops::select_rows(embeddings, &rows);
        let logits = ops::scale(ops::matmul_nt(picked, bank), table.scale());
        let mut loss =
            ops::neg(ops::sum_all(ops::pick_per_row(ops::log_softmax_rows(logits), &cols)));
        if normalize {
            loss = ops::scale(loss, 1.0 / labeled.len() as f64);
        }
        loss
    };

    // momentum update and queue push on the forward values
    let mut updated = table.clone();
    let values = embeddings.value();
    for (i, id) in identities.iter().enumerate() {
        let emb = values.index_axis(Axis(0), i);
        match id {
            Some(id) => {
                let c = id.get() as usize - 1;
                let mut row = updated.prototypes.row_mut(c);
                for (p, &x) in row.iter_mut().zip(emb.iter()) {
                    *p = updated.momentum * *p + (1.0 - updated.momentum) * x;
                }
                let norm = row.dot(&row).sqrt().max(1e-12);
                row.mapv_inplace(|v| v / norm);
            }
            None => {
                if updated.queue.nrows() > 0 {
                    let head = updated.queue_head;
                    for (q, &x) in updated.queue.row_mut(head).iter_mut().zip(emb.iter()) {
                        *q = x;
                    }
                    updated.queue_head = (head + 1) % updated.queue.nrows();
                }
            }
        }
    }

    Ok((loss, updated))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};
    use std::num::NonZeroU32;

    fn id(v: u32) -> Option<IdentityId> {
        NonZeroU32::new(v)
    }

    fn unit(v: &mut [f64]) {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.iter_mut().for_each(|x| *x /= n);
    }

    #[test]
    fn own_prototype_at_high_scale_saturates_to_zero() {
        let table = IdentityLookupTable::new(3, 8, 4, 0.5, 300.0, 9);
        let tape = Tape::new();
        let proto0: Vec<f64> = table.prototypes().row(0).to_vec();
        let emb = tape.leaf(ArrayD::from_shape_vec(IxDyn(&[1, 8]), proto0).unwrap(), false);
        let (loss, _) = oim_loss(&tape, emb, &[id(1)], &table, false).unwrap();
        assert!(loss.scalar() < 1e-6, "loss {}", loss.scalar());
    }

    #[test]
    fn all_unlabeled_gives_zero_loss_and_advances_queue() {
        let table = IdentityLookupTable::new(2, 4, 8, 0.5, 30.0, 1);
        let tape = Tape::new();
        let mut data = vec![0.0; 3 * 4];
        data[0] = 1.0;
        data[5] = 1.0;
        data[10] = 1.0;
        let emb = tape.leaf(ArrayD::from_shape_vec(IxDyn(&[3, 4]), data).unwrap(), false);
        let (loss, updated) = oim_loss(&tape, emb, &[None, None, None], &table, false).unwrap();
        assert_eq!(loss.scalar(), 0.0);
        assert_eq!(updated.queue_head(), 3);
        assert_eq!(updated.queue().row(0)[0], 1.0);
        assert_eq!(updated.queue().row(1)[1], 1.0);
        assert_eq!(updated.queue().row(2)[2], 1.0);
    }

    #[test]
    fn queue_wraps_circularly() {
        let table = IdentityLookupTable::new(1, 2, 2, 0.5, 30.0, 1);
        let tape = Tape::new();
        let emb = tape.leaf(
            ArrayD::from_shape_vec(IxDyn(&[3, 2]), vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0]).unwrap(),
            false,
        );
        let (_, updated) = oim_loss(&tape, emb, &[None, None, None], &table, false).unwrap();
        // third push overwrote slot 0
        assert_eq!(updated.queue().row(0).to_vec(), vec![-1.0, 0.0]);
        assert_eq!(updated.queue().row(1).to_vec(), vec![0.0, 1.0]);
        assert_eq!(updated.queue_head(), 1);
    }

    #[test]
    fn prototype_update_matches_momentum_formula() {
        let table = IdentityLookupTable::new(2, 3, 0, 0.5, 30.0, 5);
        let tape = Tape::new();
        let mut x = [0.3, -0.5, 0.9];
        unit(&mut x);
        let emb = tape.leaf(ArrayD::from_shape_vec(IxDyn(&[1, 3]), x.to_vec()).unwrap(), false);
        let (_, updated) = oim_loss(&tape, emb, &[id(2)], &table, false).unwrap();
        let mut expect: Vec<f64> = table
            .prototypes()
            .row(1)
            .iter()
            .zip(x.iter())
            .map(|(&p, &e)| 0.5 * p + 0.5 * e)
            .collect();
        unit(&mut expect);
        for (a, b) in updated.prototypes().row(1).iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let norm: f64 = updated.prototypes().row(1).dot(&updated.prototypes().row(1)).sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        // untouched row unchanged
        assert_eq!(updated.prototypes().row(0), table.prototypes().row(0));
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let table = IdentityLookupTable::new(2, 3, 0, 0.5, 30.0, 5);
        let tape = Tape::new();
        let emb = tape.leaf(ArrayD::zeros(IxDyn(&[1, 3])), false);
        match oim_loss(&tape, emb, &[id(3)], &table, false) {
            Err(OimError::LabelOutOfRange { label, num_identities }) => {
                assert_eq!((label, num_identities), (3, 2));
            }
            other => panic!("expected label error, got {other:?}"),
        }
    }
}

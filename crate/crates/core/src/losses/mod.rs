//! Training objectives: detection, online instance matching, dual-granularity
//! semantic-region alignment, and multi-level identification learning.
//!
//! All losses are sums over their natural index sets (regions, boxes,
//! frames); an optional normalize-by-count switch divides by the count
//! instead and defaults off.

mod detection;
mod mil;
mod oim;
mod sra;

pub use detection::{detection_loss, ProposalTarget};
pub use mil::{mil_box_loss, mil_fea_loss, mil_img_loss};
pub use oim::{oim_loss, IdentityLookupTable, OimError};
pub use sra::{softmax_ce_rows, sra_id_loss, sra_obj_loss, SraError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::Var;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("non-finite loss component '{component}' ({value})")]
    NonFinite { component: &'static str, value: f64 },
    #[error("dimension mismatch in '{context}': expected {expected}, got {got}")]
    DimMismatch { context: &'static str, expected: usize, got: usize },
    #[error("identity label {label} exceeds the {num_classes} known classes")]
    LabelOutOfRange { label: u32, num_classes: usize },
}

/// Per-step scalar components and their sum; every weight is 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub det: f64,
    pub reid: f64,
    pub sra_obj: f64,
    pub sra_id: f64,
    pub mil_img: f64,
    pub mil_box: f64,
    pub mil_fea: f64,
    pub total: f64,
}

impl LossBundle {
    pub fn new(
        det: f64,
        reid: f64,
        sra_obj: f64,
        sra_id: f64,
        mil_img: f64,
        mil_box: f64,
        mil_fea: f64,
    ) -> Result<Self, LossError> {
        for (component, value) in [
            ("det", det),
            ("reid", reid),
            ("sra_obj", sra_obj),
            ("sra_id", sra_id),
            ("mil_img", mil_img),
            ("mil_box", mil_box),
            ("mil_fea", mil_fea),
        ] {
            if !value.is_finite() {
                return Err(LossError::NonFinite { component, value });
            }
        }
        let total = det + reid + (sra_obj + sra_id) + (mil_img + mil_box + mil_fea);
        Ok(LossBundle { det, reid, sra_obj, sra_id, mil_img, mil_box, mil_fea, total })
    }

    pub fn components(&self) -> [(&'static str, f64); 7] {
        [
            ("det", self.det),
            ("reid", self.reid),
            ("sra_obj", self.sra_obj),
            ("sra_id", self.sra_id),
            ("mil_img", self.mil_img),
            ("mil_box", self.mil_box),
            ("mil_fea", self.mil_fea),
        ]
    }
}

/// Sum the seven component variables into the total objective and capture
/// their scalar values, rejecting any non-finite component.
pub fn total_loss<'t>(
    det: Var<'t>,
    reid: Var<'t>,
    sra_obj: Var<'t>,
    sra_id: Var<'t>,
    mil_img: Var<'t>,
    mil_box: Var<'t>,
    mil_fea: Var<'t>,
) -> Result<(Var<'t>, LossBundle), LossError> {
    let bundle = LossBundle::new(
        det.scalar(),
        reid.scalar(),
        sra_obj.scalar(),
        sra_id.scalar(),
        mil_img.scalar(),
        mil_box.scalar(),
        mil_fea.scalar(),
    )?;
    let total = crate::nn::ops::sum_scalars(&[det, reid, sra_obj, sra_id, mil_img, mil_box, mil_fea]);
    Ok((total, bundle))
}

/// Counters for degenerate inputs that are tolerated rather than fatal.
#[derive(Debug, Default, Clone, Copy, Serialize, Deserialize)]
pub struct LossCounters {
    pub empty_detection_batches: u64,
    pub unlabeled_gt_boxes_skipped: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{scalar_array, Tape};

    #[test]
    fn bundle_sums_components() {
        let b = LossBundle::new(1.0, 2.0, 0.5, 0.5, 0.1, 0.2, 0.3).unwrap();
        assert!((b.total - 4.6).abs() < 1e-12);
    }

    #[test]
    fn all_zero_components_total_zero() {
        let b = LossBundle::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(b.total, 0.0);
    }

    #[test]
    fn non_finite_component_is_named() {
        let err = LossBundle::new(1.0, f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0).unwrap_err();
        match err {
            LossError::NonFinite { component, .. } => assert_eq!(component, "reid"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn total_matches_recomposition() {
        let tape = Tape::new();
        let vals = [0.3, 1.2, 0.01, 2.0, 0.4, 0.9, 0.05];
        let vars: Vec<_> = vals.iter().map(|&v| tape.leaf(scalar_array(v), true)).collect();
        let (total, bundle) =
            total_loss(vars[0], vars[1], vars[2], vars[3], vars[4], vars[5], vars[6]).unwrap();
        let expected: f64 = vals.iter().sum();
        assert!((total.scalar() - expected).abs() < 1e-12);
        assert!((bundle.total - expected).abs() < 1e-12);
    }
}

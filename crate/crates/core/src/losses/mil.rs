//! Multi-level identification learning: image-level multi-ID classification,
//! box-level ID classification, and feature-level distillation to a frozen
//! teacher.

use ndarray::Array2;

use super::{LossCounters, LossError};
use crate::datamodel::IdentityId;
use crate::nn::{ops, Tape, Var};

/// Image-level multi-ID classification: binary cross-entropy of predicted
/// per-identity presence probabilities `[B, C]` against the multi-hot frame
/// labels, averaged over classes and summed over frames.
pub fn mil_img_loss<'t>(
    tape: &'t Tape,
    probs: Var<'t>,
    targets: &Array2<f64>,
    normalize: bool,
) -> Var<'t> {
    let shape = probs.shape();
    assert_eq!(shape, vec![targets.nrows(), targets.ncols()], "probs/targets shape mismatch");
    let (b, c) = (targets.nrows(), targets.ncols());
    if b == 0 || c == 0 {
        return tape.constant(crate::nn::scalar_array(0.0));
    }
    let terms = ops::bce_with_targets(probs, &targets.clone().into_dyn());
    let mut loss = ops::scale(ops::sum_all(terms), 1.0 / c as f64);
    if normalize {
        loss = ops::scale(loss, 1.0 / b as f64);
    }
    loss
}

/// Box-level ID classification: `-log p(c)` per labeled ground-truth box,
/// over predicted class probabilities `[m, C]`. Unlabeled boxes are skipped
/// and counted.
pub fn mil_box_loss<'t>(
    tape: &'t Tape,
    probs: Var<'t>,
    identities: &[Option<IdentityId>],
    normalize: bool,
    counters: &mut LossCounters,
) -> Result<Var<'t>, LossError> {
    let shape = probs.shape();
    assert_eq!(shape.len(), 2, "probs must be [m, C]");
    assert_eq!(shape[0], identities.len(), "one identity per probability row");
    let num_classes = shape[1];

    let mut rows = Vec::new();
    let mut cols = Vec::new();
    for (i, id) in identities.iter().enumerate() {
        match id {
            Some(id) => {
                let c = id.get() as usize;
                if c > num_classes {
                    return Err(LossError::LabelOutOfRange { label: id.get(), num_classes });
                }
                rows.push(i);
                cols.push(c - 1);
            }
            None => counters.unlabeled_gt_boxes_skipped += 1,
        }
    }
    if rows.is_empty() {
        return Ok(tape.constant(crate::nn::scalar_array(0.0)));
    }
    let picked = ops::pick_per_row(ops::select_rows(probs, &rows), &cols);
    let mut loss = ops::neg(ops::sum_all(ops::ln(picked)));
    if normalize {
        loss = ops::scale(loss, 1.0 / rows.len() as f64);
    }
    Ok(loss)
}

/// Feature-level consistency distillation: summed L1 distance between
/// student features `[m, o]` and the frozen teacher's features.
///
/// The teacher enters as a constant, so gradients flow only into the
/// student features.
pub fn mil_fea_loss<'t>(
    tape: &'t Tape,
    student: Var<'t>,
    teacher: &Array2<f64>,
    normalize: bool,
) -> Result<Var<'t>, LossError> {
    let shape = student.shape();
    assert_eq!(shape.len(), 2, "student features must be [m, o]");
    if shape[0] != teacher.nrows() {
        return Err(LossError::DimMismatch {
            context: "mil_fea rows",
            expected: teacher.nrows(),
            got: shape[0],
        });
    }
    if shape[1] != teacher.ncols() {
        return Err(LossError::DimMismatch {
            context: "mil_fea feature dim",
            expected: teacher.ncols(),
            got: shape[1],
        });
    }
    if teacher.nrows() == 0 {
        return Ok(tape.constant(crate::nn::scalar_array(0.0)));
    }
    let t = tape.constant(teacher.clone().into_dyn());
    let mut loss = ops::sum_all(ops::abs(ops::sub(student, t)));
    if normalize {
        loss = ops::scale(loss, 1.0 / teacher.nrows() as f64);
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, ArrayD, IxDyn};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use std::num::NonZeroU32;

    #[test]
    fn img_exact_prediction_is_zero() {
        let tape = Tape::new();
        let targets = Array2::from_shape_vec((1, 4), vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let probs = tape.leaf(targets.clone().into_dyn(), false);
        let loss = mil_img_loss(&tape, probs, &targets, false);
        assert_eq!(loss.scalar(), 0.0);
    }

    #[test]
    fn img_half_probability_gives_ln2_per_frame() {
        let tape = Tape::new();
        let targets =
            Array2::from_shape_vec((2, 5), vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0])
                .unwrap();
        let probs = tape.leaf(ArrayD::from_elem(IxDyn(&[2, 5]), 0.5), false);
        let loss = mil_img_loss(&tape, probs, &targets, false);
        assert!((loss.scalar() - 2.0 * (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn img_random_case_matches_bce_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let (b, c) = (3, 5);
        let targets = Array2::from_shape_simple_fn((b, c), || {
            if rng.random_bool(0.4) {
                1.0
            } else {
                0.0
            }
        });
        let probs_arr = Array2::from_shape_simple_fn((b, c), || rng.random_range(0.05..0.95));
        let tape = Tape::new();
        let probs = tape.leaf(probs_arr.clone().into_dyn(), false);
        let loss = mil_img_loss(&tape, probs, &targets, false);

        let mut expect = 0.0;
        for t in 0..b {
            let mut frame = 0.0;
            for l in 0..c {
                let (y, p) = (targets[[t, l]], probs_arr[[t, l]]);
                frame += -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
            }
            expect += frame / c as f64;
        }
        assert!((loss.scalar() - expect).abs() < 1e-9);
    }

    #[test]
    fn box_one_hot_correct_is_zero_and_uniform_is_lnc() {
        let tape = Tape::new();
        let one_hot = tape.leaf(
            ArrayD::from_shape_vec(IxDyn(&[1, 3]), vec![0.0, 1.0, 0.0]).unwrap(),
            false,
        );
        let ids = vec![NonZeroU32::new(2)];
        let mut counters = LossCounters::default();
        let loss = mil_box_loss(&tape, one_hot, &ids, false, &mut counters).unwrap();
        assert_eq!(loss.scalar(), 0.0);

        let c = 6;
        let uniform = tape.leaf(ArrayD::from_elem(IxDyn(&[1, c]), 1.0 / c as f64), false);
        let loss = mil_box_loss(&tape, uniform, &vec![NonZeroU32::new(4)], false, &mut counters)
            .unwrap();
        assert!((loss.scalar() - (c as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn box_unlabeled_rows_skip_and_count() {
        let tape = Tape::new();
        let probs = tape.leaf(ArrayD::from_elem(IxDyn(&[3, 2]), 0.5), false);
        let ids = vec![None, NonZeroU32::new(1), None];
        let mut counters = LossCounters::default();
        let loss = mil_box_loss(&tape, probs, &ids, false, &mut counters).unwrap();
        assert!((loss.scalar() - (2.0f64).ln()).abs() < 1e-12);
        assert_eq!(counters.unlabeled_gt_boxes_skipped, 2);
    }

    #[test]
    fn box_random_case_matches_ce_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let (m, c) = (3, 6);
        let mut probs_arr = Array2::from_shape_simple_fn((m, c), || rng.random_range(0.01..1.0));
        for mut row in probs_arr.rows_mut() {
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        let ids: Vec<Option<NonZeroU32>> =
            (0..m).map(|_| NonZeroU32::new(rng.random_range(1..=c as u32))).collect();
        let tape = Tape::new();
        let probs = tape.leaf(probs_arr.clone().into_dyn(), false);
        let mut counters = LossCounters::default();
        let loss = mil_box_loss(&tape, probs, &ids, false, &mut counters).unwrap();
        let expect: f64 = ids
            .iter()
            .enumerate()
            .map(|(i, id)| -probs_arr[[i, id.unwrap().get() as usize - 1]].ln())
            .sum();
        assert!((loss.scalar() - expect).abs() < 1e-9);
    }

    #[test]
    fn fea_equal_features_zero_and_epsilon_shift_linear() {
        let tape = Tape::new();
        let g = Array2::from_shape_vec((2, 3), vec![0.5, -0.25, 1.5, 0.0, 2.0, -1.0]).unwrap();
        let student_eq = tape.leaf(g.clone().into_dyn(), false);
        let loss = mil_fea_loss(&tape, student_eq, &g, false).unwrap();
        assert_eq!(loss.scalar(), 0.0);

        let eps = 1e-3;
        let student_shift = tape.leaf(g.mapv(|v| v + eps).into_dyn(), false);
        let loss = mil_fea_loss(&tape, student_shift, &g, false).unwrap();
        assert!((loss.scalar() - 6.0 * eps).abs() < 1e-12);
    }

    #[test]
    fn fea_random_case_matches_elementwise_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        let g = Array2::from_shape_simple_fn((3, 4), || rng.random_range(-1.0..1.0));
        let f = Array2::from_shape_simple_fn((3, 4), || rng.random_range(-1.0..1.0));
        let tape = Tape::new();
        let student = tape.leaf(f.clone().into_dyn(), false);
        let loss = mil_fea_loss(&tape, student, &g, false).unwrap();
        let expect: f64 = f.iter().zip(g.iter()).map(|(a, b)| (a - b).abs()).sum();
        assert!((loss.scalar() - expect).abs() < 1e-9);
    }

    #[test]
    fn fea_dimension_mismatch_rejected() {
        let tape = Tape::new();
        let student = tape.leaf(ArrayD::zeros(IxDyn(&[2, 3])), false);
        let teacher = Array2::zeros((2, 4));
        assert!(mil_fea_loss(&tape, student, &teacher, false).is_err());
    }

    #[test]
    fn fea_teacher_gets_no_gradient() {
        // teacher enters as a constant: perturbing the student changes the
        // loss, and the gradient w.r.t. the student is +-1 elementwise
        let tape = Tape::new();
        let g = Array2::from_shape_vec((1, 2), vec![0.3, -0.7]).unwrap();
        let student = tape.leaf(
            ArrayD::from_shape_vec(IxDyn(&[1, 2]), vec![0.5, -1.0]).unwrap(),
            true,
        );
        let loss = mil_fea_loss(&tape, student, &g, false).unwrap();
        let grads = tape.backward(loss);
        let gs = grads.grad(student);
        assert_eq!(gs[[0, 0]], 1.0);
        assert_eq!(gs[[0, 1]], -1.0);
    }
}

//! Detection supervision: smooth-L1 box regression on foreground proposals
//! plus binary foreground/background cross-entropy on all proposals.
//!
//! Applied to the first-stage predictions, to the identity-branch refined
//! outputs, and to the region-proposal head.

use ndarray::{ArrayD, IxDyn};

use super::LossCounters;
use crate::nn::{ops, Tape, Var};

/// Label for one proposal: background, or foreground with the regression
/// target expressed in delta space.
#[derive(Debug, Clone, Copy)]
pub struct ProposalTarget {
    pub is_foreground: bool,
    pub delta_target: [f64; 4],
}

impl ProposalTarget {
    pub fn background() -> Self {
        ProposalTarget { is_foreground: false, delta_target: [0.0; 4] }
    }

    pub fn foreground(delta_target: [f64; 4]) -> Self {
        ProposalTarget { is_foreground: true, delta_target }
    }
}

/// Sum of smooth-L1 regression over foreground proposals and binary
/// cross-entropy over all proposals.
///
/// `pred_deltas` is `[n, 4]`, `objectness` is `[n]` probabilities.
/// An empty batch contributes zero and bumps the warning counter.
pub fn detection_loss<'t>(
    tape: &'t Tape,
    pred_deltas: Var<'t>,
    objectness: Var<'t>,
    targets: &[ProposalTarget],
    normalize: bool,
    counters: &mut LossCounters,
) -> Var<'t> {
    let n = targets.len();
    assert_eq!(pred_deltas.shape(), vec![n, 4], "one delta row per proposal");
    assert_eq!(objectness.shape(), vec![n], "one objectness score per proposal");
    if n == 0 {
        counters.empty_detection_batches += 1;
        return tape.constant(crate::nn::scalar_array(0.0));
    }

    let fg_rows: Vec<usize> =
        targets.iter().enumerate().filter(|(_, t)| t.is_foreground).map(|(i, _)| i).collect();

    let mut loss = {
        let labels = ArrayD::from_shape_fn(IxDyn(&[n]), |ix| {
            if targets[ix[0]].is_foreground {
                1.0
            } else {
                0.0
            }
        });
        ops::sum_all(ops::bce_with_targets(objectness, &labels))
    };

    if !fg_rows.is_empty() {
        let mut target_data = Vec::with_capacity(fg_rows.len() * 4);
        for &i in &fg_rows {
            target_data.extend_from_slice(&targets[i].delta_target);
        }
        let target = tape.constant(
            ArrayD::from_shape_vec(IxDyn(&[fg_rows.len(), 4]), target_data).expect("target shape"),
        );
        let fg_pred = ops::select_rows(pred_deltas, &fg_rows);
        let reg = ops::sum_all(ops::smooth_l1(fg_pred, target, 1.0));
        loss = ops::add(loss, reg);
    }

    if normalize {
        loss = ops::scale(loss, 1.0 / n as f64);
    }
    loss
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn to_array(data: &[f64], shape: &[usize]) -> ArrayD<f64> {
        ArrayD::from_shape_vec(IxDyn(shape), data.to_vec()).unwrap()
    }

    // independent scalar reference used by the random-case test
    fn reference(deltas: &[[f64; 4]], obj: &[f64], targets: &[ProposalTarget]) -> f64 {
        let mut loss = 0.0;
        for (i, t) in targets.iter().enumerate() {
            loss += if t.is_foreground { -obj[i].ln() } else { -(1.0 - obj[i]).ln() };
            if t.is_foreground {
                for d in 0..4 {
                    let e: f64 = deltas[i][d] - t.delta_target[d];
                    loss += if e.abs() < 1.0 { 0.5 * e * e } else { e.abs() - 0.5 };
                }
            }
        }
        loss
    }

    #[test]
    fn perfect_predictions_give_zero() {
        let tape = Tape::new();
        let targets = vec![
            ProposalTarget::foreground([0.1, -0.2, 0.3, 0.0]),
            ProposalTarget::background(),
        ];
        let deltas = tape.leaf(to_array(&[0.1, -0.2, 0.3, 0.0, 9.0, 9.0, 9.0, 9.0], &[2, 4]), false);
        let obj = tape.leaf(to_array(&[1.0, 0.0], &[2]), false);
        let mut counters = LossCounters::default();
        let loss = detection_loss(&tape, deltas, obj, &targets, false, &mut counters);
        assert_eq!(loss.scalar(), 0.0);
    }

    #[test]
    fn background_only_batch_has_no_regression_term() {
        let tape = Tape::new();
        let targets = vec![ProposalTarget::background(), ProposalTarget::background()];
        let deltas = tape.leaf(to_array(&[5.0; 8], &[2, 4]), false);
        let obj = tape.leaf(to_array(&[0.25, 0.5], &[2]), false);
        let mut counters = LossCounters::default();
        let loss = detection_loss(&tape, deltas, obj, &targets, false, &mut counters);
        let expected = -(0.75f64).ln() - (0.5f64).ln();
        assert!((loss.scalar() - expected).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_returns_zero_and_counts() {
        let tape = Tape::new();
        let deltas = tape.leaf(ArrayD::zeros(IxDyn(&[0, 4])), false);
        let obj = tape.leaf(ArrayD::zeros(IxDyn(&[0])), false);
        let mut counters = LossCounters::default();
        let loss = detection_loss(&tape, deltas, obj, &[], false, &mut counters);
        assert_eq!(loss.scalar(), 0.0);
        assert_eq!(counters.empty_detection_batches, 1);
    }

    #[test]
    fn random_case_matches_reference() {
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        for _ in 0..10 {
            let n = 5;
            let mut deltas = Vec::new();
            let mut obj = Vec::new();
            let mut targets = Vec::new();
            for _ in 0..n {
                deltas.push([
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                ]);
                obj.push(rng.random_range(0.05..0.95));
                if rng.random_bool(0.6) {
                    targets.push(ProposalTarget::foreground([
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ]));
                } else {
                    targets.push(ProposalTarget::background());
                }
            }
            let tape = Tape::new();
            let flat: Vec<f64> = deltas.iter().flatten().copied().collect();
            let d = tape.leaf(to_array(&flat, &[n, 4]), false);
            let o = tape.leaf(to_array(&obj, &[n]), false);
            let mut counters = LossCounters::default();
            let loss = detection_loss(&tape, d, o, &targets, false, &mut counters);
            let expect = reference(&deltas, &obj, &targets);
            assert!((loss.scalar() - expect).abs() < 1e-6, "{} vs {}", loss.scalar(), expect);
        }
    }
}

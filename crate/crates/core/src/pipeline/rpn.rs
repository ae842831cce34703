//! Region proposal head: per-anchor objectness and box deltas over the
//! shared feature map, with anchor target assignment for training.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha20Rng;

use super::boxes::{decode_delta, encode_delta, nms, GtBox};
use crate::datamodel::{iou, Rect};
use crate::losses::ProposalTarget;
use crate::nn::layers::Conv2d;
use crate::nn::{ops, ParamStore, Tape, Var};

#[derive(Debug, Clone)]
pub struct Rpn {
    conv: Conv2d,
    obj: Conv2d,
    delta: Conv2d,
    pub anchors_per_cell: usize,
}

pub struct RpnMaps<'t> {
    /// `[B, A, hf, wf]` objectness logits.
    pub obj_logits: Var<'t>,
    /// `[B, 4A, hf, wf]` per-anchor deltas (channel = anchor * 4 + k).
    pub deltas: Var<'t>,
}

impl Rpn {
    pub fn new(in_channels: usize, anchors_per_cell: usize) -> Self {
        Rpn {
            conv: Conv2d::new("rpn.conv", in_channels, in_channels, 3, 1, 1),
            obj: Conv2d::new("rpn.obj", in_channels, anchors_per_cell, 1, 1, 0),
            delta: Conv2d::new("rpn.delta", in_channels, 4 * anchors_per_cell, 1, 1, 0),
            anchors_per_cell,
        }
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        self.conv.init(store, seed);
        self.obj.init(store, seed);
        self.delta.init(store, seed);
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        fmap: Var<'t>,
        trainable: bool,
    ) -> RpnMaps<'t> {
        let h = ops::relu(self.conv.forward(tape, store, fmap, trainable));
        RpnMaps {
            obj_logits: self.obj.forward(tape, store, h, trainable),
            deltas: self.delta.forward(tape, store, h, trainable),
        }
    }

    /// Flatten one batch item to per-anchor rows aligned with the anchor
    /// grid order: logits `[K]` and deltas `[K, 4]` for `K = A*hf*wf`.
    pub fn flatten_item<'t>(&self, maps: &RpnMaps<'t>, item: usize) -> (Var<'t>, Var<'t>) {
        let a = self.anchors_per_cell;
        let shape = maps.obj_logits.shape();
        let (hf, wf) = (shape[2], shape[3]);
        let k = a * hf * wf;
        let logits = ops::reshape(ops::select_rows(maps.obj_logits, &[item]), &[k]);
        let deltas = ops::select_rows(maps.deltas, &[item]);
        let deltas = ops::reshape(deltas, &[a, 4, hf, wf]);
        let deltas = ops::permute(deltas, &[0, 2, 3, 1]);
        let deltas = ops::reshape(deltas, &[k, 4]);
        (logits, deltas)
    }
}

/// Value-level proposal generation for one item: decode every valid anchor,
/// apply NMS, keep the `budget` best by objectness.
pub fn propose(
    anchor_grid: &[Option<Rect>],
    obj_logits: &[f64],
    deltas: &[[f64; 4]],
    img_w: f64,
    img_h: f64,
    nms_iou: f64,
    budget: usize,
) -> Vec<(Rect, f64)> {
    assert_eq!(anchor_grid.len(), obj_logits.len());
    assert_eq!(anchor_grid.len(), deltas.len());
    if budget == 0 {
        return Vec::new();
    }
    let mut boxes = Vec::new();
    let mut scores = Vec::new();
    for (i, anchor) in anchor_grid.iter().enumerate() {
        let Some(anchor) = anchor else { continue };
        let score = 1.0 / (1.0 + (-obj_logits[i]).exp());
        boxes.push(decode_delta(anchor, &deltas[i], img_w, img_h));
        scores.push(score);
    }
    let kept = nms(&boxes, &scores, nms_iou);
    kept.into_iter().take(budget).map(|i| (boxes[i], scores[i])).collect()
}

/// Anchor supervision for one item: sampled anchor indices and their
/// targets. Positives are anchors with IoU >= 0.7 against some ground truth
/// plus each ground truth's best anchor; negatives have IoU < 0.3.
pub fn anchor_targets(
    anchor_grid: &[Option<Rect>],
    gts: &[GtBox],
    rng: &mut ChaCha20Rng,
    sample_size: usize,
) -> (Vec<usize>, Vec<ProposalTarget>) {
    let mut best_per_gt: Vec<(usize, f64)> = vec![(usize::MAX, 0.0); gts.len()];
    let mut positives: Vec<(usize, usize)> = Vec::new();
    let mut negatives: Vec<usize> = Vec::new();

    for (i, anchor) in anchor_grid.iter().enumerate() {
        let Some(anchor) = anchor else { continue };
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            let v = iou(anchor, &gt.rect);
            if v > best_per_gt[gi].1 {
                best_per_gt[gi] = (i, v);
            }
            if best.map_or(true, |(_, bv)| v > bv) {
                best = Some((gi, v));
            }
        }
        match best {
            Some((gi, v)) if v >= 0.7 => positives.push((i, gi)),
            Some((_, v)) if v < 0.3 => negatives.push(i),
            None => negatives.push(i),
            _ => {} // ignored band
        }
    }
    for (gi, &(ai, v)) in best_per_gt.iter().enumerate() {
        if ai != usize::MAX && v > 0.0 && !positives.iter().any(|&(i, _)| i == ai) {
            positives.push((ai, gi));
        }
    }
    positives.sort_by_key(|&(i, _)| i);

    let max_pos = (sample_size / 2).min(positives.len());
    let mut pos_sample = positives;
    if pos_sample.len() > max_pos {
        pos_sample.shuffle(rng);
        pos_sample.truncate(max_pos);
        pos_sample.sort_by_key(|&(i, _)| i);
    }
    let max_neg = sample_size.saturating_sub(pos_sample.len()).min(negatives.len());
    if negatives.len() > max_neg {
        negatives.shuffle(rng);
        negatives.truncate(max_neg);
        negatives.sort_unstable();
    }

    let mut indices = Vec::with_capacity(pos_sample.len() + negatives.len());
    let mut targets = Vec::with_capacity(indices.capacity());
    for (i, gi) in pos_sample {
        let anchor = anchor_grid[i].expect("positive anchor valid");
        indices.push(i);
        targets.push(ProposalTarget::foreground(encode_delta(&anchor, &gts[gi].rect)));
    }
    for i in negatives {
        indices.push(i);
        targets.push(ProposalTarget::background());
    }
    (indices, targets)
}

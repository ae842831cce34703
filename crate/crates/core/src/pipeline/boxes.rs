//! Box geometry shared by the proposal and head stages: delta encoding,
//! anchor generation, NMS, and IoU-based target assignment.

use crate::datamodel::{iou, IdentityId, Rect};
use crate::losses::ProposalTarget;

/// Clamp on predicted log-scale factors; matches the usual two-stage
/// detector bound of ln(1000/16).
const MAX_LOG_SCALE: f64 = 4.135166556742356;

/// Encode the regression target that maps `anchor` onto `gt`.
pub fn encode_delta(anchor: &Rect, gt: &Rect) -> [f64; 4] {
    let (acx, acy) = anchor.center();
    let (gcx, gcy) = gt.center();
    [
        (gcx - acx) / anchor.width(),
        (gcy - acy) / anchor.height(),
        (gt.width() / anchor.width()).ln(),
        (gt.height() / anchor.height()).ln(),
    ]
}

/// Apply a predicted delta to `anchor`, clipping the result to the image.
/// Falls back to the clipped anchor when the decoded box degenerates.
pub fn decode_delta(anchor: &Rect, delta: &[f64; 4], img_w: f64, img_h: f64) -> Rect {
    let (acx, acy) = anchor.center();
    let cx = acx + delta[0] * anchor.width();
    let cy = acy + delta[1] * anchor.height();
    let w = anchor.width() * delta[2].clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE).exp();
    let h = anchor.height() * delta[3].clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE).exp();
    let decoded = Rect::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
        .ok()
        .and_then(|r| r.clipped(img_w, img_h));
    match decoded {
        Some(r) => r,
        None => anchor
            .clipped(img_w, img_h)
            .unwrap_or(*anchor),
    }
}

/// Dense anchor grid over a feature map, clipped to the image. The slot
/// order is (aspect, size)-major, then row-major over cells, matching the
/// RPN head's flattened output; anchors that collapse under clipping stay
/// as `None` so indices keep lining up.
pub fn generate_anchor_grid(
    feat_h: usize,
    feat_w: usize,
    stride: usize,
    sizes: &[f64],
    aspects: &[f64],
    img_w: f64,
    img_h: f64,
) -> Vec<Option<Rect>> {
    let mut anchors = Vec::with_capacity(feat_h * feat_w * sizes.len() * aspects.len());
    for &aspect in aspects {
        for &size in sizes {
            let w = size / aspect.sqrt();
            let h = size * aspect.sqrt();
            for y in 0..feat_h {
                let cy = (y as f64 + 0.5) * stride as f64;
                for x in 0..feat_w {
                    let cx = (x as f64 + 0.5) * stride as f64;
                    let anchor = Rect::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
                        .ok()
                        .and_then(|r| r.clipped(img_w, img_h))
                        .filter(|a| a.width() >= 1.0 && a.height() >= 1.0);
                    anchors.push(anchor);
                }
            }
        }
    }
    anchors
}

/// Number of anchor variants per feature-map cell.
pub fn anchors_per_cell(sizes: &[f64], aspects: &[f64]) -> usize {
    sizes.len() * aspects.len()
}

/// Greedy non-maximum suppression; returns kept indices ordered by
/// descending score with deterministic tie-breaking.
pub fn nms(boxes: &[Rect], scores: &[f64], iou_thresh: f64) -> Vec<usize> {
    assert_eq!(boxes.len(), scores.len());
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| boxes[a].x1().total_cmp(&boxes[b].x1()))
            .then_with(|| boxes[a].y1().total_cmp(&boxes[b].y1()))
            .then_with(|| a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        if kept.iter().all(|&k| iou(&boxes[k], &boxes[i]) <= iou_thresh) {
            kept.push(i);
        }
    }
    kept
}

/// Ground-truth box used for target assignment.
#[derive(Debug, Clone, Copy)]
pub struct GtBox {
    pub rect: Rect,
    pub identity: Option<IdentityId>,
}

/// A proposal with its assigned supervision.
#[derive(Debug, Clone, Copy)]
pub struct LabeledBox {
    pub rect: Rect,
    pub target: ProposalTarget,
    pub identity: Option<IdentityId>,
    pub matched_gt: Option<usize>,
}

/// Assign each box to its best-overlapping ground truth; boxes with IoU at
/// or above `fg_iou` become foreground and inherit the identity.
pub fn label_boxes(boxes: &[Rect], gts: &[GtBox], fg_iou: f64) -> Vec<LabeledBox> {
    boxes
        .iter()
        .map(|b| {
            let mut best: Option<(usize, f64)> = None;
            for (gi, gt) in gts.iter().enumerate() {
                let v = iou(b, &gt.rect);
                if best.map_or(true, |(_, bv)| v > bv) {
                    best = Some((gi, v));
                }
            }
            match best {
                Some((gi, v)) if v >= fg_iou => LabeledBox {
                    rect: *b,
                    target: ProposalTarget::foreground(encode_delta(b, &gts[gi].rect)),
                    identity: gts[gi].identity,
                    matched_gt: Some(gi),
                },
                _ => LabeledBox {
                    rect: *b,
                    target: ProposalTarget::background(),
                    identity: None,
                    matched_gt: None,
                },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(x1: f64, y1: f64, x2: f64, y2: f64) -> Rect {
        Rect::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn zero_delta_round_trip() {
        let anchor = rect(10.0, 20.0, 30.0, 50.0);
        let out = decode_delta(&anchor, &[0.0; 4], 100.0, 100.0);
        assert!(iou(&anchor, &out) > 0.999);
    }

    #[test]
    fn encode_decode_recovers_ground_truth() {
        let anchor = rect(10.0, 10.0, 26.0, 26.0);
        let gt = rect(12.0, 8.0, 30.0, 28.0);
        let delta = encode_delta(&anchor, &gt);
        let back = decode_delta(&anchor, &delta, 100.0, 100.0);
        assert!(iou(&back, &gt) > 0.999);
    }

    #[test]
    fn nms_suppresses_overlaps() {
        let boxes = vec![
            rect(0.0, 0.0, 10.0, 10.0),
            rect(1.0, 1.0, 11.0, 11.0), // heavy overlap with first
            rect(40.0, 40.0, 50.0, 50.0),
        ];
        let scores = vec![0.9, 0.8, 0.5];
        let kept = nms(&boxes, &scores, 0.5);
        assert_eq!(kept, vec![0, 2]);
    }

    #[test]
    fn label_boxes_assigns_identity_above_threshold() {
        use std::num::NonZeroU32;
        let gts = vec![GtBox { rect: rect(0.0, 0.0, 10.0, 10.0), identity: NonZeroU32::new(3) }];
        let labeled = label_boxes(
            &[rect(1.0, 1.0, 10.0, 10.0), rect(30.0, 30.0, 40.0, 40.0)],
            &gts,
            0.5,
        );
        assert!(labeled[0].target.is_foreground);
        assert_eq!(labeled[0].identity, NonZeroU32::new(3));
        assert!(!labeled[1].target.is_foreground);
        assert_eq!(labeled[1].identity, None);
    }

    #[test]
    fn anchor_grid_keeps_slot_alignment() {
        let anchors = generate_anchor_grid(2, 2, 8, &[8.0], &[1.0], 16.0, 16.0);
        assert_eq!(anchors.len(), 4);
        // first anchor sits at cell (0,0) center (4,4)
        let a = anchors[0].unwrap();
        assert_eq!((a.x1(), a.y1(), a.x2(), a.y2()), (0.0, 0.0, 8.0, 8.0));
        // a huge anchor on a tiny image clips but keeps its slot
        let grid = generate_anchor_grid(1, 1, 4, &[64.0], &[1.0], 4.0, 4.0);
        assert_eq!(grid.len(), 1);
        let clipped = grid[0].unwrap();
        assert_eq!((clipped.x1(), clipped.y1(), clipped.x2(), clipped.y2()), (0.0, 0.0, 4.0, 4.0));
    }
}

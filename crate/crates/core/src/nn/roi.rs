//! RoI alignment: bilinear-sampled pooling of box regions to fixed bins.

use ndarray::{Array3, ArrayD, ArrayView3, Ix3, IxDyn};

use super::tape::{Tape, Var};
use crate::datamodel::Rect;
use crate::par;

/// One bilinear sample with the usual border handling: points more than one
/// cell outside the map contribute zero, points in the border band clamp.
fn bilinear_weights(h: usize, w: usize, y: f64, x: f64) -> Option<([usize; 4], [usize; 4], [f64; 4])> {
    if y < -1.0 || y > h as f64 || x < -1.0 || x > w as f64 {
        return None;
    }
    let y = y.max(0.0);
    let x = x.max(0.0);
    let (y_low, x_low) = (y.floor() as usize, x.floor() as usize);
    let (y_low, y_high, ly) = if y_low >= h - 1 {
        (h - 1, h - 1, 0.0)
    } else {
        (y_low, y_low + 1, y - y_low as f64)
    };
    let (x_low, x_high, lx) = if x_low >= w - 1 {
        (w - 1, w - 1, 0.0)
    } else {
        (x_low, x_low + 1, x - x_low as f64)
    };
    let (hy, hx) = (1.0 - ly, 1.0 - lx);
    Some((
        [y_low, y_low, y_high, y_high],
        [x_low, x_high, x_low, x_high],
        [hy * hx, hy * lx, ly * hx, ly * lx],
    ))
}

struct SampleGrid {
    // per output bin: sample points (y, x) on the feature map
    points: Vec<Vec<(f64, f64)>>,
}

fn sample_grid(b: &Rect, out_h: usize, out_w: usize, scale: f64, sampling: usize) -> SampleGrid {
    let x1 = b.x1() * scale - 0.5;
    let y1 = b.y1() * scale - 0.5;
    let roi_w = b.width() * scale;
    let roi_h = b.height() * scale;
    let bin_w = roi_w / out_w as f64;
    let bin_h = roi_h / out_h as f64;
    let mut points = Vec::with_capacity(out_h * out_w);
    for i in 0..out_h {
        for j in 0..out_w {
            let mut bin = Vec::with_capacity(sampling * sampling);
            for sy in 0..sampling {
                let y = y1 + (i as f64 + (sy as f64 + 0.5) / sampling as f64) * bin_h;
                for sx in 0..sampling {
                    let x = x1 + (j as f64 + (sx as f64 + 0.5) / sampling as f64) * bin_w;
                    bin.push((y, x));
                }
            }
            points.push(bin);
        }
    }
    SampleGrid { points }
}

fn pool_one(fmap: &ArrayView3<f64>, grid: &SampleGrid, out_h: usize, out_w: usize) -> Array3<f64> {
    let (c, h, w) = fmap.dim();
    let mut out = Array3::zeros((c, out_h, out_w));
    for (bin, samples) in grid.points.iter().enumerate() {
        let (i, j) = (bin / out_w, bin % out_w);
        let inv = 1.0 / samples.len() as f64;
        for &(y, x) in samples {
            if let Some((ys, xs, ws)) = bilinear_weights(h, w, y, x) {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for k in 0..4 {
                        acc += ws[k] * fmap[[ch, ys[k], xs[k]]];
                    }
                    out[[ch, i, j]] += acc * inv;
                }
            }
        }
    }
    out
}

pub(crate) fn roi_align_value(
    fmap: &ArrayD<f64>,
    boxes: &[Rect],
    out_h: usize,
    out_w: usize,
    scale: f64,
    sampling: usize,
) -> ArrayD<f64> {
    let f3 = fmap.view().into_dimensionality::<Ix3>().expect("feature map CHW");
    let c = f3.dim().0;
    let pooled = par::map_collect(boxes, |b| {
        let grid = sample_grid(b, out_h, out_w, scale, sampling);
        pool_one(&f3, &grid, out_h, out_w)
    });
    let mut out = ArrayD::zeros(IxDyn(&[boxes.len(), c, out_h, out_w]));
    for (i, p) in pooled.into_iter().enumerate() {
        out.index_axis_mut(ndarray::Axis(0), i).assign(&p);
    }
    out
}

pub(crate) fn roi_align_backward(
    fmap_shape: &[usize],
    boxes: &[Rect],
    gy: &ArrayD<f64>,
    out_h: usize,
    out_w: usize,
    scale: f64,
    sampling: usize,
) -> ArrayD<f64> {
    let (c, h, w) = (fmap_shape[0], fmap_shape[1], fmap_shape[2]);
    let mut gf = Array3::zeros((c, h, w));
    for (n, b) in boxes.iter().enumerate() {
        let grid = sample_grid(b, out_h, out_w, scale, sampling);
        for (bin, samples) in grid.points.iter().enumerate() {
            let (i, j) = (bin / out_w, bin % out_w);
            let inv = 1.0 / samples.len() as f64;
            for &(y, x) in samples {
                if let Some((ys, xs, ws)) = bilinear_weights(h, w, y, x) {
                    for ch in 0..c {
                        let gv = gy[[n, ch, i, j]] * inv;
                        for k in 0..4 {
                            gf[[ch, ys[k], xs[k]]] += gv * ws[k];
                        }
                    }
                }
            }
        }
    }
    gf.into_dyn()
}

/// Pool `boxes` (image coordinates) from a CHW feature map into
/// `[n, C, out_h, out_w]` bins. `scale` maps image to map coordinates.
pub fn roi_align<'t>(
    fmap: Var<'t>,
    boxes: &[Rect],
    out_h: usize,
    out_w: usize,
    scale: f64,
    sampling: usize,
) -> Var<'t> {
    let tape: &Tape = fmap.tape;
    let value = roi_align_value(&tape.value_ref(fmap.id), boxes, out_h, out_w, scale, sampling);
    let pid = fmap.id;
    let needs = tape.needs_grad_of(pid);
    let boxes = boxes.to_vec();
    let id = tape.push(
        value,
        needs,
        Some(Box::new(move |tape, g, sink| {
            let shape = tape.value_ref(pid).shape().to_vec();
            sink(pid, roi_align_backward(&shape, &boxes, g, out_h, out_w, scale, sampling));
        })),
    );
    Var { tape, id }
}

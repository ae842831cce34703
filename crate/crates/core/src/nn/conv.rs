//! 2-D convolution via im2col + GEMM, batched over items.

use ndarray::{Array2, Array4, ArrayD, ArrayView3, Ix4};

use super::tape::{Tape, Var};
use crate::par;

fn out_extent(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

/// Unroll one CHW item into `[Ho*Wo, Ci*kh*kw]` patch rows.
fn im2col(x: &ArrayView3<f64>, k: usize, stride: usize, pad: usize) -> Array2<f64> {
    let (ci, h, w) = x.dim();
    let ho = out_extent(h, k, stride, pad);
    let wo = out_extent(w, k, stride, pad);
    let mut cols = Array2::zeros((ho * wo, ci * k * k));
    for oy in 0..ho {
        for ox in 0..wo {
            let row = oy * wo + ox;
            for c in 0..ci {
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        cols[[row, c * k * k + ky * k + kx]] = x[[c, iy as usize, ix as usize]];
                    }
                }
            }
        }
    }
    cols
}

/// Scatter `[Ho*Wo, Ci*kh*kw]` patch-row gradients back onto a CHW item.
fn col2im(
    gcols: &Array2<f64>,
    ci: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> ndarray::Array3<f64> {
    let ho = out_extent(h, k, stride, pad);
    let wo = out_extent(w, k, stride, pad);
    let mut gx = ndarray::Array3::zeros((ci, h, w));
    for oy in 0..ho {
        for ox in 0..wo {
            let row = oy * wo + ox;
            for c in 0..ci {
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        gx[[c, iy as usize, ix as usize]] += gcols[[row, c * k * k + ky * k + kx]];
                    }
                }
            }
        }
    }
    gx
}

pub(crate) fn conv2d_value(
    x: &ArrayD<f64>,
    w: &ArrayD<f64>,
    stride: usize,
    pad: usize,
) -> ArrayD<f64> {
    let x4 = x.view().into_dimensionality::<Ix4>().expect("conv input NCHW");
    let w4 = w.view().into_dimensionality::<Ix4>().expect("conv weight [Co,Ci,k,k]");
    let (n, ci, h, wdt) = x4.dim();
    let (co, wci, kh, kw) = w4.dim();
    assert_eq!(ci, wci, "conv channel mismatch");
    assert_eq!(kh, kw, "square kernels only");
    let k = kh;
    let ho = out_extent(h, k, stride, pad);
    let wo = out_extent(wdt, k, stride, pad);
    let wmat = w4.to_shape((co, ci * k * k)).expect("weight reshape").to_owned();

    let items: Vec<usize> = (0..n).collect();
    let outs = par::map_collect(&items, |&i| {
        let cols = im2col(&x4.index_axis(ndarray::Axis(0), i), k, stride, pad);
        // [HoWo, Co] -> [Co, Ho, Wo]
        let om = cols.dot(&wmat.t());
        om.t()
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order((co, ho, wo))
            .expect("conv output reshape")
    });

    let mut out = Array4::zeros((n, co, ho, wo));
    for (i, o) in outs.into_iter().enumerate() {
        out.index_axis_mut(ndarray::Axis(0), i).assign(&o);
    }
    out.into_dyn()
}

pub(crate) fn conv2d_backward(
    x: &ArrayD<f64>,
    w: &ArrayD<f64>,
    gy: &ArrayD<f64>,
    stride: usize,
    pad: usize,
) -> (ArrayD<f64>, ArrayD<f64>) {
    let x4 = x.view().into_dimensionality::<Ix4>().expect("conv input NCHW");
    let w4 = w.view().into_dimensionality::<Ix4>().expect("conv weight");
    let gy4 = gy.view().into_dimensionality::<Ix4>().expect("conv grad NCHW");
    let (n, ci, h, wdt) = x4.dim();
    let (co, _, k, _) = w4.dim();
    let wmat = w4.to_shape((co, ci * k * k)).expect("weight reshape").to_owned();

    let items: Vec<usize> = (0..n).collect();
    let parts = par::map_collect(&items, |&i| {
        let cols = im2col(&x4.index_axis(ndarray::Axis(0), i), k, stride, pad);
        let gy_i = gy4.index_axis(ndarray::Axis(0), i); // [Co, Ho, Wo]
        let (gco, gho, gwo) = gy_i.dim();
        let gy_mat = gy_i
            .to_shape((gco, gho * gwo))
            .expect("grad reshape")
            .t()
            .as_standard_layout()
            .to_owned(); // [HoWo, Co]
        let gw_i = gy_mat.t().dot(&cols); // [Co, CiKK]
        let gcols = gy_mat.dot(&wmat); // [HoWo, CiKK]
        let gx_i = col2im(&gcols, ci, h, wdt, k, stride, pad);
        (gx_i, gw_i)
    });

    let mut gx = Array4::zeros((n, ci, h, wdt));
    let mut gw = Array2::zeros((co, ci * k * k));
    for (i, (gx_i, gw_i)) in parts.into_iter().enumerate() {
        gx.index_axis_mut(ndarray::Axis(0), i).assign(&gx_i);
        gw += &gw_i;
    }
    let gw = gw.into_shape_with_order((co, ci, k, k)).expect("gw reshape");
    (gx.into_dyn(), gw.into_dyn())
}

/// `[N,Ci,H,W] * [Co,Ci,k,k] -> [N,Co,Ho,Wo]`.
pub fn conv2d<'t>(x: Var<'t>, w: Var<'t>, stride: usize, pad: usize) -> Var<'t> {
    let tape: &Tape = x.tape;
    assert!(std::ptr::eq(x.tape, w.tape));
    let value = conv2d_value(&tape.value_ref(x.id), &tape.value_ref(w.id), stride, pad);
    let (px, pw) = (x.id, w.id);
    let needs = tape.needs_grad_of(px) || tape.needs_grad_of(pw);
    let id = tape.push(
        value,
        needs,
        Some(Box::new(move |tape, g, sink| {
            let (gx, gw) = conv2d_backward(&tape.value_ref(px), &tape.value_ref(pw), g, stride, pad);
            sink(px, gx);
            sink(pw, gw);
        })),
    );
    Var { tape, id }
}

/// Output spatial extent of a stride-2, pad-1, 3x3 convolution (the head
/// halving used throughout the pipeline): 14 -> 7, 7 -> 4.
pub fn halved_extent(input: usize) -> usize {
    out_extent(input, 3, 2, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};

    #[test]
    fn identity_kernel_preserves_input() {
        // single 1x1 kernel with weight 1 and matching channels
        let x = ArrayD::from_shape_fn(IxDyn(&[2, 1, 4, 5]), |ix| {
            (ix[0] * 100 + ix[2] * 5 + ix[3]) as f64
        });
        let w = ArrayD::ones(IxDyn(&[1, 1, 1, 1]));
        let y = conv2d_value(&x, &w, 1, 0);
        assert_eq!(y, x);
    }

    #[test]
    fn known_3x3_sum_kernel() {
        // all-ones 3x3 kernel computes local sums with zero padding
        let x = ArrayD::ones(IxDyn(&[1, 1, 3, 3]));
        let w = ArrayD::ones(IxDyn(&[1, 1, 3, 3]));
        let y = conv2d_value(&x, &w, 1, 1);
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert_eq!(y[[0, 0, 1, 1]], 9.0);
        assert_eq!(y[[0, 0, 0, 0]], 4.0);
        assert_eq!(y[[0, 0, 0, 1]], 6.0);
    }

    #[test]
    fn empty_batch_is_supported() {
        let x = ArrayD::<f64>::zeros(IxDyn(&[0, 3, 8, 8]));
        let w = ArrayD::zeros(IxDyn(&[4, 3, 3, 3]));
        let y = conv2d_value(&x, &w, 2, 1);
        assert_eq!(y.shape(), &[0, 4, 4, 4]);
    }

    #[test]
    fn halving_arithmetic() {
        assert_eq!(halved_extent(14), 7);
        assert_eq!(halved_extent(7), 4);
    }
}

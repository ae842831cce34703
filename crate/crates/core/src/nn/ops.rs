//! Differentiable primitives on tape variables.
//!
//! Shape misuse is a programming error and panics; contract-level errors are
//! raised by the callers that own the spec surface.

use ndarray::{concatenate, ArrayD, Axis, Ix1, Ix2, IxDyn};

use super::tape::{Tape, Var};

fn same_tape<'t>(a: Var<'t>, b: Var<'t>) -> &'t Tape {
    assert!(std::ptr::eq(a.tape, b.tape), "variables from different tapes");
    a.tape
}

pub(crate) fn reshaped(a: &ArrayD<f64>, shape: &[usize]) -> ArrayD<f64> {
    a.as_standard_layout()
        .to_owned()
        .into_shape_with_order(IxDyn(shape))
        .expect("reshape size mismatch")
}

fn unary<'t, F>(a: Var<'t>, value: ArrayD<f64>, df: F) -> Var<'t>
where
    F: Fn(&ArrayD<f64>) -> ArrayD<f64> + 'static,
{
    let pid = a.id;
    let needs = a.tape.needs_grad_of(pid);
    let id = a.tape.push(
        value,
        needs,
        Some(Box::new(move |tape, g, sink| {
            let d = df(&tape.value_ref(pid));
            sink(pid, g * &d);
        })),
    );
    Var { tape: a.tape, id }
}

pub fn add<'t>(a: Var<'t>, b: Var<'t>) -> Var<'t> {
    let tape = same_tape(a, b);
    let value = &*tape.value_ref(a.id) + &*tape.value_ref(b.id);
    let (pa, pb) = (a.id, b.id);
    let needs = tape.needs_grad_of(pa) || tape.needs_grad_of(pb);
    let id = tape.push(
        value,
        needs,
        Some(Box::new(move |_, g, sink| {
            sink(pa, g.clone());
            sink(pb, g.clone());
        })),
    );
    Var { tape, id }
}

pub fn sub<'t>(a: Var<'t>, b: Var<'t>) -> Var<'t> {
    let tape = same_tape(a, b);
    let value = &*tape.value_ref(a.id) - &*tape.value_ref(b.id);
    let (pa, pb) = (a.id, b.id);
    let needs = tape.needs_grad_of(pa) || tape.needs_grad_of(pb);
    let id = tape.push(
        value,
        needs,
        Some(Box::new(move |_, g, sink| {
            sink(pa, g.clone());
            sink(pb, g.mapv(|x| -x));
        })),
    );
    Var { tape, id }
}

pub fn mul<'t>(a: Var<'t>, b: Var<'t>) -> Var<'t> {
    let tape = same_tape(a, b);
    let value = &*tape.value_ref(a.id) * &*tape.value_ref(b.id);
    let (pa, pb) = (a.id, b.id);
    let needs = tape.needs_grad_of(pa) || tape.needs_grad_of(pb);
    let id = tape.push(
        value,
        needs,
        Some(Box::new(move |tape, g, sink| {
            sink(pa, g * &*tape.value_ref(pb));
            sink(pb, g * &*tape.value_ref(pa));
        })),
    );
    Var { tape, id }
}

pub fn neg(a: Var<'_>) -> Var<'_> {
    scale(a, -1.0)
}

pub fn scale(a: Var<'_>, c: f64) -> Var<'_> {
    let value = a.tape.value_ref(a.id).mapv(|x| c * x);
    unary(a, value, move |x| ArrayD::from_elem(x.raw_dim(), c))
}

pub fn exp(a: Var<'_>) -> Var<'_> {
    let value = a.tape.value_ref(a.id).mapv(f64::exp);
    unary(a, value, |x| x.mapv(f64::exp))
}

pub fn ln(a: Var<'_>) -> Var<'_> {
    let value = a.tape.value_ref(a.id).mapv(f64::ln);
    unary(a, value, |x| x.mapv(|v| 1.0 / v))
}

pub fn relu(a: Var<'_>) -> Var<'_> {
    let value = a.tape.value_ref(a.id).mapv(|x| x.max(0.0));
    unary(a, value, |x| x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }))
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(a: Var<'_>) -> Var<'_> {
    let value = a.tape.value_ref(a.id).mapv(sigmoid_scalar);
    unary(a, value, |x| {
        x.mapv(|v| {
            let s = sigmoid_scalar(v);
            s * (1.0 - s)
        })
    })
}

pub fn tanh(a: Var<'_>) -> Var<'_> {
    let value = a.tape.value_ref(a.id).mapv(f64::tanh);
    unary(a, value, |x| {
        x.mapv(|v| {
            let t = v.tanh();
            1.0 - t * t
        })
    })
}

/// `ln(1 + e^x)`, numerically stable.
pub fn softplus(a: Var<'_>) -> Var<'_> {
    let value = a.tape.value_ref(a.id).mapv(|x| x.max(0.0) + (-x.abs()).exp().ln_1p());
    unary(a, value, |x| x.mapv(sigmoid_scalar))
}

pub fn abs(a: Var<'_>) -> Var<'_> {
    let value = a.tape.value_ref(a.id).mapv(f64::abs);
    unary(a, value, |x| x.mapv(|v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 }))
}

pub fn sum_all(a: Var<'_>) -> Var<'_> {
    let value = ArrayD::from_elem(IxDyn(&[]), a.tape.value_ref(a.id).sum());
    let pid = a.id;
    let needs = a.tape.needs_grad_of(pid);
    let id = a.tape.push(
        value,
        needs,
        Some(Box::new(move |tape, g, sink| {
            let gs = *g.iter().next().expect("scalar grad");
            let shape = tape.value_ref(pid).raw_dim();
            sink(pid, ArrayD::from_elem(shape, gs));
        })),
    );
    Var { tape: a.tape, id }
}

pub fn mean_all(a: Var<'_>) -> Var<'_> {
    let n = a.tape.value_ref(a.id).len().max(1);
    scale(sum_all(a), 1.0 / n as f64)
}

pub fn reshape<'t>(a: Var<'t>, shape: &[usize]) -> Var<'t> {
    let value = reshaped(&a.tape.value_ref(a.id), shape);
    let pid = a.id;
    let needs = a.tape.needs_grad_of(pid);
    let id = a.tape.push(
        value,
        needs,
        Some(Box::new(move |tape, g, sink| {
            let shape: Vec<usize> = tape.value_ref(pid).shape().to_vec();
            sink(pid, reshaped(g, &shape));
        })),
    );
    Var { tape: a.tape, id }
}

pub fn permute<'t>(a: Var<'t>, axes: &[usize]) -> Var<'t> {
    let value = a
        .tape
        .value_ref(a.id)
        .view()
        .permuted_axes(IxDyn(axes))
        .as_standard_layout()
        .to_owned();
    let mut inverse = vec![0usize; axes.len()];
    for (i, &ax) in axes.iter().enumerate() {
        inverse[ax] = i;
    }
    let pid = a.id;
    let needs = a.tape.needs_grad_of(pid);
    let id = a.tape.push(
        value,
        needs,
        Some(Box::new(move |_, g, sink| {
            sink(pid, g.view().permuted_axes(IxDyn(&inverse)).as_standard_layout().to_owned());
        })),
    );
    Var { tape: a.tape, id }
}

/// `[N, K] x [K, M] -> [N, M]`.
pub fn matmul<'t>(a: Var<'t>, b: Var<'t>) -> Var<'t> {
    let tape = same_tape(a, b);
    let value = {
        let av = tape.value_ref(a.id);
        let bv = tape.value_ref(b.id);
        let a2 = av.view().into_dimensionality::<Ix2>().expect("matmul lhs 2-d");
        let b2 = bv.view().into_dimensionality::<Ix2>().expect("matmul rhs 2-d");
        a2.dot(&b2).into_dyn()
    };
    let (pa, pb) = (a.id, b.id);
    let needs = tape.needs_grad_of(pa) || tape.needs_grad_of(pb);
    let id = tape.push(
        value,
        needs,
        Some(Box::new(move |tape, g, sink| {
            let g2 = g.view().into_dimensionality::<Ix2>().expect("grad 2-d");
            {
                let bv = tape.value_ref(pb);
                let b2 = bv.view().into_dimensionality::<Ix2>().expect("rhs 2-d");
                sink(pa, g2.dot(&b2.t()).into_dyn());
            }
            {
                let av = tape.value_ref(pa);
                let a2 = av.view().into_dimensionality::<Ix2>().expect("lhs 2-d");
                sink(pb, a2.t().dot(&g2).into_dyn());
            }
        })),
    );
    Var { tape, id }
}

/// `[N, K] x [M, K]^T -> [N, M]`.
pub fn matmul_nt<'t>(a: Var<'t>, b: Var<'t>) -> Var<'t> {
    let tape = same_tape(a, b);
    let value = {
        let av = tape.value_ref(a.id);
        let bv = tape.value_ref(b.id);
        let a2 = av.view().into_dimensionality::<Ix2>().expect("matmul lhs 2-d");
        let b2 = bv.view().into_dimensionality::<Ix2>().expect("matmul rhs 2-d");
        a2.dot(&b2.t()).into_dyn()
    };
    let (pa, pb) = (a.id, b.id);
    let needs = tape.needs_grad_of(pa) || tape.needs_grad_of(pb);
    let id = tape.push(
        value,
        needs,
        Some(Box::new(move |tape, g, sink| {
            let g2 = g.view().into_dimensionality::<Ix2>().expect("grad 2-d");
            {
                let bv = tape.value_ref(pb);
                let b2 = bv.view().into_dimensionality::<Ix2>().expect("rhs 2-d");
                sink(pa, g2.dot(&b2).into_dyn());
            }
            {
                let av = tape.value_ref(pa);
                let a2 = av.view().into_dimensionality::<Ix2>().expect("lhs 2-d");
                sink(pb, g2.t().dot(&a2).into_dyn());
            }
        })),
    );
    Var { tape, id }
}

/// `[N, M] + [M]` broadcast over rows.
pub fn add_row_bias<'t>(x: Var<'t>, b: Var<'t>) -> Var<'t> {
    let tape = same_tape(x, b);
    let value = {
        let xv = tape.value_ref(x.id);
        let bv = tape.value_ref(b.id);
        let x2 = xv.view().into_dimensionality::<Ix2>().expect("bias input 2-d");
        let b1 = bv.view().into_dimensionality::<Ix1>().expect("bias 1-d");
        (&x2 + &b1).into_dyn()
    };
    let (px, pb) = (x.id, b.id);
    let needs = tape.needs_grad_of(px) || tape.needs_grad_of(pb);
    let id = tape.push(
        value,
        needs,
        Some(Box::new(move |_, g, sink| {
            sink(px, g.clone());
            let g2 = g.view().into_dimensionality::<Ix2>().expect("grad 2-d");
            sink(pb, g2.sum_axis(Axis(0)).into_dyn());
        })),
    );
    Var { tape, id }
}

/// `[N, C, H, W] + [C]` broadcast per channel.
pub fn add_channel_bias<'t>(x: Var<'t>, b: Var<'t>) -> Var<'t> {
    let tape = same_tape(x, b);
    let value = {
        let xv = tape.value_ref(x.id);
        let bv = tape.value_ref(b.id);
        let mut out = xv.clone();
        let b1 = bv.view().into_dimensionality::<Ix1>().expect("bias 1-d");
        for (c, mut lane) in out.axis_iter_mut(Axis(1)).enumerate() {
            lane += b1[c];
        }
        out
    };
    let (px, pb) = (x.id, b.id);
    let needs = tape.needs_grad_of(px) || tape.needs_grad_of(pb);
    let id = tape.push(
        value,
        needs,
        Some(Box::new(move |_, g, sink| {
            sink(px, g.clone());
            let channels = g.shape()[1];
            let mut db = ArrayD::zeros(IxDyn(&[channels]));
            for (c, lane) in g.axis_iter(Axis(1)).enumerate() {
                db[c] = lane.sum();
            }
            sink(pb, db);
        })),
    );
    Var { tape, id }
}

/// `[N, C, H, W] -> [N, C]` spatial mean.
pub fn global_avg_pool(x: Var<'_>) -> Var<'_> {
    let value = {
        let xv = x.tape.value_ref(x.id);
        let shape = xv.shape().to_vec();
        assert_eq!(shape.len(), 4, "global_avg_pool expects NCHW");
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let mut out = ArrayD::zeros(IxDyn(&[n, c]));
        for i in 0..n {
            for j in 0..c {
                let mut acc = 0.0;
                for y in 0..h {
                    for xx in 0..w {
                        acc += xv[[i, j, y, xx]];
                    }
                }
                out[[i, j]] = acc / (h * w) as f64;
            }
        }
        out
    };
    let pid = x.id;
    let needs = x.tape.needs_grad_of(pid);
    let id = x.tape.push(
        value,
        needs,
        Some(Box::new(move |tape, g, sink| {
            let shape = tape.value_ref(pid).shape().to_vec();
            let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
            let inv = 1.0 / (h * w) as f64;
            let mut gx = ArrayD::zeros(IxDyn(&shape));
            for i in 0..n {
                for j in 0..c {
                    let gv = g[[i, j]] * inv;
                    for y in 0..h {
                        for xx in 0..w {
                            gx[[i, j, y, xx]] = gv;
                        }
                    }
                }
            }
            sink(pid, gx);
        })),
    );
    Var { tape: x.tape, id }
}

/// Gather rows along axis 0 (duplicates allowed).
pub fn select_rows<'t>(x: Var<'t>, indices: &[usize]) -> Var<'t> {
    let idx = indices.to_vec();
    let value = {
        let xv = x.tape.value_ref(x.id);
        let views: Vec<_> = idx.iter().map(|&i| xv.index_axis(Axis(0), i).insert_axis(Axis(0))).collect();
        if views.is_empty() {
            let mut shape = xv.shape().to_vec();
            shape[0] = 0;
            ArrayD::zeros(IxDyn(&shape))
        } else {
            concatenate(Axis(0), &views).expect("select_rows concatenate")
        }
    };
    let pid = x.id;
    let needs = x.tape.needs_grad_of(pid);
    let id = x.tape.push(
        value,
        needs,
        Some(Box::new(move |tape, g, sink| {
            let shape = tape.value_ref(pid).shape().to_vec();
            let mut gx = ArrayD::zeros(IxDyn(&shape));
            for (j, &i) in idx.iter().enumerate() {
                let mut dst = gx.index_axis_mut(Axis(0), i);
                dst += &g.index_axis(Axis(0), j);
            }
            sink(pid, gx);
        })),
    );
    Var { tape: x.tape, id }
}

/// Concatenate along axis 0.
pub fn concat_rows<'t>(parts: &[Var<'t>]) -> Var<'t> {
    assert!(!parts.is_empty(), "concat_rows needs at least one part");
    let tape = parts[0].tape;
    let mut lens = Vec::with_capacity(parts.len());
    let value = {
        let refs: Vec<_> = parts.iter().map(|p| tape.value_ref(p.id)).collect();
        for r in &refs {
            lens.push(r.shape()[0]);
        }
        let views: Vec<_> = refs.iter().map(|r| r.view()).collect();
        concatenate(Axis(0), &views).expect("concat_rows shape mismatch")
    };
    let pids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let needs = pids.iter().any(|&p| tape.needs_grad_of(p));
    let id = tape.push(
        value,
        needs,
        Some(Box::new(move |_, g, sink| {
            let mut start = 0;
            for (&pid, &len) in pids.iter().zip(&lens) {
                let piece = g.slice_axis(Axis(0), ndarray::Slice::from(start..start + len));
                sink(pid, piece.to_owned());
                start += len;
            }
        })),
    );
    Var { tape, id }
}

/// Normalize each row to unit L2 norm (rows with norm below `eps` are
/// divided by `eps` instead).
pub fn l2norm_rows(x: Var<'_>, eps: f64) -> Var<'_> {
    let value = {
        let xv = x.tape.value_ref(x.id);
        let x2 = xv.view().into_dimensionality::<Ix2>().expect("l2norm input 2-d");
        let mut out = x2.to_owned();
        for mut row in out.rows_mut() {
            let r = row.dot(&row).sqrt().max(eps);
            row.mapv_inplace(|v| v / r);
        }
        out.into_dyn()
    };
    let pid = x.id;
    let needs = x.tape.needs_grad_of(pid);
    let id = x.tape.push(
        value,
        needs,
        Some(Box::new(move |tape, g, sink| {
            let xv = tape.value_ref(pid);
            let x2 = xv.view().into_dimensionality::<Ix2>().expect("l2norm input 2-d");
            let g2 = g.view().into_dimensionality::<Ix2>().expect("grad 2-d");
            let mut gx = x2.to_owned();
            for ((mut grow, xrow), gout) in gx.rows_mut().into_iter().zip(x2.rows()).zip(g2.rows())
            {
                let norm = xrow.dot(&xrow).sqrt();
                if norm > eps {
                    let y = xrow.mapv(|v| v / norm);
                    let proj = gout.dot(&y);
                    for (d, gv) in grow.iter_mut().enumerate() {
                        *gv = (gout[d] - y[d] * proj) / norm;
                    }
                } else {
                    for (d, gv) in grow.iter_mut().enumerate() {
                        *gv = gout[d] / eps;
                    }
                }
            }
            sink(pid, gx.into_dyn());
        })),
    );
    Var { tape: x.tape, id }
}

/// Row-wise L2 norms: `[N, D] -> [N]`.
pub fn row_norms(x: Var<'_>) -> Var<'_> {
    let value = {
        let xv = x.tape.value_ref(x.id);
        let x2 = xv.view().into_dimensionality::<Ix2>().expect("row_norms input 2-d");
        let mut out = ArrayD::zeros(IxDyn(&[x2.nrows()]));
        for (i, row) in x2.rows().into_iter().enumerate() {
            out[i] = row.dot(&row).sqrt();
        }
        out
    };
    let pid = x.id;
    let needs = x.tape.needs_grad_of(pid);
    let id = x.tape.push(
        value,
        needs,
        Some(Box::new(move |tape, g, sink| {
            let xv = tape.value_ref(pid);
            let x2 = xv.view().into_dimensionality::<Ix2>().expect("row_norms input 2-d");
            let mut gx = x2.to_owned();
            for (i, mut row) in gx.rows_mut().into_iter().enumerate() {
                let norm = x2.row(i).dot(&x2.row(i)).sqrt().max(1e-12);
                let gv = g[i] / norm;
                row.mapv_inplace(|v| v * gv);
            }
            sink(pid, gx.into_dyn());
        })),
    );
    Var { tape: x.tape, id }
}

/// Pick one column per row: `[N, C] -> [N]`.
pub fn pick_per_row<'t>(x: Var<'t>, cols: &[usize]) -> Var<'t> {
    let idx = cols.to_vec();
    let value = {
        let xv = x.tape.value_ref(x.id);
        let x2 = xv.view().into_dimensionality::<Ix2>().expect("pick input 2-d");
        assert_eq!(x2.nrows(), idx.len(), "one column index per row");
        let mut out = ArrayD::zeros(IxDyn(&[idx.len()]));
        for (i, &c) in idx.iter().enumerate() {
            out[i] = x2[[i, c]];
        }
        out
    };
    let pid = x.id;
    let needs = x.tape.needs_grad_of(pid);
    let id = x.tape.push(
        value,
        needs,
        Some(Box::new(move |tape, g, sink| {
            let shape = tape.value_ref(pid).shape().to_vec();
            let mut gx = ArrayD::zeros(IxDyn(&shape));
            for (i, &c) in idx.iter().enumerate() {
                gx[[i, c]] = g[i];
            }
            sink(pid, gx);
        })),
    );
    Var { tape: x.tape, id }
}

/// Row-wise `x - logsumexp(x)`, numerically stable.
pub fn log_softmax_rows(x: Var<'_>) -> Var<'_> {
    let value = {
        let xv = x.tape.value_ref(x.id);
        let x2 = xv.view().into_dimensionality::<Ix2>().expect("log_softmax input 2-d");
        let mut out = x2.to_owned();
        for mut row in out.rows_mut() {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            row.mapv_inplace(|v| v - lse);
        }
        out.into_dyn()
    };
    let pid = x.id;
    let needs = x.tape.needs_grad_of(pid);
    let out_id = x.tape.push(
        value,
        needs,
        Some(Box::new(move |tape, g, sink| {
            // softmax recomputed from the input
            let xv = tape.value_ref(pid);
            let x2 = xv.view().into_dimensionality::<Ix2>().expect("log_softmax input 2-d");
            let g2 = g.view().into_dimensionality::<Ix2>().expect("grad 2-d");
            let mut gx = x2.to_owned();
            for ((mut grow, xrow), gout) in gx.rows_mut().into_iter().zip(x2.rows()).zip(g2.rows())
            {
                let m = xrow.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sm: Vec<f64> = xrow.iter().map(|&v| (v - m).exp()).collect();
                let z: f64 = sm.iter().sum();
                for s in &mut sm {
                    *s /= z;
                }
                let gsum: f64 = gout.sum();
                for (d, gv) in grow.iter_mut().enumerate() {
                    *gv = gout[d] - sm[d] * gsum;
                }
            }
            sink(pid, gx.into_dyn());
        })),
    );
    Var { tape: x.tape, id: out_id }
}

/// Elementwise smooth-L1 (Huber) of `a - b`:
/// `0.5 e^2 / beta` for `|e| < beta`, else `|e| - 0.5 beta`.
pub fn smooth_l1<'t>(a: Var<'t>, b: Var<'t>, beta: f64) -> Var<'t> {
    assert!(beta > 0.0);
    let tape = same_tape(a, b);
    let value = {
        let av = tape.value_ref(a.id);
        let bv = tape.value_ref(b.id);
        let mut out = &*av - &*bv;
        out.mapv_inplace(|e| {
            if e.abs() < beta {
                0.5 * e * e / beta
            } else {
                e.abs() - 0.5 * beta
            }
        });
        out
    };
    let (pa, pb) = (a.id, b.id);
    let needs = tape.needs_grad_of(pa) || tape.needs_grad_of(pb);
    let id = tape.push(
        value,
        needs,
        Some(Box::new(move |tape, g, sink| {
            let av = tape.value_ref(pa);
            let bv = tape.value_ref(pb);
            let mut d = &*av - &*bv;
            d.mapv_inplace(|e| if e.abs() < beta { e / beta } else { e.signum() });
            let gd = g * &d;
            sink(pa, gd.clone());
            sink(pb, gd.mapv(|x| -x));
        })),
    );
    Var { tape, id }
}

/// Elementwise binary cross-entropy terms against fixed 0/1 targets:
/// `-ln(p)` where the target is 1 and `-ln(1-p)` where it is 0.
///
/// Terms with a zero coefficient are skipped, so `p` exactly equal to its
/// target yields exactly zero.
pub fn bce_with_targets<'t>(p: Var<'t>, targets: &ArrayD<f64>) -> Var<'t> {
    let t = targets.clone();
    assert_eq!(p.shape(), t.shape().to_vec(), "bce target shape mismatch");
    let value = {
        let pv = p.tape.value_ref(p.id);
        let mut out = pv.clone();
        for (o, (&pi, &ti)) in out.iter_mut().zip(pv.iter().zip(t.iter())) {
            *o = if ti > 0.5 { -pi.ln() } else { -(1.0 - pi).ln() };
        }
        out
    };
    let pid = p.id;
    let needs = p.tape.needs_grad_of(pid);
    let id = p.tape.push(
        value,
        needs,
        Some(Box::new(move |tape, g, sink| {
            let pv = tape.value_ref(pid);
            let mut gx = pv.clone();
            for (o, (&pi, &ti)) in gx.iter_mut().zip(pv.iter().zip(t.iter())) {
                *o = if ti > 0.5 { -1.0 / pi } else { 1.0 / (1.0 - pi) };
            }
            sink(pid, g * &gx);
        })),
    );
    Var { tape: p.tape, id }
}

/// Multiply every element by a 0-dim variable.
pub fn mul_scalar_var<'t>(x: Var<'t>, s: Var<'t>) -> Var<'t> {
    let tape = same_tape(x, s);
    let sv = *tape.value_ref(s.id).iter().next().expect("0-dim scalar");
    let value = tape.value_ref(x.id).mapv(|v| v * sv);
    let (px, ps) = (x.id, s.id);
    let needs = tape.needs_grad_of(px) || tape.needs_grad_of(ps);
    let id = tape.push(
        value,
        needs,
        Some(Box::new(move |tape, g, sink| {
            let sv = *tape.value_ref(ps).iter().next().expect("0-dim scalar");
            sink(px, g.mapv(|v| v * sv));
            let dot = (g * &*tape.value_ref(px)).sum();
            sink(ps, ArrayD::from_elem(IxDyn(&[]), dot));
        })),
    );
    Var { tape, id }
}

/// Add a 0-dim variable to every element.
pub fn add_scalar_var<'t>(x: Var<'t>, s: Var<'t>) -> Var<'t> {
    let tape = same_tape(x, s);
    let sv = *tape.value_ref(s.id).iter().next().expect("0-dim scalar");
    let value = tape.value_ref(x.id).mapv(|v| v + sv);
    let (px, ps) = (x.id, s.id);
    let needs = tape.needs_grad_of(px) || tape.needs_grad_of(ps);
    let id = tape.push(
        value,
        needs,
        Some(Box::new(move |_, g, sink| {
            sink(px, g.clone());
            sink(ps, ArrayD::from_elem(IxDyn(&[]), g.sum()));
        })),
    );
    Var { tape, id }
}

/// Gather columns of a 2-d matrix (composed from permute + select_rows).
pub fn select_cols<'t>(x: Var<'t>, cols: &[usize]) -> Var<'t> {
    permute(select_rows(permute(x, &[1, 0]), cols), &[1, 0])
}

/// Sum a list of 0-dim scalars.
pub fn sum_scalars<'t>(terms: &[Var<'t>]) -> Var<'t> {
    assert!(!terms.is_empty());
    let mut acc = terms[0];
    for t in &terms[1..] {
        acc = add(acc, *t);
    }
    acc
}

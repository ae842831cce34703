//! Central finite-difference gradient verification.

use ndarray::ArrayD;

use super::tape::{Tape, Var};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_abs_diff: f64,
    pub max_rel_err: f64,
}

/// Compare analytic gradients of `build` (a scalar loss over leaf inputs)
/// against central finite differences, element by element.
///
/// Fails when `|analytic - fd| > atol + rtol * max(|analytic|, |fd|)` for
/// any element.
pub fn check_gradients<F>(
    inputs: &[ArrayD<f64>],
    build: F,
    eps: f64,
    rtol: f64,
    atol: f64,
) -> Result<GradCheckReport, String>
where
    F: for<'a> Fn(&'a Tape, &'a [Var<'a>]) -> Var<'a>,
{
    let analytic: Vec<ArrayD<f64>> = {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|a| tape.leaf(a.clone(), true)).collect();
        let loss = build(&tape, &vars);
        let grads = tape.backward(loss);
        vars.iter().map(|v| grads.grad(*v).as_standard_layout().to_owned()).collect()
    };

    let eval = |xs: &[ArrayD<f64>]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|a| tape.leaf(a.clone(), false)).collect();
        build(&tape, &vars).scalar()
    };

    let mut xs: Vec<ArrayD<f64>> = inputs.to_vec();
    let mut report = GradCheckReport { checked: 0, max_abs_diff: 0.0, max_rel_err: 0.0 };
    for i in 0..xs.len() {
        let len = xs[i].len();
        for j in 0..len {
            let orig = xs[i].as_slice_memory_order().expect("contiguous input")[j];
            let h = eps * orig.abs().max(1.0);
            xs[i].as_slice_memory_order_mut().unwrap()[j] = orig + h;
            let f_plus = eval(&xs);
            xs[i].as_slice_memory_order_mut().unwrap()[j] = orig - h;
            let f_minus = eval(&xs);
            xs[i].as_slice_memory_order_mut().unwrap()[j] = orig;

            let fd = (f_plus - f_minus) / (2.0 * h);
            let an = analytic[i].as_slice_memory_order().expect("contiguous grad")[j];
            let diff = (an - fd).abs();
            let rel = diff / an.abs().max(fd.abs()).max(1e-12);
            report.checked += 1;
            report.max_abs_diff = report.max_abs_diff.max(diff);
            if diff > atol + rtol * an.abs().max(fd.abs()) {
                return Err(format!(
                    "gradient mismatch at input {i} element {j}: analytic {an}, finite-diff {fd} (|diff| {diff:.3e})"
                ));
            }
            if diff > atol {
                report.max_rel_err = report.max_rel_err.max(rel);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::Rect;
    use crate::nn::{conv, ops, roi};
    use ndarray::IxDyn;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn rand_array(rng: &mut ChaCha20Rng, shape: &[usize]) -> ArrayD<f64> {
        ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn elementwise_chain() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let x = rand_array(&mut rng, &[3, 4]);
        check_gradients(
            &[x],
            |_t, vars| {
                let y = ops::sigmoid(ops::mul(vars[0], vars[0]));
                let z = ops::softplus(ops::sub(y, ops::relu(vars[0])));
                ops::sum_all(ops::abs(z))
            },
            1e-6,
            1e-6,
            1e-9,
        )
        .unwrap();
    }

    #[test]
    fn matmul_and_bias() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let a = rand_array(&mut rng, &[3, 5]);
        let b = rand_array(&mut rng, &[5, 4]);
        let bias = rand_array(&mut rng, &[4]);
        check_gradients(
            &[a, b, bias],
            |_t, v| ops::sum_all(ops::sigmoid(ops::add_row_bias(ops::matmul(v[0], v[1]), v[2]))),
            1e-6,
            1e-6,
            1e-9,
        )
        .unwrap();
    }

    #[test]
    fn matmul_nt_and_logsoftmax() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let a = rand_array(&mut rng, &[4, 6]);
        let b = rand_array(&mut rng, &[3, 6]);
        check_gradients(
            &[a, b],
            |_t, v| {
                let logits = ops::matmul_nt(v[0], v[1]);
                ops::neg(ops::sum_all(ops::pick_per_row(
                    ops::log_softmax_rows(logits),
                    &[0, 2, 1, 0],
                )))
            },
            1e-6,
            1e-6,
            1e-9,
        )
        .unwrap();
    }

    #[test]
    fn normalization_ops() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let x = rand_array(&mut rng, &[5, 7]);
        check_gradients(
            &[x],
            |_t, v| {
                let y = ops::l2norm_rows(v[0], 1e-12);
                let n = ops::row_norms(v[0]);
                ops::add(ops::sum_all(ops::mul(y, y)), ops::sum_all(ops::sigmoid(n)))
            },
            1e-6,
            1e-6,
            1e-9,
        )
        .unwrap();
    }

    #[test]
    fn conv_gradients() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let x = rand_array(&mut rng, &[2, 2, 5, 6]);
        let w = rand_array(&mut rng, &[3, 2, 3, 3]);
        check_gradients(
            &[x, w],
            |_t, v| ops::sum_all(ops::relu(conv::conv2d(v[0], v[1], 2, 1))),
            1e-6,
            1e-6,
            1e-9,
        )
        .unwrap();
    }

    #[test]
    fn roi_align_gradients() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let fmap = rand_array(&mut rng, &[2, 6, 6]);
        let boxes =
            vec![Rect::new(2.0, 2.0, 16.0, 12.0).unwrap(), Rect::new(0.0, 0.0, 24.0, 24.0).unwrap()];
        check_gradients(
            &[fmap],
            |_t, v| ops::sum_all(ops::mul(
                roi::roi_align(v[0], &boxes, 3, 3, 0.25, 2),
                roi::roi_align(v[0], &boxes, 3, 3, 0.25, 2),
            )),
            1e-6,
            1e-6,
            1e-9,
        )
        .unwrap();
    }

    #[test]
    fn structural_ops() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let x = rand_array(&mut rng, &[4, 3]);
        let y = rand_array(&mut rng, &[2, 3]);
        check_gradients(
            &[x, y],
            |_t, v| {
                let joined = ops::concat_rows(&[v[0], v[1]]);
                let picked = ops::select_rows(joined, &[0, 5, 2, 0]);
                let reshaped = ops::reshape(picked, &[2, 6]);
                let swapped = ops::permute(reshaped, &[1, 0]);
                ops::sum_all(ops::mul(swapped, swapped))
            },
            1e-6,
            1e-6,
            1e-9,
        )
        .unwrap();
    }

    #[test]
    fn pooling_and_scalar_ops() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let x = rand_array(&mut rng, &[2, 3, 4, 4]);
        let a = rand_array(&mut rng, &[]);
        let b = rand_array(&mut rng, &[]);
        check_gradients(
            &[x, a, b],
            |_t, v| {
                let pooled = ops::global_avg_pool(v[0]);
                let scaled = ops::add_scalar_var(ops::mul_scalar_var(pooled, v[1]), v[2]);
                ops::sum_all(ops::smooth_l1(scaled, ops::relu(pooled), 1.0))
            },
            1e-6,
            1e-6,
            1e-9,
        )
        .unwrap();
    }
}

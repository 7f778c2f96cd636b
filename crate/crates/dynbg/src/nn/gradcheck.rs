//! Central-finite-difference gradient checking against the analytic backward
//! passes. Instantiate models at `f64` here: at `f32`, finite differences
//! drown in rounding error long before the tolerances of interest.

use super::{c, Parameterized, Scalar};

/// Outcome of a full gradient sweep.
#[derive(Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_param: String,
}

fn add_to_param<F: Scalar, M: Parameterized<F>>(
    model: &mut M,
    tensor_idx: usize,
    elem_idx: usize,
    delta: f64,
) {
    let mut i = 0usize;
    model.visit_params(&mut |_, mut t| {
        if i == tensor_idx {
            let s = t.w.as_slice_mut().expect("parameters are standard layout");
            s[elem_idx] = s[elem_idx] + c::<F>(delta);
        }
        i += 1;
    });
}

/// Compares the gradients currently accumulated in the model against central
/// finite differences of `loss_fn`, perturbing every `stride`-th element of
/// each parameter tensor (stride 1 = every parameter).
///
/// Call sequence: run forward + backward once to populate gradients, then
/// call this with a `loss_fn` that performs a fresh forward pass and returns
/// the same scalar loss.
///
/// Relative error per element: `|num - ana| / max(|num| + |ana|, 1e-8)`.
pub fn check_gradients<F, M, L>(model: &mut M, mut loss_fn: L, h: f64, stride: usize) -> GradCheckReport
where
    F: Scalar,
    M: Parameterized<F>,
    L: FnMut(&mut M) -> f64,
{
    assert!(stride >= 1);
    // Snapshot analytic gradients and tensor names.
    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    model.visit_params(&mut |name, t| {
        analytic.push((
            name.to_string(),
            t.g.iter().map(|g| g.to_f64().unwrap()).collect(),
        ));
    });

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst_param: String::new(),
    };

    for (tensor_idx, (name, grads)) in analytic.iter().enumerate() {
        let mut elem = tensor_idx % stride;
        while elem < grads.len() {
            add_to_param(model, tensor_idx, elem, h);
            let l_plus = loss_fn(model);
            add_to_param(model, tensor_idx, elem, -2.0 * h);
            let l_minus = loss_fn(model);
            add_to_param(model, tensor_idx, elem, h);

            let numeric = (l_plus - l_minus) / (2.0 * h);
            let ana = grads[elem];
            let rel = (numeric - ana).abs() / (numeric.abs() + ana.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = format!(
                    "{name}[{elem}]: numeric {numeric:.9e} vs analytic {ana:.9e}"
                );
            }
            elem += stride;
        }
    }
    report
}

//! Central finite-difference gradient checking.

use super::params::{Grads, ParamStore};

/// Relative error floor: gradients smaller than this in magnitude are
/// compared in absolute terms. Central differences at ε = 1e-5 carry
/// roughly 1e-11 of rounding noise on O(1) losses, so entries much below
/// 1e-6 cannot be resolved to 1e-4 relative accuracy.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compare `analytic` against central differences of `loss` for every
/// parameter scalar, or a deterministic strided subset when a tensor has
/// more than `max_per_tensor` entries.
pub fn check<F>(
    store: &mut ParamStore,
    analytic: &Grads,
    eps: f64,
    max_per_tensor: usize,
    mut loss: F,
) -> GradCheckReport
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.value(id).len();
        let stride = n.div_ceil(max_per_tensor.max(1)).max(1);
        for i in (0..n).step_by(stride) {
            let orig = store.value(id)[i];
            store.value_mut(id)[i] = orig + eps;
            let plus = loss(store);
            store.value_mut(id)[i] = orig - eps;
            let minus = loss(store);
            store.value_mut(id)[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic.get(id)[i], numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = store.param(id).name.clone();
                report.worst_index = i;
            }
        }
    }
    report
}

/// Finite-difference gradient of `f` w.r.t. every entry of `x`.
pub fn numeric_input_grad<F>(x: &mut [f64], eps: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + eps;
            let plus = f(x);
            x[i] = orig - eps;
            let minus = f(x);
            x[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

//! Central finite-difference gradient checking against the tape.
//!
//! Public so that integration tests of higher-level modules can reuse it.

use crate::{Graph, ParamId, ParamStore, Result, Var};

/// Worst discrepancy found by [`check_store`].
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<(String, usize, f64, f64)>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// Relative error with an absolute floor so that zero gradients compare sanely.
pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the analytic gradient of `loss_fn` with central differences for
/// every coordinate of every unfrozen parameter in `store`.
///
/// `loss_fn` must build a scalar on the given graph using only `store`.
/// At most `max_per_param` coordinates are probed per parameter (evenly
/// strided) to bound the cost on large models. The relative-error floor is
/// `1e-5 * max(1, |loss|)`: rounding noise in the difference quotient grows
/// with the loss magnitude.
pub fn check_store<F>(
    store: &mut ParamStore,
    step: f64,
    max_per_param: usize,
    mut loss_fn: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    store.zero_grad();
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, store)?;
    g.backward(loss, store)?;
    let floor = 1e-5 * g.value(loss).data()[0].abs().max(1.0);
    let analytic: Vec<(ParamId, Vec<f64>)> = store
        .iter()
        .filter(|(_, p)| !p.frozen)
        .map(|(id, p)| (id, p.grad.data().to_vec()))
        .collect();

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let l = loss_fn(&mut g, store)?;
        Ok(g.value(l).data()[0])
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for (id, grad) in analytic {
        let len = grad.len();
        let stride = (len / max_per_param.max(1)).max(1);
        for idx in (0..len).step_by(stride) {
            let orig = store.get(id).value.data()[idx];
            store.get_mut(id).value.data_mut()[idx] = orig + step;
            let plus = eval(store)?;
            store.get_mut(id).value.data_mut()[idx] = orig - step;
            let minus = eval(store)?;
            store.get_mut(id).value.data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = rel_error(grad[idx], numeric, floor);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((store.get(id).name.clone(), idx, grad[idx], numeric));
            }
        }
    }
    store.zero_grad();
    Ok(report)
}

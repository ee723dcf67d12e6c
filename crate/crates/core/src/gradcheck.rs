//! Central finite differences against the tape's analytic gradients.

use std::collections::BTreeMap;

use crate::nn::{Binding, ParamStore};
use crate::tape::{Graph, Matrix, Var};

/// Worst mismatch found by [`check_params`].
#[derive(Clone, Debug)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares analytic and numeric gradients of the scalar built by `loss` for
/// every entry of the parameters named in `names` (all parameters when empty).
pub fn check_params(
    store: &ParamStore,
    names: &[&str],
    step: f64,
    floor: f64,
    loss: impl Fn(&Binding<'_>) -> Var,
) -> GradReport {
    let eval = |s: &ParamStore| {
        let g = Graph::new();
        let bind = Binding::new(&g, s);
        let out = loss(&bind);
        g.scalar_value(out)
    };
    let analytic: BTreeMap<String, Matrix> = {
        let g = Graph::new();
        let bind = Binding::new(&g, store);
        let out = loss(&bind);
        bind.param_grads(&g.backward(out))
    };
    let selected: Vec<String> = if names.is_empty() {
        analytic.keys().cloned().collect()
    } else {
        names.iter().map(|s| s.to_string()).collect()
    };
    let mut report = GradReport { max_rel_error: 0.0, worst: None, checked: 0 };
    let mut probe = store.clone();
    for name in &selected {
        let n = store.value(name).len();
        for idx in 0..n {
            let orig = store.value(name).data()[idx];
            probe.value_mut(name).data_mut()[idx] = orig + step;
            let up = eval(&probe);
            probe.value_mut(name).data_mut()[idx] = orig - step;
            let down = eval(&probe);
            probe.value_mut(name).data_mut()[idx] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.get(name).map_or(0.0, |m| m.data()[idx]);
            let err = relative_error(a, numeric, floor);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), idx));
            }
        }
    }
    report
}

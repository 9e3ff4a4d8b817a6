//! Central finite-difference gradient checking.
//!
//! The numerical derivative only evaluates the loss, so it is independent of
//! every backward rule in [`crate::graph`].

use crate::params::{GradBuffer, ParamStore};

/// Relative error used throughout: `|a - n| / max(|a|, |n|, floor)`.
///
/// The floor keeps entries whose true gradient is numerically zero from
/// reporting round-off noise as a relative error.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupError {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    pub step: f64,
    pub floor: f64,
    /// Upper bound on entries probed per parameter; `None` probes all.
    pub max_entries: Option<usize>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
            max_entries: None,
        }
    }
}

/// Compare `analytic` against central differences of `loss` for every
/// parameter in `store`. The store is restored before returning.
pub fn check_params(
    store: &mut ParamStore,
    analytic: &GradBuffer,
    opts: CheckOptions,
    mut loss: impl FnMut(&ParamStore) -> f64,
) -> Vec<GroupError> {
    let ids: Vec<_> = store.ids().collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let n = store.get(id).len();
        let stride = match opts.max_entries {
            Some(k) if k > 0 && n > k => n.div_ceil(k),
            _ => 1,
        };
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        for i in (0..n).step_by(stride) {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + opts.step;
            let up = loss(store);
            store.get_mut(id).data_mut()[i] = orig - opts.step;
            let down = loss(store);
            store.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            let a = analytic.get(id).data()[i];
            worst = worst.max(relative_error(a, numeric, opts.floor));
            checked += 1;
        }
        out.push(GroupError {
            name: store.name(id).to_string(),
            checked,
            max_rel_error: worst,
        });
    }
    out
}

/// Central differences of `f` with respect to each entry of `x`.
pub fn numeric_gradient(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

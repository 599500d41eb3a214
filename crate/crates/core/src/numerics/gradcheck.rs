//! Central finite-difference gradient oracle.

use std::collections::BTreeMap;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max over the sample of `|a − n| / max(|a|, |n|, 1e-12)`.
    pub max_rel_error: f64,
    pub per_param: BTreeMap<String, f64>,
    pub checked: usize,
}

/// Compares analytic gradients of `loss_fn` with fourth-order central
/// differences (stencil `±h, ±2h`) on at most `max_per_param` evenly spaced
/// entries of every parameter.
///
/// `loss_fn` builds a scalar loss on a fresh graph and must be deterministic.
pub fn gradient_check<F>(store: &mut ParamStore, h: f64, max_per_param: usize, mut loss_fn: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &mut ParamStore) -> Result<Var>,
{
    store.zero_grads();
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, store)?;
    g.backward(loss)?;
    g.flush_grads(store);
    let analytic: BTreeMap<String, Vec<f64>> = store
        .iter()
        .map(|(k, p)| (k.clone(), p.grad.data().to_vec()))
        .collect();
    store.zero_grads();

    let mut eval = |store: &mut ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let l = loss_fn(&mut g, store)?;
        Ok(g.value(l).data()[0])
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        per_param: BTreeMap::new(),
        checked: 0,
    };
    let names: Vec<String> = store.names().cloned().collect();
    for name in names {
        let n = store.value(&name).map_or(0, |t| t.len());
        let stride = n.div_ceil(max_per_param.max(1)).max(1);
        let mut worst: f64 = 0.0;
        for idx in (0..n).step_by(stride) {
            let orig = store.value(&name).unwrap().data()[idx];
            let mut at = |store: &mut ParamStore, x: f64| -> Result<f64> {
                store.value_mut(&name).unwrap().data_mut()[idx] = x;
                eval(store)
            };
            let (p1, m1) = (at(store, orig + h)?, at(store, orig - h)?);
            let (p2, m2) = (at(store, orig + 2.0 * h)?, at(store, orig - 2.0 * h)?);
            store.value_mut(&name).unwrap().data_mut()[idx] = orig;
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
            let a = analytic[&name][idx];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            worst = worst.max(err);
            report.checked += 1;
        }
        report.max_rel_error = report.max_rel_error.max(worst);
        report.per_param.insert(name, worst);
    }
    Ok(report)
}

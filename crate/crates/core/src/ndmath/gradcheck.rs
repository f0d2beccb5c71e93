//! Central finite-difference gradient oracle.

use super::array::Real;
use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Builds a fresh graph over `store`, evaluates `loss_fn`, backpropagates,
/// and adds the parameter gradients into `store`. Returns the loss value.
pub fn evaluate_with_gradients<F: Real>(
    store: &mut ParamStore<F>,
    loss_fn: impl FnOnce(&mut Graph<F>) -> Result<Var>,
) -> Result<F> {
    let (loss, grads) = {
        let mut g = Graph::new(store);
        let loss = loss_fn(&mut g)?;
        let value = g.value(loss).data()[0];
        (value, g.backward(loss)?)
    };
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    store.accumulate(&grads);
    Ok(loss)
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst: String,
    pub checked: usize,
}

/// Compares analytic parameter gradients with central differences.
///
/// The per-element error is `|analytic − numeric| / max(|analytic|,
/// |numeric|, floor)`; the floor keeps near-zero gradients from turning
/// finite-difference round-off into a spurious relative error.
pub fn check_gradients(
    store: &mut ParamStore<f64>,
    step: f64,
    floor: f64,
    loss_fn: impl Fn(&mut Graph<f64>) -> Result<Var>,
) -> Result<GradCheckReport> {
    let coords: Vec<(ParamId, usize)> = store
        .iter()
        .filter(|(_, p)| p.trainable)
        .flat_map(|(id, p)| (0..p.value.len()).map(move |k| (id, k)))
        .collect();
    check_gradient_coords(store, step, floor, &coords, loss_fn)
}

/// [`check_gradients`] restricted to the listed `(parameter, element)`
/// coordinates.
pub fn check_gradient_coords(
    store: &mut ParamStore<f64>,
    step: f64,
    floor: f64,
    coords: &[(ParamId, usize)],
    loss_fn: impl Fn(&mut Graph<f64>) -> Result<Var>,
) -> Result<GradCheckReport> {
    store.zero_grad();
    evaluate_with_gradients(store, &loss_fn)?;
    let analytic: Vec<Vec<f64>> = store
        .iter()
        .map(|(_, p)| p.grad.data().to_vec())
        .collect();
    store.zero_grad();

    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new(store);
        let l = loss_fn(&mut g)?;
        Ok(g.value(l).data()[0])
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for &(id, k) in coords {
        let orig = store.value(id).data()[k];
        store.get_mut(id).value.data_mut()[k] = orig + step;
        let plus = eval(store)?;
        store.get_mut(id).value.data_mut()[k] = orig - step;
        let minus = eval(store)?;
        store.get_mut(id).value.data_mut()[k] = orig;

        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic[id.index()][k];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        report.checked += 1;
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst = format!(
                "{}[{k}]: analytic {a:e}, numeric {numeric:e}",
                store.get(id).name
            );
        }
    }
    Ok(report)
}

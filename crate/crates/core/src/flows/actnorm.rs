use crate::error::{Error, Result};
use crate::ndmath::{Array, Graph, ParamId, ParamStore, Real, Var};

const VAR_FLOOR: f64 = 1e-6;

/// Per-channel affine `y = exp(logs) ⊙ (x + bias)` with data-dependent init.
#[derive(Clone, Debug)]
pub struct ActNorm {
    pub name: String,
    pub logs: ParamId,
    pub bias: ParamId,
    /// Buffer holding 1 once [`ActNorm::init`] has run.
    pub initialized: ParamId,
}

impl ActNorm {
    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, channels: usize) -> Self {
        Self {
            name: name.to_string(),
            logs: store.add(&format!("{name}.logs"), Array::zeros(&[channels, 1])),
            bias: store.add(&format!("{name}.bias"), Array::zeros(&[channels, 1])),
            initialized: store.add_buffer(&format!("{name}.initialized"), Array::zeros(&[1, 1])),
        }
    }

    pub fn is_initialized<F: Real>(&self, store: &ParamStore<F>) -> bool {
        store.value(self.initialized).data()[0] != F::zero()
    }

    pub fn mark_initialized<F: Real>(&self, store: &mut ParamStore<F>) {
        store.set_value(self.initialized, Array::ones(&[1, 1]));
    }

    /// Sets bias and scale so that `batch` (channels × frames) maps to zero
    /// mean and unit variance per channel.
    pub fn init<F: Real>(&self, store: &mut ParamStore<F>, batch: &Array<F>) -> Result<()> {
        let (c, t) = (batch.rows(), batch.cols());
        if t < 2 {
            return Err(Error::invalid("actnorm_init", format!("need more than one frame, got {t}")));
        }
        let mut bias = Array::zeros(&[c, 1]);
        let mut logs = Array::zeros(&[c, 1]);
        for ch in 0..c {
            let row = batch.row_slice(ch);
            let mean = row.iter().map(|x| x.f64()).sum::<f64>() / t as f64;
            let mut var = row.iter().map(|x| (x.f64() - mean).powi(2)).sum::<f64>() / t as f64;
            if var < VAR_FLOOR {
                log::warn!("{}: channel {ch} has variance {var:e}; flooring at {VAR_FLOOR:e}", self.name);
                var = VAR_FLOOR;
            }
            bias.set(ch, 0, F::c(-mean));
            logs.set(ch, 0, F::c(-0.5 * var.ln()));
        }
        store.set_value(self.bias, bias);
        store.set_value(self.logs, logs);
        self.mark_initialized(store);
        Ok(())
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<F>, x: Var) -> Result<(Var, Var)> {
        if !self.is_initialized(g.store()) {
            return Err(Error::Uninitialized(self.name.clone()));
        }
        let frames = g.cols(x) as f64;
        let logs = g.param(self.logs);
        let bias = g.param(self.bias);
        let scale = g.exp(logs);
        let shifted = g.add(x, bias);
        let y = g.mul(shifted, scale);
        let s = g.sum(logs);
        let log_det = g.scale(s, frames);
        Ok((y, log_det))
    }

    pub fn inverse<F: Real>(&self, g: &mut Graph<F>, y: Var) -> Var {
        let logs = g.param(self.logs);
        let bias = g.param(self.bias);
        let neg = g.neg(logs);
        let inv_scale = g.exp(neg);
        let x = g.mul(y, inv_scale);
        g.sub(x, bias)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form() {
        let mut store = ParamStore::<f64>::new();
        let a = ActNorm::new(&mut store, "an", 1);
        store.set_value(a.logs, Array::scalar(2f64.ln()));
        a.mark_initialized(&mut store);
        let mut g = Graph::new(&store);
        let x = g.constant(Array::row(&[1., 2., 3.]));
        let (y, ld) = a.forward(&mut g, x).unwrap();
        let y = g.value(y).data().to_vec();
        for (got, want) in y.iter().zip([2., 4., 6.]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((g.value(ld).data()[0] - 3.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn uninitialized_forward_is_an_error() {
        let mut store = ParamStore::<f32>::new();
        let a = ActNorm::new(&mut store, "an", 2);
        let mut g = Graph::new(&store);
        let x = g.constant(Array::zeros(&[2, 3]));
        assert!(matches!(a.forward(&mut g, x), Err(Error::Uninitialized(_))));
    }

    #[test]
    fn constant_batch_uses_floor() {
        let mut store = ParamStore::<f64>::new();
        let a = ActNorm::new(&mut store, "an", 2);
        a.init(&mut store, &Array::full(&[2, 5], 3.0)).unwrap();
        assert!(store.value(a.logs).all_finite());
        let mut g = Graph::new(&store);
        let x = g.constant(Array::full(&[2, 5], 3.0));
        let (y, _) = a.forward(&mut g, x).unwrap();
        assert!(g.value(y).max_abs() < 1e-9);
    }

    #[test]
    fn standardized_batch_is_nearly_identity() {
        let mut store = ParamStore::<f64>::new();
        let a = ActNorm::new(&mut store, "an", 1);
        a.init(&mut store, &Array::row(&[-1.0, 1.0, -1.0, 1.0])).unwrap();
        assert!(store.value(a.logs).max_abs() < 1e-12);
        assert!(store.value(a.bias).max_abs() < 1e-12);
    }
}

//! Glow-style invertible layers: actnorm, LU-parameterized 1x1 convolution,
//! conditioned affine coupling, and frame squeezing.
//!
//! Layers operate on `[channels × frames]` matrices inside a [`Graph`], so
//! the forward direction is differentiable and the same code serves 32-bit
//! training and 64-bit verification.

mod actnorm;
mod coupling;
mod inv1x1;
mod squeeze;

pub use actnorm::ActNorm;
pub use coupling::{Coupling, CouplingConfig};
pub use inv1x1::{Inv1x1, MAX_CONDITION};
pub use squeeze::{squeeze, squeeze_array, unsqueeze, unsqueeze_array};

use crate::error::Result;
use crate::ndmath::{Array, Graph, ParamStore, Real, Var};

/// Conditioning inputs for coupling layers: a `[S × 1]` speaker column
/// broadcast over frames and a `[P × T]` pitch feature matrix.
#[derive(Clone, Copy, Debug, Default)]
pub struct Cond {
    pub speaker: Option<Var>,
    pub pitch: Option<Var>,
}

#[derive(Clone, Debug)]
pub enum FlowLayer {
    ActNorm(ActNorm),
    Inv1x1(Inv1x1),
    Coupling(Coupling),
}

impl FlowLayer {
    /// Returns `(y, log|det ∂y/∂x|)`.
    pub fn forward<F: Real>(&self, g: &mut Graph<F>, x: Var, cond: &Cond) -> Result<(Var, Var)> {
        match self {
            FlowLayer::ActNorm(l) => l.forward(g, x),
            FlowLayer::Inv1x1(l) => l.forward(g, x),
            FlowLayer::Coupling(l) => l.forward(g, x, cond),
        }
    }

    pub fn inverse<F: Real>(&self, g: &mut Graph<F>, y: Var, cond: &Cond) -> Result<Var> {
        match self {
            FlowLayer::ActNorm(l) => Ok(l.inverse(g, y)),
            FlowLayer::Inv1x1(l) => l.inverse(g, y),
            FlowLayer::Coupling(l) => l.inverse(g, y, cond),
        }
    }
}

/// Ordered composition of flow layers.
#[derive(Clone, Debug, Default)]
pub struct FlowStack {
    pub layers: Vec<FlowLayer>,
}

impl FlowStack {
    /// Runs every layer; the returned log-determinant is the sum over layers.
    pub fn forward<F: Real>(&self, g: &mut Graph<F>, x: Var, cond: &Cond) -> Result<(Var, Var)> {
        let (z, parts) = self.forward_traced(g, x, cond)?;
        let mut total = g.scalar(0.0);
        for p in parts {
            total = g.add(total, p);
        }
        Ok((z, total))
    }

    /// Like [`FlowStack::forward`] but returns each layer's log-determinant.
    pub fn forward_traced<F: Real>(&self, g: &mut Graph<F>, x: Var, cond: &Cond) -> Result<(Var, Vec<Var>)> {
        let mut h = x;
        let mut parts = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, ld) = layer.forward(g, h, cond)?;
            h = y;
            parts.push(ld);
        }
        Ok((h, parts))
    }

    pub fn inverse<F: Real>(&self, g: &mut Graph<F>, z: Var, cond: &Cond) -> Result<Var> {
        let mut h = z;
        for layer in self.layers.iter().rev() {
            h = layer.inverse(g, h, cond)?;
        }
        Ok(h)
    }

    /// Data-dependent actnorm initialization, layer by layer in order.
    /// `inputs` rebuilds the batch (inputs and conditioning) in a fresh graph.
    pub fn init_actnorm<F: Real>(
        &self,
        store: &mut ParamStore<F>,
        inputs: impl Fn(&mut Graph<F>) -> Result<Vec<(Var, Cond)>>,
    ) -> Result<()> {
        for (k, layer) in self.layers.iter().enumerate() {
            let FlowLayer::ActNorm(an) = layer else { continue };
            if an.is_initialized(store) {
                continue;
            }
            let batch = {
                let mut g = Graph::new(store);
                let items = inputs(&mut g)?;
                let mut acts = Vec::with_capacity(items.len());
                for (x, cond) in items {
                    let mut h = x;
                    for l in &self.layers[..k] {
                        h = l.forward(&mut g, h, &cond)?.0;
                    }
                    acts.push(g.value(h).clone());
                }
                let refs: Vec<&Array<F>> = acts.iter().collect();
                Array::concat_cols(&refs)?
            };
            an.init(store, &batch)?;
        }
        Ok(())
    }

    pub fn mark_initialized<F: Real>(&self, store: &mut ParamStore<F>) {
        for layer in &self.layers {
            if let FlowLayer::ActNorm(an) = layer {
                an.mark_initialized(store);
            }
        }
    }
}

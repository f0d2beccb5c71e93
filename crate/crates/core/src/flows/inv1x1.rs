use crate::error::{Error, Result};
use crate::ndmath::layers::normal_array;
use crate::ndmath::linalg::{inverse, lu, orthonormalize};
use crate::ndmath::{Array, Graph, ParamId, ParamStore, Real, Var};
use crate::Rng;

/// Inversion refuses matrices whose condition estimate exceeds this.
pub const MAX_CONDITION: f64 = 1e8;

/// Invertible channel mixing `y[:, t] = W x[:, t]` with
/// `W = P (L + I) (U + diag(sign ⊙ exp(log_s)))`, so `log|det W| = Σ log_s`.
///
/// `P` and `sign` are fixed buffers; `L` and `U` are used only below and
/// above the diagonal.
#[derive(Clone, Debug)]
pub struct Inv1x1 {
    pub channels: usize,
    pub perm: ParamId,
    pub sign: ParamId,
    pub lower: ParamId,
    pub upper: ParamId,
    pub log_s: ParamId,
}

impl Inv1x1 {
    /// Starts from a random rotation.
    pub fn new<F: Real>(store: &mut ParamStore<F>, rng: &mut Rng, name: &str, channels: usize) -> Self {
        let w = orthonormalize(&normal_array::<f64>(rng, &[channels, channels], 1.0));
        Self::from_matrix(store, name, &w.cast()).expect("orthonormal matrix is invertible")
    }

    pub fn from_matrix<F: Real>(store: &mut ParamStore<F>, name: &str, w: &Array<F>) -> Result<Self> {
        let c = w.rows();
        let f = lu(w)?;
        let diag: Vec<F> = (0..c).map(|i| f.upper.get(i, i)).collect();
        let strict_upper = Array::from_fn(c, c, |i, j| if j > i { f.upper.get(i, j) } else { F::zero() });
        let strict_lower = Array::from_fn(c, c, |i, j| if i > j { f.lower.get(i, j) } else { F::zero() });
        Ok(Self {
            channels: c,
            perm: store.add_buffer(&format!("{name}.perm"), f.perm),
            sign: store.add_buffer(
                &format!("{name}.sign"),
                Array::from_fn(c, 1, |i, _| if diag[i] < F::zero() { -F::one() } else { F::one() }),
            ),
            lower: store.add(&format!("{name}.lower"), strict_lower),
            upper: store.add(&format!("{name}.upper"), strict_upper),
            log_s: store.add(&format!("{name}.log_s"), Array::from_fn(c, 1, |i, _| diag[i].abs().ln())),
        })
    }

    /// The composed weight matrix, built once per graph.
    pub fn weight<F: Real>(&self, g: &mut Graph<F>) -> Var {
        let c = self.channels;
        g.memoize(self.lower, |g| {
            let eye = g.constant(Array::identity(c));
            let lmask = g.constant(Array::from_fn(c, c, |i, j| if i > j { F::one() } else { F::zero() }));
            let umask = g.constant(Array::from_fn(c, c, |i, j| if j > i { F::one() } else { F::zero() }));
            // P is a fixed permutation, so P·LU is a row gather
            let perm = g.store().value(self.perm);
            let mut rows = Vec::with_capacity(c * c);
            for i in 0..c {
                let j = (0..c).find(|&j| perm.get(i, j) != F::zero()).expect("permutation row");
                rows.extend(j * c..(j + 1) * c);
            }
            let sign = g.param(self.sign);
            let l = g.param(self.lower);
            let u = g.param(self.upper);
            let log_s = g.param(self.log_s);
            let lm = g.mul(l, lmask);
            let l1 = g.add(lm, eye);
            let s = g.exp(log_s);
            let sd = g.mul(s, sign);
            let diag = g.mul(eye, sd);
            let um = g.mul(u, umask);
            let u1 = g.add(um, diag);
            let lu = g.matmul(l1, u1);
            g.take(lu, rows, &[c, c])
        })
    }

    pub fn weight_value<F: Real>(&self, store: &ParamStore<F>) -> Array<F> {
        let mut g = Graph::new(store);
        let w = self.weight(&mut g);
        g.value(w).clone()
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<F>, x: Var) -> Result<(Var, Var)> {
        if g.rows(x) != self.channels {
            return Err(Error::ShapeMismatch {
                op: "inv1x1_forward",
                left: vec![self.channels, self.channels],
                right: g.shape(x).to_vec(),
            });
        }
        let frames = g.cols(x) as f64;
        let w = self.weight(g);
        let y = g.matmul(w, x);
        let log_s = g.param(self.log_s);
        let s = g.sum(log_s);
        Ok((y, g.scale(s, frames)))
    }

    /// Applies `W⁻¹`; the inverse is computed numerically and treated as a
    /// constant.
    pub fn inverse<F: Real>(&self, g: &mut Graph<F>, y: Var) -> Result<Var> {
        let w = self.weight(g);
        let winv = inverse(g.value(w), MAX_CONDITION)?;
        let winv = g.constant(winv);
        Ok(g.matmul(winv, y))
    }
}

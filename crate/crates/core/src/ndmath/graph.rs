//! Taped reverse-mode differentiation over a closed set of matrix primitives.
//!
//! A [`Graph`] records every primitive applied to its [`Var`]s. Calling
//! [`Graph::backward`] on a scalar walks the tape in reverse and returns the
//! gradient of that scalar with respect to every recorded node, including the
//! parameter leaves created through [`Graph::param`]. Each parameter appears as
//! a single leaf per graph, so repeated uses accumulate additively.
//!
//! Binary elementwise ops broadcast matrices along any axis of length one.

use std::rc::Rc;

use super::array::{Array, Real};
use super::ops::{self, ConvSpec, Padding};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op<F> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, F),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Sqrt(Var),
    Square(Var),
    ClampMin(Var, F),
    SumAll(Var),
    SumRows(Var),
    SumCols(Var),
    MatMul(Var, Var),
    Conv(Var, Var, ConvSpec),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    Take(Var, Rc<[usize]>),
    ScatterAdd(Var, Rc<[usize]>),
}

struct Node<F> {
    value: Array<F>,
    op: Op<F>,
}

pub struct Graph<'s, F: Real> {
    store: &'s ParamStore<F>,
    nodes: Vec<Node<F>>,
    param_vars: Vec<Option<Var>>,
    memo: std::collections::HashMap<ParamId, Var>,
}

/// Result of [`Graph::backward`].
pub struct Gradients<F> {
    nodes: Vec<Option<Array<F>>>,
    params: Vec<(ParamId, Var)>,
}

impl<F: Real> Gradients<F> {
    /// Gradient with respect to any node; `None` if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Array<F>> {
        self.nodes.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Array<F>> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, v)| self.wrt(*v))
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Array<F>)> {
        self.params
            .iter()
            .filter_map(|(p, v)| self.wrt(*v).map(|g| (*p, g)))
    }
}

fn broadcast_dims(a: &[usize], b: &[usize]) -> Option<[usize; 2]> {
    if a.len() != 2 || b.len() != 2 {
        return None;
    }
    let mut out = [0; 2];
    for k in 0..2 {
        out[k] = match (a[k], b[k]) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

fn broadcast_zip<F: Real>(a: &Array<F>, b: &Array<F>, f: impl Fn(F, F) -> F) -> Array<F> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let [r, c] = broadcast_dims(a.shape(), b.shape()).unwrap_or_else(|| {
        panic!(
            "broadcast: incompatible shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )
    });
    let (ar, ac) = (a.rows(), a.cols());
    let (br, bc) = (b.rows(), b.cols());
    Array::from_fn(r, c, |i, j| {
        let x = a.data()[(if ar == 1 { 0 } else { i }) * ac + if ac == 1 { 0 } else { j }];
        let y = b.data()[(if br == 1 { 0 } else { i }) * bc + if bc == 1 { 0 } else { j }];
        f(x, y)
    })
}

/// Sums a broadcast gradient back down to `shape`.
fn reduce_to<F: Real>(g: Array<F>, shape: &[usize]) -> Array<F> {
    if g.shape() == shape {
        return g;
    }
    let (r, c) = (g.rows(), g.cols());
    let mut out = Array::zeros(shape);
    let (sr, sc) = (shape[0], shape[1]);
    for i in 0..r {
        for j in 0..c {
            let oi = if sr == 1 { 0 } else { i };
            let oj = if sc == 1 { 0 } else { j };
            out.data_mut()[oi * sc + oj] += g.data()[i * c + j];
        }
    }
    out
}

fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

fn softplus<F: Real>(x: F) -> F {
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}

impl<'s, F: Real> Graph<'s, F> {
    pub fn new(store: &'s ParamStore<F>) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
            memo: Default::default(),
        }
    }

    pub fn store(&self) -> &'s ParamStore<F> {
        self.store
    }

    fn push(&mut self, value: Array<F>, op: Op<F>) -> Var {
        debug_assert!(
            value.all_finite(),
            "non-finite value produced by {:?}",
            std::mem::discriminant(&op)
        );
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Array<F>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Array::scalar(F::c(v)))
    }

    /// Leaf node for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.push(self.store.value(id).clone(), Op::Leaf);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Builds a derived quantity once per graph, keyed by a parameter of the
    /// layer that owns it.
    pub fn memoize(&mut self, key: ParamId, build: impl FnOnce(&mut Self) -> Var) -> Var {
        if let Some(&v) = self.memo.get(&key) {
            return v;
        }
        let v = build(self);
        self.memo.insert(key, v);
        v
    }

    pub fn value(&self, v: Var) -> &Array<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn rows(&self, v: Var) -> usize {
        self.value(v).rows()
    }

    pub fn cols(&self, v: Var) -> usize {
        self.value(v).cols()
    }

    /// Identity in value; the gradient through the returned node is zero.
    pub fn stop_gradient(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(F, F) -> F, op: Op<F>) -> Var {
        let value = broadcast_zip(self.value(a), self.value(b), f);
        self.push(value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(F) -> F, op: Op<F>) -> Var {
        let value = self.value(a).map(f);
        self.push(value, op)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = F::c(s);
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let s = F::c(s);
        self.unary(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.exp(), Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.ln(), Op::Log(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.sqrt(), Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// `max(a, floor)` elementwise; gradient flows only where `a > floor`.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let f = F::c(floor);
        self.unary(a, |x| x.max(f), Op::ClampMin(a, f))
    }

    /// Sum of all elements as a `[1 × 1]` scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Array::scalar(s), Op::SumAll(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Sum over the row axis: `[r × c] -> [1 × c]`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = Array::zeros(&[1, x.cols()]);
        for r in 0..x.rows() {
            for (o, &v) in out.data_mut().iter_mut().zip(x.row_slice(r)) {
                *o += v;
            }
        }
        self.push(out, Op::SumRows(a))
    }

    /// Sum over the column axis: `[r × c] -> [r × 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let out = Array::from_fn(x.rows(), 1, |r, _| x.row_slice(r).iter().copied().sum());
        self.push(out, Op::SumCols(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = ops::matmul(self.value(a), self.value(b)).expect("matmul");
        self.push(value, Op::MatMul(a, b))
    }

    /// Differentiable [`ops::conv1d`]; panics with both shapes on mismatch.
    pub fn conv1d(
        &mut self,
        input: Var,
        kernel: Var,
        dilation: usize,
        groups: usize,
        padding: Padding,
    ) -> Var {
        let spec = ConvSpec::infer(
            self.shape(input),
            self.shape(kernel),
            dilation,
            groups,
            padding,
        )
        .unwrap_or_else(|e| panic!("{e}"));
        let value = ops::conv1d_with(&spec, self.value(input), self.value(kernel));
        self.push(value, Op::Conv(input, kernel, spec))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let arrays: Vec<&Array<F>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Array::concat_rows(&arrays).unwrap_or_else(|e| panic!("{e}"));
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice_rows(start, end);
        self.push(value, Op::SliceRows(a, start))
    }

    /// Flat gather: `out[i] = a[indices[i]]`, reshaped to `shape`.
    pub fn take(&mut self, a: Var, indices: Vec<usize>, shape: &[usize]) -> Var {
        assert_eq!(indices.len(), shape.iter().product::<usize>(), "take: index count");
        let src = self.value(a).data();
        let data = indices.iter().map(|&i| src[i]).collect();
        let value = Array::from_vec(shape, data).expect("take shape");
        self.push(value, Op::Take(a, indices.into()))
    }

    /// Segment sum: `out[indices[i]] += a[i]` into a zero array of `shape`.
    pub fn scatter_add(&mut self, a: Var, indices: Vec<usize>, shape: &[usize]) -> Var {
        assert_eq!(indices.len(), self.value(a).len(), "scatter_add: index count");
        let mut out = Array::zeros(shape);
        for (&i, &v) in indices.iter().zip(self.value(a).data()) {
            out.data_mut()[i] += v;
        }
        self.push(out, Op::ScatterAdd(a, indices.into()))
    }

    /// Repeats the columns of `a` according to `cols` (gather along frames).
    pub fn gather_cols(&mut self, a: Var, cols: &[usize]) -> Var {
        let (r, c) = (self.rows(a), self.cols(a));
        let n = cols.len();
        let mut idx = Vec::with_capacity(r * n);
        for row in 0..r {
            idx.extend(cols.iter().map(|&col| {
                assert!(col < c, "gather_cols: column {col} out of {c}");
                row * c + col
            }));
        }
        self.take(a, idx, &[r, n])
    }

    /// Backpropagates from a `[1 × 1]` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Array<F>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Array::ones(shape));

        fn acc<F: Real>(grads: &mut [Option<Array<F>>], v: Var, g: Array<F>) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            let y = &node.value;
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Add(a, b) => {
                    acc(&mut grads, *a, reduce_to(g.clone(), val(*a).shape()));
                    acc(&mut grads, *b, reduce_to(g, val(*b).shape()));
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, reduce_to(g.clone(), val(*a).shape()));
                    acc(&mut grads, *b, reduce_to(g.map(|x| -x), val(*b).shape()));
                }
                Op::Mul(a, b) => {
                    let ga = broadcast_zip(&g, val(*b), |g, b| g * b);
                    let gb = broadcast_zip(&g, val(*a), |g, a| g * a);
                    acc(&mut grads, *a, reduce_to(ga, val(*a).shape()));
                    acc(&mut grads, *b, reduce_to(gb, val(*b).shape()));
                }
                Op::Div(a, b) => {
                    let ga = broadcast_zip(&g, val(*b), |g, b| g / b);
                    let gy = g.zip_map(y, |g, y| -g * y);
                    let gb = broadcast_zip(&gy, val(*b), |gy, b| gy / b);
                    acc(&mut grads, *a, reduce_to(ga, val(*a).shape()));
                    acc(&mut grads, *b, reduce_to(gb, val(*b).shape()));
                }
                Op::Neg(a) => acc(&mut grads, *a, g.map(|x| -x)),
                Op::Scale(a, s) => {
                    let s = *s;
                    acc(&mut grads, *a, g.map(|x| x * s))
                }
                Op::AddScalar(a) => acc(&mut grads, *a, g),
                Op::Exp(a) => acc(&mut grads, *a, g.zip_map(y, |g, y| g * y)),
                Op::Log(a) => acc(&mut grads, *a, g.zip_map(val(*a), |g, x| g / x)),
                Op::Tanh(a) => acc(
                    &mut grads,
                    *a,
                    g.zip_map(y, |g, y| g * (F::one() - y * y)),
                ),
                Op::Sigmoid(a) => acc(
                    &mut grads,
                    *a,
                    g.zip_map(y, |g, y| g * y * (F::one() - y)),
                ),
                Op::Softplus(a) => acc(&mut grads, *a, g.zip_map(val(*a), |g, x| g * sigmoid(x))),
                Op::Sqrt(a) => acc(
                    &mut grads,
                    *a,
                    g.zip_map(y, |g, y| g * F::c(0.5) / y),
                ),
                Op::Square(a) => acc(
                    &mut grads,
                    *a,
                    g.zip_map(val(*a), |g, x| g * F::c(2.0) * x),
                ),
                Op::ClampMin(a, f) => {
                    let f = *f;
                    acc(
                        &mut grads,
                        *a,
                        g.zip_map(val(*a), |g, x| if x > f { g } else { F::zero() }),
                    )
                }
                Op::SumAll(a) => {
                    let s = g.data()[0];
                    acc(&mut grads, *a, Array::full(val(*a).shape(), s))
                }
                Op::SumRows(a) => {
                    let x = val(*a);
                    let ga = Array::from_fn(x.rows(), x.cols(), |_, c| g.data()[c]);
                    acc(&mut grads, *a, ga)
                }
                Op::SumCols(a) => {
                    let x = val(*a);
                    let ga = Array::from_fn(x.rows(), x.cols(), |r, _| g.data()[r]);
                    acc(&mut grads, *a, ga)
                }
                Op::MatMul(a, b) => {
                    let ga = ops::matmul_nt(&g, val(*b));
                    let gb = ops::matmul_tn(val(*a), &g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Conv(x, k, spec) => {
                    let gx = ops::conv1d_grad_input(spec, &g, val(*k));
                    let gk = ops::conv1d_grad_kernel(spec, &g, val(*x), val(*k).shape());
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *k, gk);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let r = val(*p).rows();
                        acc(&mut grads, *p, g.slice_rows(start, start + r));
                        start += r;
                    }
                }
                Op::SliceRows(a, start) => {
                    let x = val(*a);
                    let mut ga = Array::zeros(x.shape());
                    let c = x.cols();
                    ga.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                    acc(&mut grads, *a, ga)
                }
                Op::Take(a, idx) => {
                    let mut ga = Array::zeros(val(*a).shape());
                    for (&i, &gv) in idx.iter().zip(g.data()) {
                        ga.data_mut()[i] += gv;
                    }
                    acc(&mut grads, *a, ga)
                }
                Op::ScatterAdd(a, idx) => {
                    let data = idx.iter().map(|&i| g.data()[i]).collect();
                    let ga = Array::from_vec(val(*a).shape(), data).expect("scatter grad");
                    acc(&mut grads, *a, ga)
                }
            }
        }

        let params = self
            .param_vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
            .collect();
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }

    // Composite helpers built only from the primitives above.

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let x3 = {
            let sq = self.square(x);
            self.mul(sq, x)
        };
        let inner = {
            let t = self.scale(x3, 0.044715);
            let s = self.add(x, t);
            self.scale(s, (2.0 / std::f64::consts::PI).sqrt())
        };
        let th = self.tanh(inner);
        let one_plus = self.add_scalar(th, 1.0);
        let half_x = self.scale(x, 0.5);
        self.mul(half_x, one_plus)
    }

    /// `log σ(x) = -softplus(-x)`.
    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        let n = self.neg(x);
        let sp = self.softplus(n);
        self.neg(sp)
    }

    /// Softmax over the row axis (each column sums to one).
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let v = self.value(x);
        // the shift is a constant and cancels exactly
        let shift = Array::from_fn(1, v.cols(), |_, c| {
            (0..v.rows()).fold(F::neg_infinity(), |m, r| m.max(v.get(r, c)))
        });
        let shift = self.constant(shift);
        let centered = self.sub(x, shift);
        let e = self.exp(centered);
        let s = self.sum_rows(e);
        self.div(e, s)
    }

    /// Normalizes every column over the row axis, then applies a per-row
    /// affine (`gamma`, `beta` are `[rows × 1]`).
    pub fn layer_norm_rows(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let n = self.rows(x) as f64;
        let s = self.sum_rows(x);
        let mean = self.scale(s, 1.0 / n);
        let centered = self.sub(x, mean);
        let sq = self.square(centered);
        let ss = self.sum_rows(sq);
        let var = self.scale(ss, 1.0 / n);
        let var_eps = self.add_scalar(var, eps);
        let std = self.sqrt(var_eps);
        let normed = self.div(centered, std);
        let scaled = self.mul(normed, gamma);
        self.add(scaled, beta)
    }
}

use super::ddsconv::DdsConv;
use super::rqs::{params_from_block, rqs_graph, SplineConfig};
use crate::error::{Error, Result};
use crate::ndmath::layers::{Conv1d, Init};
use crate::ndmath::{Array, Graph, ParamId, ParamStore, Real, Var};
use crate::Rng;

/// `y = m + exp(logs) ⊙ x` per channel.
#[derive(Clone, Debug)]
pub struct ElementwiseAffine {
    pub m: ParamId,
    pub logs: ParamId,
}

impl ElementwiseAffine {
    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, channels: usize) -> Self {
        Self {
            m: store.add(&format!("{name}.m"), Array::zeros(&[channels, 1])),
            logs: store.add(&format!("{name}.logs"), Array::zeros(&[channels, 1])),
        }
    }

    fn forward<F: Real>(&self, g: &mut Graph<F>, x: Var) -> (Var, Var) {
        let frames = g.cols(x) as f64;
        let m = g.param(self.m);
        let logs = g.param(self.logs);
        let s = g.exp(logs);
        let xs = g.mul(x, s);
        let y = g.add(xs, m);
        let sum = g.sum(logs);
        (y, g.scale(sum, frames))
    }

    fn inverse<F: Real>(&self, g: &mut Graph<F>, y: Var) -> Var {
        let m = g.param(self.m);
        let logs = g.param(self.logs);
        let d = g.sub(y, m);
        let n = g.neg(logs);
        let inv = g.exp(n);
        g.mul(d, inv)
    }
}

/// Spline coupling: the first half of the channels passes through and,
/// with the conditioning, parameterizes a spline on the second half.
#[derive(Clone, Debug)]
pub struct ConvFlow {
    pub half: usize,
    pub filter_channels: usize,
    pub spline: SplineConfig,
    pre: Conv1d,
    convs: DdsConv,
    pub proj: Conv1d,
}

impl ConvFlow {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        rng: &mut Rng,
        name: &str,
        channels: usize,
        filter_channels: usize,
        kernel: usize,
        depth: usize,
        spline: SplineConfig,
    ) -> Result<Self> {
        if channels < 2 || channels % 2 != 0 {
            return Err(Error::invalid("ConvFlow", format!("channel count must be even, got {channels}")));
        }
        let half = channels / 2;
        Ok(Self {
            half,
            filter_channels,
            spline,
            pre: Conv1d::pointwise(store, rng, &format!("{name}.pre"), half, filter_channels, Init::FanIn),
            convs: DdsConv::new(store, rng, &format!("{name}.convs"), filter_channels, kernel, depth),
            proj: Conv1d::pointwise(
                store,
                rng,
                &format!("{name}.proj"),
                filter_channels,
                half * spline.params_per_element(),
                Init::Zero,
            ),
        })
    }

    /// Raw spline parameters; width and height logits are scaled by
    /// `1/√filter_channels`.
    fn raw_params<F: Real>(&self, g: &mut Graph<F>, x0: Var, cond: Option<Var>) -> Result<Var> {
        let h = self.pre.forward(g, x0);
        let h = self.convs.forward(g, h, cond)?;
        let raw = self.proj.forward(g, h);
        let k = self.spline.bins;
        let p = self.spline.params_per_element();
        let inv = 1.0 / (self.filter_channels as f64).sqrt();
        let scale = Array::from_fn(self.half * p, 1, |r, _| {
            if r % p < 2 * k {
                F::c(inv)
            } else {
                F::one()
            }
        });
        let scale = g.constant(scale);
        Ok(g.mul(raw, scale))
    }

    fn forward<F: Real>(&self, g: &mut Graph<F>, x: Var, cond: Option<Var>) -> Result<(Var, Var)> {
        let x0 = g.slice_rows(x, 0, self.half);
        let x1 = g.slice_rows(x, self.half, 2 * self.half);
        let raw = self.raw_params(g, x0, cond)?;
        let (y1, ld) = rqs_graph(g, &self.spline, x1, raw)?;
        let y = g.concat_rows(&[x0, y1]);
        Ok((y, g.sum(ld)))
    }

    fn inverse<F: Real>(&self, g: &mut Graph<F>, y: Var, cond: Option<Var>) -> Result<Var> {
        let y0 = g.slice_rows(y, 0, self.half);
        let y1 = g.slice_rows(y, self.half, 2 * self.half);
        let raw = self.raw_params(g, y0, cond)?;
        let splines = params_from_block(&self.spline, g.value(raw), self.half)?;
        let y1v = g.value(y1);
        let x1 = Array::from_vec(
            y1v.shape(),
            y1v.data()
                .iter()
                .zip(&splines)
                .map(|(&v, sp)| F::c(sp.inverse(v.f64()).0))
                .collect(),
        )?;
        let x1 = g.constant(x1);
        Ok(g.concat_rows(&[y0, x1]))
    }
}

/// Layers of the stochastic duration and pitch predictors.
#[derive(Clone, Debug)]
pub enum PredictorFlow {
    Affine(ElementwiseAffine),
    Conv(ConvFlow),
    /// Reverses the channel order.
    Flip,
    /// `y = log(max(x, 1e-5))` on every channel.
    Log,
}

fn flip<F: Real>(g: &mut Graph<F>, x: Var) -> Var {
    let c = g.rows(x);
    let rows: Vec<Var> = (0..c).rev().map(|r| g.slice_rows(x, r, r + 1)).collect();
    g.concat_rows(&rows)
}

impl PredictorFlow {
    pub fn forward<F: Real>(&self, g: &mut Graph<F>, x: Var, cond: Option<Var>) -> Result<(Var, Var)> {
        Ok(match self {
            PredictorFlow::Affine(a) => a.forward(g, x),
            PredictorFlow::Conv(c) => c.forward(g, x, cond)?,
            PredictorFlow::Flip => {
                let y = flip(g, x);
                (y, g.scalar(0.0))
            }
            PredictorFlow::Log => {
                let c = g.clamp_min(x, 1e-5);
                let y = g.log(c);
                let s = g.sum(y);
                (y, g.neg(s))
            }
        })
    }

    pub fn inverse<F: Real>(&self, g: &mut Graph<F>, y: Var, cond: Option<Var>) -> Result<Var> {
        Ok(match self {
            PredictorFlow::Affine(a) => a.inverse(g, y),
            PredictorFlow::Conv(c) => c.inverse(g, y, cond)?,
            PredictorFlow::Flip => flip(g, y),
            PredictorFlow::Log => g.exp(y),
        })
    }
}

/// Runs `flows` in order and sums their log-determinants.
pub fn flows_forward<F: Real>(
    g: &mut Graph<F>,
    flows: &[PredictorFlow],
    x: Var,
    cond: Option<Var>,
) -> Result<(Var, Var)> {
    let mut h = x;
    let mut total = g.scalar(0.0);
    for f in flows {
        let (y, ld) = f.forward(g, h, cond)?;
        h = y;
        total = g.add(total, ld);
    }
    Ok((h, total))
}

pub fn flows_inverse<F: Real>(g: &mut Graph<F>, flows: &[&PredictorFlow], z: Var, cond: Option<Var>) -> Result<Var> {
    let mut h = z;
    for f in flows.iter().rev() {
        h = f.inverse(g, h, cond)?;
    }
    Ok(h)
}

/// The standard predictor flow chain: an elementwise affine layer followed
/// by `n` spline couplings, each followed by a channel flip.
#[allow(clippy::too_many_arguments)]
pub fn coupling_chain<F: Real>(
    store: &mut ParamStore<F>,
    rng: &mut Rng,
    name: &str,
    channels: usize,
    filter_channels: usize,
    kernel: usize,
    depth: usize,
    n: usize,
    spline: SplineConfig,
) -> Result<Vec<PredictorFlow>> {
    let mut flows = vec![PredictorFlow::Affine(ElementwiseAffine::new(store, &format!("{name}.affine"), channels))];
    for i in 0..n {
        flows.push(PredictorFlow::Conv(ConvFlow::new(
            store,
            rng,
            &format!("{name}.flow{i}"),
            channels,
            filter_channels,
            kernel,
            depth,
            spline,
        )?));
        flows.push(PredictorFlow::Flip);
    }
    Ok(flows)
}

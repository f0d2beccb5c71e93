use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::features::SPEAKER_DIM;
use crate::ndmath::layers::{Conv1d, Init, LayerNorm, Linear};
use crate::ndmath::{Array, Graph, ParamStore, Real, Var};
use crate::splineflows::{coupling_chain, flows_forward, flows_inverse, DdsConv, PredictorFlow, SplineConfig};
use crate::Rng;

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_7;

fn standard_normal<F: Real>(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Array<F> {
    Array::from_fn(rows, cols, |_, _| {
        let e: f64 = StandardNormal.sample(rng);
        F::c(e * scale)
    })
}

/// `Σ 0.5·(ln 2π + z²)` as a graph scalar.
pub(crate) fn gaussian_nll<F: Real>(g: &mut Graph<F>, z: Var) -> Var {
    let n = g.value(z).len() as f64;
    let sq = g.square(z);
    let s = g.sum(sq);
    let half = g.scale(s, 0.5);
    g.add_scalar(half, HALF_LOG_2PI * n)
}

/// Conditioning trunk shared by both stochastic predictors: a 1x1 input
/// projection of the stop-gradient token states, plus the projected speaker
/// vector, through a dilated depth-separable stack and a 1x1 output.
#[derive(Clone, Debug)]
pub struct CondNet {
    pre: Conv1d,
    speaker: Linear,
    convs: DdsConv,
    proj: Conv1d,
}

impl CondNet {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        rng: &mut Rng,
        name: &str,
        input: usize,
        filter: usize,
        kernel: usize,
        depth: usize,
    ) -> Self {
        Self {
            pre: Conv1d::pointwise(store, rng, &format!("{name}.pre"), input, filter, Init::FanIn),
            speaker: Linear::new(store, rng, &format!("{name}.speaker"), SPEAKER_DIM, filter, Init::FanIn),
            convs: DdsConv::new(store, rng, &format!("{name}.convs"), filter, kernel, depth),
            proj: Conv1d::pointwise(store, rng, &format!("{name}.proj"), filter, filter, Init::FanIn),
        }
    }

    /// `hidden` is detached here, so nothing flows back into the encoder.
    pub fn forward<F: Real>(&self, g: &mut Graph<F>, hidden: Var, speaker: Var) -> Result<Var> {
        let x = g.stop_gradient(hidden);
        let x = self.pre.forward(g, x);
        let s = self.speaker.forward(g, speaker);
        let x = g.add(x, s);
        let x = self.convs.forward(g, x, None)?;
        Ok(self.proj.forward(g, x))
    }
}

/// Two-stage flow model of token durations. The main flows map
/// `[log d̃, ν]` to Gaussian noise; the post flows, used only in training,
/// form the variational posterior over the dequantization offset and the
/// auxiliary channel `ν`.
#[derive(Clone, Debug)]
pub struct StochasticDurationPredictor {
    cond: CondNet,
    post_pre: Conv1d,
    post_convs: DdsConv,
    post_proj: Conv1d,
    pub flows: Vec<PredictorFlow>,
    pub post_flows: Vec<PredictorFlow>,
}

impl StochasticDurationPredictor {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        rng: &mut Rng,
        name: &str,
        input: usize,
        filter: usize,
        kernel: usize,
        depth: usize,
        n_flows: usize,
        spline: SplineConfig,
    ) -> Result<Self> {
        Ok(Self {
            cond: CondNet::new(store, rng, &format!("{name}.cond"), input, filter, kernel, depth),
            post_pre: Conv1d::pointwise(store, rng, &format!("{name}.post_pre"), 1, filter, Init::FanIn),
            post_convs: DdsConv::new(store, rng, &format!("{name}.post_convs"), filter, kernel, depth),
            post_proj: Conv1d::pointwise(store, rng, &format!("{name}.post_proj"), filter, filter, Init::FanIn),
            flows: coupling_chain(store, rng, &format!("{name}.flows"), 2, filter, kernel, depth, n_flows, spline)?,
            post_flows: coupling_chain(store, rng, &format!("{name}.post_flows"), 2, filter, kernel, depth, n_flows, spline)?,
        })
    }

    /// Negative variational lower bound on `log p(d)`, averaged per token.
    pub fn loss<F: Real>(
        &self,
        g: &mut Graph<F>,
        hidden: Var,
        speaker: Var,
        durations: &[usize],
        rng: &mut Rng,
    ) -> Result<Var> {
        let n = g.cols(hidden);
        if durations.len() != n || durations.contains(&0) {
            return Err(Error::invalid(
                "duration loss",
                format!("need {n} durations, all >= 1, got {durations:?}"),
            ));
        }
        let x = self.cond.forward(g, hidden, speaker)?;
        let w_row: Vec<F> = durations.iter().map(|&d| F::c(d as f64)).collect();
        let w = g.constant(Array::row(&w_row));

        // posterior q(u, ν | d)
        let h = self.post_pre.forward(g, w);
        let h = self.post_convs.forward(g, h, None)?;
        let h = self.post_proj.forward(g, h);
        let post_cond = g.add(x, h);
        let e_q_val = standard_normal::<F>(2, n, 1.0, rng);
        let e_q = g.constant(e_q_val);
        let (z_q, logdet_q) = flows_forward(g, &self.post_flows, e_q, Some(post_cond))?;
        let z_u = g.slice_rows(z_q, 0, 1);
        let z1 = g.slice_rows(z_q, 1, 2);
        let u = g.sigmoid(z_u);
        let z0 = g.sub(w, u);
        let ls_pos = g.log_sigmoid(z_u);
        let neg = g.neg(z_u);
        let ls_neg = g.log_sigmoid(neg);
        let ls = g.add(ls_pos, ls_neg);
        let ls = g.sum(ls);
        let logdet_q = g.add(logdet_q, ls);
        let nq = gaussian_nll(g, e_q);
        let logq_neg = g.add(nq, logdet_q);
        let logq = g.neg(logq_neg);

        // main flows on [log(d − u), ν]
        let (z0, logdet_log) = PredictorFlow::Log.forward(g, z0, None)?;
        let z = g.concat_rows(&[z0, z1]);
        let (z, logdet) = flows_forward(g, &self.flows, z, Some(x))?;
        let logdet = g.add(logdet, logdet_log);
        let nll = gaussian_nll(g, z);
        let nll = g.sub(nll, logdet);
        let total = g.add(nll, logq);
        Ok(g.scale(total, 1.0 / n as f64))
    }

    /// Log-durations drawn by inverting the main flows from scaled noise.
    /// The first spline coupling only transforms `ν` given `log d̃`, so it is
    /// skipped; the marginal of `log d̃` is unchanged.
    pub fn sample_log<F: Real>(
        &self,
        g: &mut Graph<F>,
        hidden: Var,
        speaker: Var,
        temperature: f64,
        rng: &mut Rng,
    ) -> Result<Vec<f64>> {
        let n = g.cols(hidden);
        let x = self.cond.forward(g, hidden, speaker)?;
        let mut flows: Vec<&PredictorFlow> = self.flows.iter().collect();
        if flows.len() > 2 {
            flows.remove(1);
        }
        let z = g.constant(standard_normal::<F>(2, n, temperature, rng));
        let y = flows_inverse(g, &flows, z, Some(x))?;
        Ok(g.value(y).row_slice(0).iter().map(|v| v.f64()).collect())
    }

    /// `d_i = max(1, ⌈exp(log d̃_i)⌉)`.
    pub fn sample<F: Real>(
        &self,
        g: &mut Graph<F>,
        hidden: Var,
        speaker: Var,
        temperature: f64,
        rng: &mut Rng,
    ) -> Result<Vec<usize>> {
        let logw = self.sample_log(g, hidden, speaker, temperature, rng)?;
        Ok(logw.iter().map(|&l| ceil_duration(l)).collect())
    }
}

fn ceil_duration(logw: f64) -> usize {
    let d = logw.exp().ceil();
    if d.is_finite() {
        (d as usize).max(1)
    } else {
        1
    }
}

/// Two conv layers with ReLU and layer norm, then a 1x1 projection to one
/// log-duration per token; trained by squared error against `ln d`.
#[derive(Clone, Debug)]
pub struct DurationRegressor {
    speaker: Linear,
    conv1: Conv1d,
    norm1: LayerNorm,
    conv2: Conv1d,
    norm2: LayerNorm,
    proj: Conv1d,
}

impl DurationRegressor {
    pub fn new<F: Real>(store: &mut ParamStore<F>, rng: &mut Rng, name: &str, input: usize, filter: usize, kernel: usize) -> Self {
        Self {
            speaker: Linear::new(store, rng, &format!("{name}.speaker"), SPEAKER_DIM, input, Init::FanIn),
            conv1: Conv1d::new(store, rng, &format!("{name}.conv1"), input, filter, kernel, 1, 1, Init::FanIn),
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), filter),
            conv2: Conv1d::new(store, rng, &format!("{name}.conv2"), filter, filter, kernel, 1, 1, Init::FanIn),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), filter),
            proj: Conv1d::pointwise(store, rng, &format!("{name}.proj"), filter, 1, Init::FanIn),
        }
    }

    /// Predicted `ln d`, `[1 × N]`.
    pub fn forward<F: Real>(&self, g: &mut Graph<F>, hidden: Var, speaker: Var) -> Var {
        let x = g.stop_gradient(hidden);
        let s = self.speaker.forward(g, speaker);
        let mut h = g.add(x, s);
        for (conv, norm) in [(&self.conv1, &self.norm1), (&self.conv2, &self.norm2)] {
            h = conv.forward(g, h);
            h = g.clamp_min(h, 0.0);
            h = norm.forward(g, h);
        }
        self.proj.forward(g, h)
    }

    /// Mean squared error in the log domain.
    pub fn loss<F: Real>(&self, g: &mut Graph<F>, hidden: Var, speaker: Var, durations: &[usize]) -> Result<Var> {
        let n = g.cols(hidden);
        if durations.len() != n || durations.contains(&0) {
            return Err(Error::invalid(
                "duration loss",
                format!("need {n} durations, all >= 1, got {durations:?}"),
            ));
        }
        let pred = self.forward(g, hidden, speaker);
        let target: Vec<F> = durations.iter().map(|&d| F::c((d as f64).ln())).collect();
        let t = g.constant(Array::row(&target));
        let diff = g.sub(pred, t);
        let sq = g.square(diff);
        Ok(g.mean(sq))
    }

    /// `d_i = max(1, round(exp(ŷ_i)))`.
    pub fn predict<F: Real>(&self, g: &mut Graph<F>, hidden: Var, speaker: Var) -> Vec<usize> {
        let pred = self.forward(g, hidden, speaker);
        g.value(pred)
            .data()
            .iter()
            .map(|v| {
                let d = v.f64().exp().round();
                if d.is_finite() {
                    (d as usize).max(1)
                } else {
                    1
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceil_rule() {
        assert_eq!(ceil_duration(3.5f64.ln()), 4);
        assert_eq!(ceil_duration(4f64.ln()), 4);
        assert_eq!(ceil_duration(-10.0), 1);
        assert_eq!(ceil_duration(f64::NAN), 1);
    }
}

//! Parameterized building blocks shared by the encoder, decoder and predictors.
//!
//! Weights start from `N(0, 1/fan_in)`; biases, layer-norm shifts and
//! explicitly zero-initialized projections start at zero.

use rand::Rng as _;
use rand_distr::StandardNormal;

use super::array::{Array, Real};
use super::graph::{Graph, Var};
use super::ops::Padding;
use super::params::{ParamId, ParamStore};
use crate::Rng;

pub fn normal_array<F: Real>(rng: &mut Rng, shape: &[usize], std: f64) -> Array<F> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| F::c(rng.sample::<f64, _>(StandardNormal) * std))
        .collect();
    Array::from_vec(shape, data).expect("normal_array")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    FanIn,
    Zero,
    /// Normal with the given standard deviation.
    Std(f64),
}

/// 1-D convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub dilation: usize,
    pub groups: usize,
    pub padding: Padding,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        rng: &mut Rng,
        name: &str,
        channels_in: usize,
        channels_out: usize,
        width: usize,
        dilation: usize,
        groups: usize,
        init: Init,
    ) -> Self {
        let fan_in = channels_in / groups * width;
        let shape = [channels_out, fan_in];
        let weight = match init {
            Init::FanIn => normal_array(rng, &shape, (1.0 / fan_in as f64).sqrt()),
            Init::Std(s) => normal_array(rng, &shape, s),
            Init::Zero => Array::zeros(&shape),
        };
        Self {
            weight: store.add(&format!("{name}.weight"), weight),
            bias: store.add(&format!("{name}.bias"), Array::zeros(&[channels_out, 1])),
            dilation,
            groups,
            padding: Padding::Same,
        }
    }

    /// Pointwise (width 1) convolution.
    pub fn pointwise<F: Real>(
        store: &mut ParamStore<F>,
        rng: &mut Rng,
        name: &str,
        channels_in: usize,
        channels_out: usize,
        init: Init,
    ) -> Self {
        Self::new(store, rng, name, channels_in, channels_out, 1, 1, 1, init)
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<F>, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.conv1d(x, w, self.dilation, self.groups, self.padding);
        g.add(y, b)
    }
}

/// Weight-normalized convolution: `w = gain · v / ‖v‖` per output channel.
#[derive(Clone, Debug)]
pub struct WnConv1d {
    pub direction: ParamId,
    pub gain: ParamId,
    pub bias: ParamId,
    pub dilation: usize,
}

impl WnConv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        rng: &mut Rng,
        name: &str,
        channels_in: usize,
        channels_out: usize,
        width: usize,
        dilation: usize,
    ) -> Self {
        let fan_in = channels_in * width;
        let v: Array<F> = normal_array(rng, &[channels_out, fan_in], (1.0 / fan_in as f64).sqrt());
        let gain = Array::from_fn(channels_out, 1, |r, _| {
            v.row_slice(r).iter().map(|&x| x * x).sum::<F>().sqrt()
        });
        Self {
            direction: store.add(&format!("{name}.v"), v),
            gain: store.add(&format!("{name}.g"), gain),
            bias: store.add(&format!("{name}.bias"), Array::zeros(&[channels_out, 1])),
            dilation,
        }
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<F>, x: Var) -> Var {
        let v = g.param(self.direction);
        let gain = g.param(self.gain);
        let b = g.param(self.bias);
        let sq = g.square(v);
        let ss = g.sum_cols(sq);
        let norm = g.sqrt(ss);
        let unit = g.div(v, norm);
        let w = g.mul(unit, gain);
        let y = g.conv1d(x, w, self.dilation, 1, Padding::Same);
        g.add(y, b)
    }
}

/// Layer normalization over channels, independently per frame.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(&format!("{name}.gamma"), Array::ones(&[channels, 1])),
            beta: store.add(&format!("{name}.beta"), Array::zeros(&[channels, 1])),
        }
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<F>, x: Var) -> Var {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm_rows(x, gamma, beta, 1e-5)
    }
}

/// Dense map of a `[n × 1]` column (e.g. a speaker vector) to `[out × 1]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        rng: &mut Rng,
        name: &str,
        inputs: usize,
        outputs: usize,
        init: Init,
    ) -> Self {
        let shape = [outputs, inputs];
        let weight = match init {
            Init::FanIn => normal_array(rng, &shape, (1.0 / inputs as f64).sqrt()),
            Init::Std(s) => normal_array(rng, &shape, s),
            Init::Zero => Array::zeros(&shape),
        };
        Self {
            weight: store.add(&format!("{name}.weight"), weight),
            bias: store.add(&format!("{name}.bias"), Array::zeros(&[outputs, 1])),
        }
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<F>, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(w, x);
        g.add(y, b)
    }
}

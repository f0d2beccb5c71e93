use crate::error::{Error, Result};
use crate::ndmath::layers::{Conv1d, Init, Linear, WnConv1d};
use crate::ndmath::{Array, Graph, ParamId, ParamStore, Real, Var};
use crate::Rng;

use super::Cond;

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingConfig {
    pub channels: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub layers: usize,
    /// Speaker vector length, 0 for none.
    pub speaker_dim: usize,
    /// Pitch conditioning channels, 0 for none.
    pub pitch_dim: usize,
    /// Standard deviation of the output projection at init.
    pub end_init_std: f64,
}

/// Affine coupling whose conditioner is a gated, weight-normalized conv
/// stack over the pass-through half. Speaker and pitch enter every layer
/// through their own projections added before the gate.
#[derive(Clone, Debug)]
pub struct Coupling {
    pub config: CouplingConfig,
    start: WnConv1d,
    in_layers: Vec<WnConv1d>,
    res_layers: Vec<WnConv1d>,
    speaker_proj: Vec<Linear>,
    pitch_proj: Vec<Conv1d>,
    pub end: Conv1d,
    /// Per-channel bound on `log_s`: `log_s = scale ⊙ tanh(raw)`.
    pub log_s_scale: ParamId,
}

impl Coupling {
    pub fn new<F: Real>(store: &mut ParamStore<F>, rng: &mut Rng, name: &str, config: CouplingConfig) -> Result<Self> {
        let c = config.channels;
        if c % 2 != 0 || c == 0 {
            return Err(Error::invalid("coupling", format!("channel count must be even, got {c}")));
        }
        let (h, half) = (config.hidden, c / 2);
        let start = WnConv1d::new(store, rng, &format!("{name}.start"), half, h, 1, 1);
        let mut in_layers = Vec::new();
        let mut res_layers = Vec::new();
        let mut speaker_proj = Vec::new();
        let mut pitch_proj = Vec::new();
        for i in 0..config.layers {
            in_layers.push(WnConv1d::new(store, rng, &format!("{name}.in{i}"), h, 2 * h, config.kernel, 1));
            res_layers.push(WnConv1d::new(store, rng, &format!("{name}.res{i}"), h, h, 1, 1));
            if config.speaker_dim > 0 {
                speaker_proj.push(Linear::new(store, rng, &format!("{name}.spk{i}"), config.speaker_dim, 2 * h, Init::FanIn));
            }
            if config.pitch_dim > 0 {
                pitch_proj.push(Conv1d::pointwise(store, rng, &format!("{name}.pitch{i}"), config.pitch_dim, 2 * h, Init::FanIn));
            }
        }
        let end = Conv1d::pointwise(store, rng, &format!("{name}.end"), h, c, Init::Std(config.end_init_std));
        let log_s_scale = store.add(&format!("{name}.log_s_scale"), Array::ones(&[half, 1]));
        Ok(Self {
            config,
            start,
            in_layers,
            res_layers,
            speaker_proj,
            pitch_proj,
            end,
            log_s_scale,
        })
    }

    fn check_cond<F: Real>(&self, g: &Graph<F>, x: Var, cond: &Cond) -> Result<()> {
        if g.rows(x) != self.config.channels {
            return Err(Error::ShapeMismatch {
                op: "coupling",
                left: vec![self.config.channels, g.cols(x)],
                right: g.shape(x).to_vec(),
            });
        }
        if self.config.pitch_dim > 0 {
            let p = cond.pitch.ok_or_else(|| Error::invalid("coupling", "pitch conditioning missing"))?;
            if g.cols(p) != g.cols(x) || g.rows(p) != self.config.pitch_dim {
                return Err(Error::ShapeMismatch {
                    op: "coupling pitch conditioning",
                    left: g.shape(x).to_vec(),
                    right: g.shape(p).to_vec(),
                });
            }
        }
        if self.config.speaker_dim > 0 {
            let s = cond.speaker.ok_or_else(|| Error::invalid("coupling", "speaker conditioning missing"))?;
            if g.shape(s) != [self.config.speaker_dim, 1] {
                return Err(Error::ShapeMismatch {
                    op: "coupling speaker conditioning",
                    left: vec![self.config.speaker_dim, 1],
                    right: g.shape(s).to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Conditioner output `(log_s, t)` from the pass-through half.
    fn conditioner<F: Real>(&self, g: &mut Graph<F>, xa: Var, cond: &Cond) -> (Var, Var) {
        let h = self.config.hidden;
        let half = self.config.channels / 2;
        let mut hid = self.start.forward(g, xa);
        for i in 0..self.config.layers {
            let mut pre = self.in_layers[i].forward(g, hid);
            if let (Some(proj), Some(s)) = (self.speaker_proj.get(i), cond.speaker) {
                let sp = proj.forward(g, s);
                pre = g.add(pre, sp);
            }
            if let (Some(proj), Some(p)) = (self.pitch_proj.get(i), cond.pitch) {
                let pp = proj.forward(g, p);
                pre = g.add(pre, pp);
            }
            let a = g.slice_rows(pre, 0, h);
            let b = g.slice_rows(pre, h, 2 * h);
            let ta = g.tanh(a);
            let sb = g.sigmoid(b);
            let acts = g.mul(ta, sb);
            let res = self.res_layers[i].forward(g, acts);
            hid = g.add(hid, res);
        }
        let out = self.end.forward(g, hid);
        let raw = g.slice_rows(out, 0, half);
        let t = g.slice_rows(out, half, 2 * half);
        let th = g.tanh(raw);
        let scale = g.param(self.log_s_scale);
        (g.mul(th, scale), t)
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<F>, x: Var, cond: &Cond) -> Result<(Var, Var)> {
        self.check_cond(g, x, cond)?;
        let half = self.config.channels / 2;
        let xa = g.slice_rows(x, 0, half);
        let xb = g.slice_rows(x, half, 2 * half);
        let (log_s, t) = self.conditioner(g, xa, cond);
        let s = g.exp(log_s);
        let scaled = g.mul(xb, s);
        let yb = g.add(scaled, t);
        let y = g.concat_rows(&[xa, yb]);
        Ok((y, g.sum(log_s)))
    }

    pub fn inverse<F: Real>(&self, g: &mut Graph<F>, y: Var, cond: &Cond) -> Result<Var> {
        self.check_cond(g, y, cond)?;
        let half = self.config.channels / 2;
        let ya = g.slice_rows(y, 0, half);
        let yb = g.slice_rows(y, half, 2 * half);
        let (log_s, t) = self.conditioner(g, ya, cond);
        let shifted = g.sub(yb, t);
        let neg = g.neg(log_s);
        let inv = g.exp(neg);
        let xb = g.mul(shifted, inv);
        Ok(g.concat_rows(&[ya, xb]))
    }

    /// Zeroes the output projection so the layer is the identity map.
    pub fn zero_output<F: Real>(&self, store: &mut ParamStore<F>) {
        for id in [self.end.weight, self.end.bias] {
            let shape = store.value(id).shape().to_vec();
            store.set_value(id, Array::zeros(&shape));
        }
    }
}

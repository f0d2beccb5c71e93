use rand_distr::{Distribution, Normal, StandardNormal};

use super::duration::{gaussian_nll, CondNet};
use crate::error::{Error, Result};
use crate::features::pitch::{MAX_F0_HZ, MIN_F0_HZ};
use crate::features::PitchContour;
use crate::ndmath::{Array, Graph, ParamStore, Real, Var};
use crate::splineflows::{coupling_chain, flows_forward, flows_inverse, padding_log_density, PredictorFlow, SplineConfig};
use crate::Rng;

/// Log-F0 is modelled as `u = (ln f0 − CENTER) / SCALE`.
pub const PITCH_CENTER: f64 = 5.075_173_815_233_827; // ln 160
pub const PITCH_SCALE: f64 = 0.35;
/// Encoded value of unvoiced frames, decoded below `ln 50 Hz`.
pub const UNVOICED_CODE: f64 = -4.0;
/// Standard deviation of the training-time jitter on unvoiced codes.
pub const UNVOICED_JITTER: f64 = 0.1;

pub fn encode_log_f0(log_f0: f32) -> f64 {
    if log_f0 == 0.0 {
        UNVOICED_CODE
    } else {
        (log_f0 as f64 - PITCH_CENTER) / PITCH_SCALE
    }
}

/// Inverse of [`encode_log_f0`]; values below `ln 50` become unvoiced (0) and
/// values above `ln 600` are clamped.
pub fn decode_log_f0(u: f64) -> f32 {
    let lf = PITCH_CENTER + PITCH_SCALE * u;
    if !lf.is_finite() || lf < MIN_F0_HZ.ln() {
        0.0
    } else {
        lf.min(MAX_F0_HZ.ln()) as f32
    }
}

/// Per-frame flow model of log-F0, conditioned on duration-expanded token
/// states and the speaker. The scalar is augmented with `padding` Gaussian
/// channels so spline couplings can split it.
#[derive(Clone, Debug)]
pub struct PitchPredictor {
    pub padding: usize,
    cond: CondNet,
    pub flows: Vec<PredictorFlow>,
}

impl PitchPredictor {
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
        padding: usize,
        spline: SplineConfig,
    ) -> Result<Self> {
        Ok(Self {
            padding,
            cond: CondNet::new(store, rng, &format!("{name}.cond"), input, filter, kernel, depth),
            flows: coupling_chain(store, rng, &format!("{name}.flows"), 1 + padding, filter, kernel, depth, n_flows, spline)?,
        })
    }

    /// Augmented-space negative log-likelihood minus the padding entropy
    /// term, averaged per frame. `hidden` is `[H × T]` (already expanded).
    pub fn loss<F: Real>(
        &self,
        g: &mut Graph<F>,
        hidden: Var,
        speaker: Var,
        contour: &PitchContour,
        rng: &mut Rng,
    ) -> Result<Var> {
        let t = g.cols(hidden);
        if contour.frames() != t {
            return Err(Error::invalid(
                "pitch loss",
                format!("contour has {} frames, conditioning has {t}", contour.frames()),
            ));
        }
        let x = self.cond.forward(g, hidden, speaker)?;
        let jitter = Normal::new(0.0, UNVOICED_JITTER).expect("valid std");
        let payload: Vec<F> = contour
            .log_f0
            .iter()
            .map(|&v| {
                let u = encode_log_f0(v);
                F::c(if v == 0.0 { u + jitter.sample(rng) } else { u })
            })
            .collect();
        let pad = Array::from_fn(self.padding, t, |_, _| {
            let e: f64 = StandardNormal.sample(rng);
            F::c(e)
        });
        let logq = padding_log_density(&pad);
        let y = Array::concat_rows(&[&Array::row(&payload), &pad])?;
        let y = g.constant(y);
        let (z, logdet) = flows_forward(g, &self.flows, y, Some(x))?;
        let nll = gaussian_nll(g, z);
        let nll = g.sub(nll, logdet);
        let total = g.add_scalar(nll, logq);
        Ok(g.scale(total, 1.0 / t as f64))
    }

    /// Samples a contour by inverting the flows from noise scaled by
    /// `temperature`. The first spline coupling leaves the payload row
    /// untouched, so it is skipped.
    pub fn sample<F: Real>(
        &self,
        g: &mut Graph<F>,
        hidden: Var,
        speaker: Var,
        temperature: f64,
        rng: &mut Rng,
    ) -> Result<PitchContour> {
        let t = g.cols(hidden);
        let x = self.cond.forward(g, hidden, speaker)?;
        let mut flows: Vec<&PredictorFlow> = self.flows.iter().collect();
        if flows.len() > 2 {
            flows.remove(1);
        }
        let z = Array::from_fn(1 + self.padding, t, |_, _| {
            let e: f64 = StandardNormal.sample(rng);
            F::c(e * temperature)
        });
        let z = g.constant(z);
        let y = flows_inverse(g, &flows, z, Some(x))?;
        let values: Vec<f32> = g.value(y).row_slice(0).iter().map(|u| decode_log_f0(u.f64())).collect();
        Ok(PitchContour::from_log_f0(&values))
    }
}

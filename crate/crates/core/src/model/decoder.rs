use crate::error::{Error, Result};
use crate::features::{PitchContour, N_MELS, SPEAKER_DIM};
use crate::flows::{squeeze, unsqueeze, ActNorm, Cond, Coupling, CouplingConfig, FlowLayer, FlowStack, Inv1x1};
use crate::ndmath::layers::{Conv1d, Init};
use crate::ndmath::{Array, Graph, ParamStore, Real, Var};
use crate::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderConfig {
    pub blocks: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub layers: usize,
    pub squeeze: usize,
    pub pitch: bool,
    pub pitch_kernel: usize,
    pub coupling_init_std: f64,
}

/// Squeeze, then `blocks` × (actnorm, invertible 1x1, coupling), then
/// unsqueeze. With pitch enabled the log-F0 contour is projected to 80
/// channels by a 1-D convolution, squeezed alongside the Mel frames and fed
/// to every coupling.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub config: DecoderConfig,
    pub flows: FlowStack,
    pub pitch_proj: Option<Conv1d>,
}

impl Decoder {
    pub fn new<F: Real>(store: &mut ParamStore<F>, rng: &mut Rng, name: &str, config: DecoderConfig) -> Result<Self> {
        let c = N_MELS * config.squeeze;
        let coupling = CouplingConfig {
            channels: c,
            hidden: config.hidden,
            kernel: config.kernel,
            layers: config.layers,
            speaker_dim: SPEAKER_DIM,
            pitch_dim: if config.pitch { c } else { 0 },
            end_init_std: config.coupling_init_std,
        };
        let mut layers = Vec::new();
        for b in 0..config.blocks {
            layers.push(FlowLayer::ActNorm(ActNorm::new(store, &format!("{name}.block{b}.actnorm"), c)));
            layers.push(FlowLayer::Inv1x1(Inv1x1::new(store, rng, &format!("{name}.block{b}.inv"), c)));
            layers.push(FlowLayer::Coupling(Coupling::new(
                store,
                rng,
                &format!("{name}.block{b}.coupling"),
                coupling.clone(),
            )?));
        }
        let pitch_proj = config.pitch.then(|| {
            Conv1d::new(store, rng, &format!("{name}.pitch_proj"), 1, N_MELS, config.pitch_kernel, 1, 1, Init::FanIn)
        });
        Ok(Self {
            config,
            flows: FlowStack { layers },
            pitch_proj,
        })
    }

    /// Projected and squeezed pitch features `[80r × ⌊T/r⌋]`.
    pub fn pitch_condition<F: Real>(&self, g: &mut Graph<F>, contour: &PitchContour, frames: usize) -> Result<Var> {
        let proj = self
            .pitch_proj
            .as_ref()
            .ok_or_else(|| Error::invalid("pitch_condition", "decoder has no pitch conditioning"))?;
        if contour.frames() != frames {
            return Err(Error::invalid(
                "pitch_condition",
                format!("contour has {} frames, Mel has {frames}", contour.frames()),
            ));
        }
        let row: Vec<F> = contour.log_f0.iter().map(|&v| F::c(v as f64)).collect();
        let x = g.constant(Array::row(&row));
        let p = proj.forward(g, x);
        squeeze(g, p, self.config.squeeze)
    }

    fn cond(&self, speaker: Var, pitch: Option<Var>) -> Result<Cond> {
        if self.config.pitch != pitch.is_some() {
            return Err(Error::invalid(
                "decoder",
                if self.config.pitch { "pitch conditioning required" } else { "decoder takes no pitch conditioning" },
            ));
        }
        Ok(Cond {
            speaker: Some(speaker),
            pitch,
        })
    }

    /// Mel `[80 × T]` (T a multiple of the squeeze ratio) to `(z [80 × T], log-det)`.
    pub fn forward<F: Real>(&self, g: &mut Graph<F>, mel: Var, speaker: Var, pitch: Option<Var>) -> Result<(Var, Var)> {
        let cond = self.cond(speaker, pitch)?;
        let r = self.config.squeeze;
        if g.cols(mel) % r != 0 {
            return Err(Error::invalid(
                "decoder",
                format!("frame count {} is not a multiple of the squeeze ratio {r}", g.cols(mel)),
            ));
        }
        let x = squeeze(g, mel, r)?;
        let (z, ld) = self.flows.forward(g, x, &cond)?;
        Ok((unsqueeze(g, z, r)?, ld))
    }

    pub fn inverse<F: Real>(&self, g: &mut Graph<F>, z: Var, speaker: Var, pitch: Option<Var>) -> Result<Var> {
        let cond = self.cond(speaker, pitch)?;
        let r = self.config.squeeze;
        let x = squeeze(g, z, r)?;
        let mel = self.flows.inverse(g, x, &cond)?;
        unsqueeze(g, mel, r)
    }
}

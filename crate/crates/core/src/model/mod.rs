//! The trainable acoustic model: conv text encoder, flow decoder with speaker
//! and pitch conditioning, duration model (deterministic regressor or
//! stochastic flow) and the stochastic pitch predictor, joined by a single
//! maximum-likelihood objective.
//!
//! Weights are drawn from `N(0, 1/fan_in)` and biases start at zero, except
//! the spline projections, which start at zero so every spline coupling is
//! the identity, and the coupling output projections, whose scale is
//! `coupling_init_std`.

pub mod checkpoint;
mod decoder;
mod duration;
mod encoder;
mod pitch;

pub use checkpoint::{ArrayContainer, Checkpoint};
pub use decoder::{Decoder, DecoderConfig};
pub use duration::{CondNet, DurationRegressor, StochasticDurationPredictor};
pub use encoder::{Encoder, EncoderOutput};
pub use pitch::{decode_log_f0, encode_log_f0, PitchPredictor, PITCH_CENTER, PITCH_SCALE, UNVOICED_CODE};

use rand_distr::{Distribution, StandardNormal};

use crate::align::{expand_indices, likelihoods, mas};
use crate::config::{ModelConfig, Temperatures, Variant};
use crate::error::{Error, Result};
use crate::features::{estimate_f0_from_mel, MelSpectrogram, PitchContour, SpeakerVector, TokenSequence, N_MELS};
use crate::ndmath::{Array, Graph, ParamStore, Real, Var};
use crate::Rng;

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_7;

/// One training item.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub tokens: TokenSequence,
    /// `[80 × T]` log-Mel.
    pub mel: Array<f32>,
    pub contour: PitchContour,
    pub speaker: SpeakerVector,
}

impl Example {
    pub fn new(tokens: TokenSequence, mel: MelSpectrogram, contour: PitchContour, speaker: SpeakerVector) -> Result<Self> {
        if mel.frames() != contour.frames() {
            return Err(Error::invalid(
                "Example",
                format!("Mel has {} frames, contour has {}", mel.frames(), contour.frames()),
            ));
        }
        Ok(Self {
            tokens,
            mel: mel.values,
            contour,
            speaker,
        })
    }

    pub fn frames(&self) -> usize {
        self.mel.cols()
    }
}

/// Graph handles of the loss terms for one example.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub mel: Var,
    pub duration: Var,
    pub pitch: Option<Var>,
    pub total: Var,
}

/// Loss term values, averaged over a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub mel: f64,
    pub duration: f64,
    pub pitch: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.mel.is_finite() && self.duration.is_finite() && self.pitch.is_finite()
    }
}

#[derive(Clone, Debug)]
pub enum DurationModel {
    Regressor(DurationRegressor),
    Stochastic(StochasticDurationPredictor),
}

/// Output of [`Model::synthesize`].
#[derive(Clone, Debug, PartialEq)]
pub struct Synthesis {
    pub mel: MelSpectrogram,
    pub contour: PitchContour,
    pub durations: Vec<usize>,
}

/// How training assigns frames to tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Alignment {
    /// Monotonic alignment search against the current prior means.
    Search,
    /// Frames split as evenly as possible.
    Even,
}

/// `frames` split over `tokens` as evenly as possible.
pub fn even_durations(tokens: usize, frames: usize) -> Vec<usize> {
    (0..tokens).map(|i| (i + 1) * frames / tokens - i * frames / tokens).collect()
}

/// Repeats column `i` of `per_token` `durations[i]` times.
pub fn expand_by_duration<F: Real>(per_token: &Array<F>, durations: &[usize]) -> Result<Array<F>> {
    if durations.len() != per_token.cols() || durations.contains(&0) {
        return Err(Error::invalid(
            "expand_by_duration",
            format!("need {} durations, all >= 1, got {durations:?}", per_token.cols()),
        ));
    }
    let idx = expand_indices(durations);
    Ok(Array::from_fn(per_token.rows(), idx.len(), |r, c| per_token.get(r, idx[c])))
}

/// `z = μ + T·ε` with `ε ~ N(0, I)`.
pub fn prior_sample<F: Real>(mu: &Array<F>, temperature: f64, rng: &mut Rng) -> Result<Array<F>> {
    if !(temperature >= 0.0) {
        return Err(Error::invalid("prior_sample", format!("temperature must be >= 0, got {temperature}")));
    }
    let data = mu
        .data()
        .iter()
        .map(|&m| {
            let e: f64 = StandardNormal.sample(rng);
            m + F::c(temperature * e)
        })
        .collect();
    Array::from_vec(mu.shape(), data)
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub duration: DurationModel,
    pub pitch: Option<PitchPredictor>,
}

impl Model {
    pub fn new<F: Real>(config: &ModelConfig, store: &mut ParamStore<F>, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let c = config;
        let spline = c.spline();
        let encoder = Encoder::new(store, rng, "encoder", c.hidden, c.encoder_layers, c.encoder_kernel);
        let decoder = Decoder::new(
            store,
            rng,
            "decoder",
            DecoderConfig {
                blocks: c.decoder_blocks,
                hidden: c.decoder_hidden,
                kernel: c.decoder_kernel,
                layers: c.decoder_layers,
                squeeze: c.squeeze,
                pitch: c.variant.has_pitch(),
                pitch_kernel: c.pitch_kernel,
                coupling_init_std: c.coupling_init_std,
            },
        )?;
        let duration = if c.variant.stochastic_duration() {
            DurationModel::Stochastic(StochasticDurationPredictor::new(
                store,
                rng,
                "duration",
                c.hidden,
                c.predictor_filter,
                c.predictor_kernel,
                c.predictor_depth,
                c.predictor_flows,
                spline,
            )?)
        } else {
            DurationModel::Regressor(DurationRegressor::new(store, rng, "duration", c.hidden, c.regressor_filter, 3))
        };
        let pitch = if c.variant.has_pitch() {
            Some(PitchPredictor::new(
                store,
                rng,
                "pitch",
                c.hidden,
                c.predictor_filter,
                c.predictor_kernel,
                c.predictor_depth,
                c.predictor_flows,
                c.pitch_padding,
                spline,
            )?)
        } else {
            None
        };
        Ok(Self {
            config: config.clone(),
            encoder,
            decoder,
            duration,
            pitch,
        })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    /// Frames used for training: the largest multiple of the squeeze ratio.
    pub fn usable_frames(&self, frames: usize) -> usize {
        frames - frames % self.config.squeeze
    }

    fn speaker_var<F: Real>(g: &mut Graph<F>, speaker: &SpeakerVector) -> Var {
        g.constant(speaker.to_column())
    }

    pub fn encode<F: Real>(&self, g: &mut Graph<F>, tokens: &TokenSequence, speaker: &SpeakerVector) -> Result<EncoderOutput> {
        if tokens.is_empty() {
            return Err(Error::invalid("encode", "empty token sequence"));
        }
        let s = Self::speaker_var(g, speaker);
        self.encoder.forward(g, tokens, s)
    }

    fn truncated_contour(contour: &PitchContour, frames: usize) -> PitchContour {
        let mut c = contour.clone();
        c.truncate(frames);
        c
    }

    /// Builds the per-example loss terms in `g`. Alignment durations come
    /// from monotonic alignment search on the current parameters.
    pub fn loss<F: Real>(&self, g: &mut Graph<F>, ex: &Example, rng: &mut Rng) -> Result<LossVars> {
        self.loss_with(g, ex, Alignment::Search, rng)
    }

    pub fn loss_with<F: Real>(&self, g: &mut Graph<F>, ex: &Example, alignment: Alignment, rng: &mut Rng) -> Result<LossVars> {
        let frames = self.usable_frames(ex.frames());
        if frames < ex.tokens.len() {
            return Err(Error::AlignmentTooShort {
                tokens: ex.tokens.len(),
                frames,
            });
        }
        let spk = Self::speaker_var(g, &ex.speaker);
        let enc = self.encoder.forward(g, &ex.tokens, spk)?;
        let mel = g.constant(ex.mel.slice_cols(0, frames).cast());
        let contour = Self::truncated_contour(&ex.contour, frames);
        let pitch_cond = match self.decoder.pitch_proj {
            Some(_) => Some(self.decoder.pitch_condition(g, &contour, frames)?),
            None => None,
        };
        let (z, logdet) = self.decoder.forward(g, mel, spk, pitch_cond)?;

        let durations = match alignment {
            Alignment::Search => mas(&likelihoods(g.value(enc.mu), g.value(z))?)?.durations,
            Alignment::Even => even_durations(ex.tokens.len(), frames),
        };
        let idx = expand_indices(&durations);
        let mu = g.gather_cols(enc.mu, &idx);
        let diff = g.sub(z, mu);
        let sq = g.square(diff);
        let s = g.sum(sq);
        let s = g.scale(s, 0.5);
        let elements = (N_MELS * frames) as f64;
        let s = g.add_scalar(s, HALF_LOG_2PI * elements);
        let nll = g.sub(s, logdet);
        let mel_loss = g.scale(nll, 1.0 / elements);

        let duration = match &self.duration {
            DurationModel::Regressor(r) => r.loss(g, enc.hidden, spk, &durations)?,
            DurationModel::Stochastic(p) => p.loss(g, enc.hidden, spk, &durations, rng)?,
        };
        let mut total = g.add(mel_loss, duration);
        let pitch = match &self.pitch {
            Some(p) => {
                let hidden = g.gather_cols(enc.hidden, &idx);
                let l = p.loss(g, hidden, spk, &contour, rng)?;
                total = g.add(total, l);
                Some(l)
            }
            None => None,
        };
        Ok(LossVars {
            mel: mel_loss,
            duration,
            pitch,
            total,
        })
    }

    /// Mean loss over `batch` as one graph scalar, plus the term values.
    pub fn batch_loss<F: Real>(&self, g: &mut Graph<F>, batch: &[&Example], rng: &mut Rng) -> Result<(Var, LossReport)> {
        self.batch_loss_with(g, batch, Alignment::Search, rng)
    }

    pub fn batch_loss_with<F: Real>(
        &self,
        g: &mut Graph<F>,
        batch: &[&Example],
        alignment: Alignment,
        rng: &mut Rng,
    ) -> Result<(Var, LossReport)> {
        if batch.is_empty() {
            return Err(Error::invalid("batch_loss", "empty batch"));
        }
        let mut total = g.scalar(0.0);
        let mut report = LossReport::default();
        for ex in batch {
            let l = self.loss_with(g, ex, alignment, rng)?;
            total = g.add(total, l.total);
            report.mel += g.value(l.mel).data()[0].f64();
            report.duration += g.value(l.duration).data()[0].f64();
            if let Some(p) = l.pitch {
                report.pitch += g.value(p).data()[0].f64();
            }
        }
        let n = batch.len() as f64;
        let total = g.scale(total, 1.0 / n);
        report.mel /= n;
        report.duration /= n;
        report.pitch /= n;
        report.total = g.value(total).data()[0].f64();
        Ok((total, report))
    }

    /// Data-dependent initialization of every decoder actnorm layer.
    pub fn init_actnorm<F: Real>(&self, store: &mut ParamStore<F>, batch: &[&Example]) -> Result<()> {
        let r = self.config.squeeze;
        self.decoder.flows.init_actnorm(store, |g| {
            let mut items = Vec::new();
            for ex in batch {
                let frames = self.usable_frames(ex.frames());
                let mel = g.constant(ex.mel.slice_cols(0, frames).cast());
                let x = crate::flows::squeeze(g, mel, r)?;
                let spk = Self::speaker_var(g, &ex.speaker);
                let pitch = match self.decoder.pitch_proj {
                    Some(_) => Some(self.decoder.pitch_condition(g, &Self::truncated_contour(&ex.contour, frames), frames)?),
                    None => None,
                };
                items.push((
                    x,
                    crate::flows::Cond {
                        speaker: Some(spk),
                        pitch,
                    },
                ));
            }
            Ok(items)
        })
    }

    /// Marks every actnorm layer initialized at its current (identity) values.
    pub fn mark_initialized<F: Real>(&self, store: &mut ParamStore<F>) {
        self.decoder.flows.mark_initialized(store);
    }

    /// Per-token durations at inference.
    pub fn sample_durations<F: Real>(
        &self,
        g: &mut Graph<F>,
        enc: &EncoderOutput,
        speaker: &SpeakerVector,
        temperature: f64,
        rng: &mut Rng,
    ) -> Result<Vec<usize>> {
        let spk = Self::speaker_var(g, speaker);
        Ok(match &self.duration {
            DurationModel::Regressor(r) => r.predict(g, enc.hidden, spk),
            DurationModel::Stochastic(p) => p.sample(g, enc.hidden, spk, temperature, rng)?,
        })
    }

    /// Full inference path: encode, sample durations, expand, sample pitch,
    /// sample the prior and invert the decoder. The last token's duration is
    /// extended so the frame count is a multiple of the squeeze ratio. Random
    /// draws happen in the order duration, pitch, prior. Systems without a
    /// pitch predictor report the contour estimated from the generated Mel.
    pub fn synthesize<F: Real>(
        &self,
        store: &ParamStore<F>,
        tokens: &TokenSequence,
        speaker: &SpeakerVector,
        temps: Temperatures,
        rng: &mut Rng,
    ) -> Result<Synthesis> {
        temps.validate()?;
        let mut g = Graph::new(store);
        let enc = self.encode(&mut g, tokens, speaker)?;
        let mut durations = self.sample_durations(&mut g, &enc, speaker, temps.duration, rng)?;
        let r = self.config.squeeze;
        let total: usize = durations.iter().sum();
        if total % r != 0 {
            *durations.last_mut().expect("non-empty") += r - total % r;
        }
        let idx = expand_indices(&durations);
        let frames = idx.len();
        let spk = Self::speaker_var(&mut g, speaker);
        let sampled = match &self.pitch {
            Some(p) => {
                let hidden = g.gather_cols(enc.hidden, &idx);
                Some(p.sample(&mut g, hidden, spk, temps.pitch, rng)?)
            }
            None => None,
        };
        let pitch_cond = match &sampled {
            Some(c) => Some(self.decoder.pitch_condition(&mut g, c, frames)?),
            None => None,
        };
        let mu = expand_by_duration(g.value(enc.mu), &durations)?;
        let z = g.constant(prior_sample(&mu, temps.prior, rng)?);
        let mel = self.decoder.inverse(&mut g, z, spk, pitch_cond)?;
        let mel = g.value(mel).cast::<f32>();
        if !mel.all_finite() {
            return Err(Error::NonFinite("synthesized Mel".into()));
        }
        let mel = MelSpectrogram::new(mel)?;
        let contour = match sampled {
            Some(c) => c,
            None => estimate_f0_from_mel(&mel),
        };
        Ok(Synthesis { mel, contour, durations })
    }
}

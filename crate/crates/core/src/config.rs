//! Declarative run configuration: model shape, training, inference and data
//! sections, read from TOML. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::splineflows::SplineConfig;
use crate::synthcorpus::CorpusSpec;

/// The three systems of the ablation lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Deterministic duration regressor, no pitch predictor.
    Baseline,
    /// Stochastic duration predictor, no pitch predictor.
    Std,
    /// Stochastic duration and pitch predictors; pitch-conditioned decoder.
    Stdp,
}

impl Variant {
    pub fn has_pitch(self) -> bool {
        self == Variant::Stdp
    }

    pub fn stochastic_duration(self) -> bool {
        self != Variant::Baseline
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Std => "std",
            Variant::Stdp => "stdp",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Encoder embedding width.
    pub hidden: usize,
    pub encoder_layers: usize,
    pub encoder_kernel: usize,
    pub decoder_blocks: usize,
    pub decoder_hidden: usize,
    pub decoder_kernel: usize,
    /// Gated conv layers per coupling conditioner.
    pub decoder_layers: usize,
    pub squeeze: usize,
    /// Initial standard deviation of each coupling's output projection;
    /// 0 starts every coupling at the identity.
    pub coupling_init_std: f64,
    pub pitch_kernel: usize,
    pub predictor_filter: usize,
    pub predictor_kernel: usize,
    pub predictor_depth: usize,
    pub predictor_flows: usize,
    pub spline_bins: usize,
    pub spline_bound: f64,
    /// Augmentation channels stacked under the scalar log-F0.
    pub pitch_padding: usize,
    pub regressor_filter: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Stdp,
            hidden: 64,
            encoder_layers: 3,
            encoder_kernel: 5,
            decoder_blocks: 4,
            decoder_hidden: 64,
            decoder_kernel: 5,
            decoder_layers: 3,
            squeeze: 2,
            coupling_init_std: 0.0,
            pitch_kernel: 3,
            predictor_filter: 64,
            predictor_kernel: 3,
            predictor_depth: 3,
            predictor_flows: 4,
            spline_bins: 10,
            spline_bound: 5.0,
            pitch_padding: 1,
            regressor_filter: 64,
        }
    }
}

impl ModelConfig {
    pub fn spline(&self) -> SplineConfig {
        SplineConfig {
            bins: self.spline_bins,
            bound: self.spline_bound,
            ..SplineConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden", self.hidden),
            ("encoder_kernel", self.encoder_kernel),
            ("decoder_hidden", self.decoder_hidden),
            ("decoder_kernel", self.decoder_kernel),
            ("squeeze", self.squeeze),
            ("pitch_kernel", self.pitch_kernel),
            ("predictor_filter", self.predictor_filter),
            ("predictor_kernel", self.predictor_kernel),
            ("spline_bins", self.spline_bins),
            ("regressor_filter", self.regressor_filter),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        for (name, v) in [
            ("encoder_kernel", self.encoder_kernel),
            ("decoder_kernel", self.decoder_kernel),
            ("pitch_kernel", self.pitch_kernel),
            ("predictor_kernel", self.predictor_kernel),
        ] {
            if v % 2 == 0 {
                return Err(Error::Config(format!("model.{name} must be odd, got {v}")));
            }
        }
        if (1 + self.pitch_padding) % 2 != 0 {
            return Err(Error::Config(format!(
                "model.pitch_padding must be odd so the augmented pitch splits evenly, got {}",
                self.pitch_padding
            )));
        }
        if !(self.spline_bound > 0.0) || !(self.coupling_init_std >= 0.0) {
            return Err(Error::Config("model.spline_bound must be positive and coupling_init_std non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    pub min_lr: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub log_every: usize,
    pub val_every: usize,
    /// Steps at the start of training that split frames evenly across
    /// tokens instead of running alignment search.
    pub align_warmup_steps: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            steps: 2000,
            lr: 2e-3,
            warmup_steps: 100,
            min_lr: 1e-4,
            grad_clip: 5.0,
            seed: 1,
            log_every: 50,
            val_every: 200,
            align_warmup_steps: 0,
        }
    }
}

/// Sampling temperatures for the prior, duration and pitch noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Temperatures {
    pub prior: f64,
    pub duration: f64,
    pub pitch: f64,
}

impl Default for Temperatures {
    fn default() -> Self {
        Self {
            prior: 0.667,
            duration: 0.8,
            pitch: 0.8,
        }
    }
}

impl Temperatures {
    pub const READING_DURATION: f64 = 1.0;

    pub fn zero() -> Self {
        Self {
            prior: 0.0,
            duration: 0.0,
            pitch: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("prior", self.prior), ("duration", self.duration), ("pitch", self.pitch)] {
            if !(t >= 0.0) || !t.is_finite() {
                return Err(Error::Config(format!("{name} temperature must be a finite value >= 0, got {t}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    pub prior: Option<f64>,
    pub duration: Option<f64>,
    pub pitch: Option<f64>,
}

impl InferenceConfig {
    pub fn temperatures(&self) -> Temperatures {
        let d = Temperatures::default();
        Temperatures {
            prior: self.prior.unwrap_or(d.prior),
            duration: self.duration.unwrap_or(d.duration),
            pitch: self.pitch.unwrap_or(d.pitch),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train_manifest: Option<PathBuf>,
    /// Validation manifest; when absent the last `val_items` training items
    /// are held out.
    pub val_manifest: Option<PathBuf>,
    pub val_items: usize,
    /// Ground-truth sidecar for evaluation.
    pub truth: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub texts: Vec<String>,
    pub speakers: Vec<String>,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub inference: InferenceConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
    pub corpus: Option<CorpusSpec>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative data paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.train_manifest, &mut cfg.data.val_manifest, &mut cfg.data.truth]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.model.variant == Variant::Baseline && self.inference.pitch.is_some() {
            return Err(Error::Config("inference.pitch is not allowed for the baseline variant (no pitch predictor)".into()));
        }
        self.inference.temperatures().validate()?;
        if self.training.batch_size == 0 || self.training.log_every == 0 || self.training.val_every == 0 {
            return Err(Error::Config("training.batch_size, log_every and val_every must be positive".into()));
        }
        if let Some(c) = &self.corpus {
            c.validate()?;
        }
        Ok(())
    }
}

//! Python bindings: configs, checkpoint loading and synthesis, plus the
//! feature and alignment helpers. Arrays cross the boundary as nested lists.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use pitchflow::align::{self, LikelihoodMatrix};
use pitchflow::config::{Config as CoreConfig, Temperatures};
use pitchflow::eval::{distribution_distance, logf0_histogram};
use pitchflow::features::{self, normalize_speaker, PitchContour, SpeakerVector};
use pitchflow::model::{Checkpoint, Model as CoreModel};
use pitchflow::ndmath::{Array, ParamStore};
use pitchflow::{rng_from_seed, synthcorpus, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn rows_of(a: &Array<f32>) -> Vec<Vec<f32>> {
    (0..a.rows()).map(|r| (0..a.cols()).map(|c| a.get(r, c)).collect()).collect()
}

fn speaker_from(v: Vec<f32>) -> PyResult<SpeakerVector> {
    normalize_speaker(&v).map_err(py_err)
}

#[pyclass(module = "pitchflow_py")]
struct Config {
    inner: CoreConfig,
}

#[pymethods]
impl Config {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        CoreConfig::load(path).map(|inner| Self { inner }).map_err(py_err)
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        CoreConfig::parse(text).map(|inner| Self { inner }).map_err(py_err)
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.inner.model.variant.name()
    }

    /// `(prior, duration, pitch)` noise temperatures.
    #[getter]
    fn temperatures(&self) -> (f64, f64, f64) {
        let t = self.inner.inference.temperatures();
        (t.prior, t.duration, t.pitch)
    }
}

#[pyclass(module = "pitchflow_py", get_all)]
struct Synthesis {
    /// 80 rows of log-Mel values, one column per frame.
    mel: Vec<Vec<f32>>,
    log_f0: Vec<f32>,
    voiced: Vec<bool>,
    durations: Vec<usize>,
}

#[pymethods]
impl Synthesis {
    #[getter]
    fn frames(&self) -> usize {
        self.log_f0.len()
    }
}

#[pyclass(module = "pitchflow_py")]
struct Model {
    model: CoreModel,
    store: ParamStore<f32>,
    config: CoreConfig,
    step: u64,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(checkpoint: &str) -> PyResult<Self> {
        let ck = Checkpoint::load(checkpoint).map_err(py_err)?;
        let (model, store) = ck.restore().map_err(py_err)?;
        Ok(Self {
            model,
            store,
            config: ck.config,
            step: ck.step,
        })
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.model.variant().name()
    }

    #[getter]
    fn step(&self) -> u64 {
        self.step
    }

    /// Temperatures default to the checkpoint config's inference section.
    #[pyo3(signature = (text, speaker, seed=0, t_prior=None, t_dur=None, t_pitch=None))]
    #[allow(clippy::too_many_arguments)]
    fn synthesize(
        &self,
        py: Python<'_>,
        text: &str,
        speaker: Vec<f32>,
        seed: u64,
        t_prior: Option<f64>,
        t_dur: Option<f64>,
        t_pitch: Option<f64>,
    ) -> PyResult<Synthesis> {
        let base = self.config.inference.temperatures();
        let temps = Temperatures {
            prior: t_prior.unwrap_or(base.prior),
            duration: t_dur.unwrap_or(base.duration),
            pitch: t_pitch.unwrap_or(base.pitch),
        };
        let tokens = features::tokenize(text).map_err(py_err)?;
        let spk = speaker_from(speaker)?;
        let syn = py
            .detach(|| self.model.synthesize(&self.store, &tokens, &spk, temps, &mut rng_from_seed(seed)))
            .map_err(py_err)?;
        Ok(Synthesis {
            mel: rows_of(&syn.mel.values),
            log_f0: syn.contour.log_f0,
            voiced: syn.contour.voiced,
            durations: syn.durations,
        })
    }
}

/// Blank-interspersed token ids.
#[pyfunction]
fn tokenize(text: &str) -> PyResult<Vec<usize>> {
    features::tokenize(text).map(|t| t.ids).map_err(py_err)
}

/// 80-row log-Mel spectrogram of 16 kHz samples.
#[pyfunction]
fn mel_spectrogram(samples: Vec<f32>) -> PyResult<Vec<Vec<f32>>> {
    features::mel_spectrogram(&samples).map(|m| rows_of(&m.values)).map_err(py_err)
}

/// YIN contour on the Mel frame grid: `(log_f0, voiced)`.
#[pyfunction]
fn estimate_f0(samples: Vec<f32>) -> (Vec<f32>, Vec<bool>) {
    let c = features::estimate_f0(&samples);
    (c.log_f0, c.voiced)
}

/// Monotonic alignment over a `[tokens][frames]` log-likelihood matrix;
/// returns per-token durations.
#[pyfunction]
fn mas(log_likelihoods: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
    let n = log_likelihoods.len();
    let t = log_likelihoods.first().map_or(0, Vec::len);
    if log_likelihoods.iter().any(|r| r.len() != t) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    let values = Array::from_vec(&[n, t], log_likelihoods.concat()).map_err(py_err)?;
    let l = LikelihoodMatrix::new(values).map_err(py_err)?;
    align::mas(&l).map(|p| p.durations).map_err(py_err)
}

/// Renders the config's `[corpus]` section into `out_dir`; returns the
/// number of utterances written.
#[pyfunction]
fn generate_corpus(py: Python<'_>, config: &Config, out_dir: &str) -> PyResult<usize> {
    let Some(spec) = &config.inner.corpus else {
        return Err(PyValueError::new_err("config has no [corpus] section"));
    };
    py.detach(|| synthcorpus::generate_corpus(spec, out_dir))
        .map(|m| m.records.len())
        .map_err(py_err)
}

/// Histogram distance between two sets of log-F0 contours (zeros are
/// unvoiced).
#[pyfunction]
fn logf0_distance(a: Vec<Vec<f32>>, b: Vec<Vec<f32>>) -> PyResult<f64> {
    let hist = |cs: &[Vec<f32>]| {
        let contours: Vec<PitchContour> = cs.iter().map(|c| PitchContour::from_log_f0(c)).collect();
        logf0_histogram(&contours).map_err(py_err)
    };
    distribution_distance(&hist(&a)?, &hist(&b)?).map_err(py_err)
}

/// Reads a speaker `.vec` file.
#[pyfunction]
fn read_speaker(path: &str) -> PyResult<Vec<f32>> {
    SpeakerVector::read(path).map(|v| v.values().to_vec()).map_err(py_err)
}

#[pymodule]
fn pitchflow_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Config>()?;
    m.add_class::<Model>()?;
    m.add_class::<Synthesis>()?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(mel_spectrogram, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_f0, m)?)?;
    m.add_function(wrap_pyfunction!(mas, m)?)?;
    m.add_function(wrap_pyfunction!(generate_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(logf0_distance, m)?)?;
    m.add_function(wrap_pyfunction!(read_speaker, m)?)?;
    Ok(())
}

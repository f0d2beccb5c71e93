//! Synthetic speech-like corpora with known pitch, duration and speaker
//! statistics.
//!
//! Letters are rendered as five-harmonic tones whose F0 is drawn per token
//! from the speaker's log-normal distribution; blanks and spaces are
//! silence. Each letter also applies a fixed formant-like gain so spectra
//! depend on the text. A low white-noise floor keeps log-Mel values off the
//! hard floor.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng as _, SeedableRng};
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::manifest::{Manifest, ManifestRecord};
use crate::features::speaker::{normalize_speaker, SpeakerVector, SPEAKER_DIM};
use crate::features::tokens::{tokenize, TokenSequence};
use crate::features::{write_wav, PitchContour, HOP, SAMPLE_RATE};
use crate::Rng;

pub const HARMONICS: usize = 5;
const NOISE_AMPLITUDE: f64 = 1e-2;
const EDGE_SAMPLES: usize = 384;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeakerSpec {
    pub id: String,
    /// Mean of the per-token log-F0 (natural log of Hz).
    pub log_f0_mean: f64,
    pub log_f0_std: f64,
    /// Mean frames per token.
    pub frames_per_token: f64,
    /// Standard deviation of per-token frame counts; 0 gives constant durations.
    #[serde(default)]
    pub duration_std: f64,
    pub timbre_seed: u64,
}

impl SpeakerSpec {
    pub fn new(id: &str, f0_hz: f64, log_f0_std: f64, frames_per_token: f64, timbre_seed: u64) -> Self {
        Self {
            id: id.to_string(),
            log_f0_mean: f0_hz.ln(),
            log_f0_std,
            frames_per_token,
            duration_std: 0.0,
            timbre_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f0 = self.log_f0_mean.exp();
        if !(80.0..=400.0).contains(&f0) {
            return Err(Error::Config(format!("speaker {}: base F0 {f0:.1} Hz outside [80, 400]", self.id)));
        }
        if !(self.log_f0_std >= 0.0) || !(self.duration_std >= 0.0) {
            return Err(Error::Config(format!("speaker {}: standard deviations must be non-negative", self.id)));
        }
        if !(self.frames_per_token >= 1.0) {
            return Err(Error::Config(format!("speaker {}: frames_per_token must be at least 1", self.id)));
        }
        Ok(())
    }

    /// Deterministic unit-norm vector derived from the speaker id.
    pub fn vector(&self) -> SpeakerVector {
        let mut rng = Rng::seed_from_u64(fnv1a(self.id.as_bytes()));
        let v: Vec<f32> = (0..SPEAKER_DIM)
            .map(|_| StandardNormal.sample(&mut rng))
            .map(|x: f64| x as f32)
            .collect();
        normalize_speaker(&v).expect("gaussian vector is nonzero")
    }

    /// Relative amplitude of each harmonic.
    pub fn harmonic_profile(&self) -> [f64; HARMONICS] {
        let mut rng = Rng::seed_from_u64(self.timbre_seed);
        let tilt = rng.random_range(0.6..1.4);
        let mut out = [0.0; HARMONICS];
        for (h, a) in out.iter_mut().enumerate() {
            *a = (h as f64 + 1.0).powf(-tilt) * rng.random_range(0.7..1.0);
        }
        out
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf29ce484222325, |h, &b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub speakers: Vec<SpeakerSpec>,
    pub utterances_per_speaker: usize,
    /// Letters used to build texts.
    pub alphabet: String,
    /// Letters per word, inclusive range.
    pub word_length: [usize; 2],
    /// Words per utterance, inclusive range.
    pub words: [usize; 2],
    pub seed: u64,
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.speakers.is_empty() {
            return Err(Error::Config("corpus needs at least one speaker".into()));
        }
        for s in &self.speakers {
            s.validate()?;
        }
        if self.alphabet.is_empty() || !self.alphabet.chars().all(|c| c.is_ascii_lowercase()) {
            return Err(Error::Config("alphabet must be non-empty lowercase a-z".into()));
        }
        for (name, [lo, hi]) in [("word_length", self.word_length), ("words", self.words)] {
            if lo == 0 || lo > hi {
                return Err(Error::Config(format!("{name} must be a range [lo, hi] with 1 <= lo <= hi")));
            }
        }
        Ok(())
    }

    /// Random text over the alphabet.
    pub fn random_text(&self, rng: &mut Rng) -> String {
        let letters: Vec<char> = self.alphabet.chars().collect();
        let n_words = rng.random_range(self.words[0]..=self.words[1]);
        (0..n_words)
            .map(|_| {
                let len = rng.random_range(self.word_length[0]..=self.word_length[1]);
                (0..len).map(|_| letters[rng.random_range(0..letters.len())]).collect::<String>()
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// One rendered utterance with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub text: String,
    pub tokens: TokenSequence,
    pub samples: Vec<f32>,
    pub durations: Vec<usize>,
    pub contour: PitchContour,
}

/// Ground-truth sidecar record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthRecord {
    pub id: String,
    pub speaker: String,
    pub audio: String,
    pub text: String,
    pub durations: Vec<usize>,
    pub log_f0: Vec<f32>,
}

/// Centre frequency of the formant-like gain applied to a letter.
fn formant_centre(token: usize) -> f64 {
    300.0 * 1.11f64.powi(token as i32)
}

fn formant_gain(token: usize, freq: f64) -> f64 {
    let d = (freq - formant_centre(token)) / 250.0;
    1.0 + 2.0 * (-0.5 * d * d).exp()
}

/// Renders `text` for `spec`.
pub fn generate_utterance(spec: &SpeakerSpec, text: &str, rng: &mut Rng) -> Result<Utterance> {
    spec.validate()?;
    let tokens = tokenize(text)?;
    let dur_dist = Normal::new(spec.frames_per_token, spec.duration_std).map_err(|e| Error::Config(e.to_string()))?;
    let f0_dist = Normal::new(spec.log_f0_mean, spec.log_f0_std).map_err(|e| Error::Config(e.to_string()))?;
    let durations: Vec<usize> = (0..tokens.len())
        .map(|_| (dur_dist.sample(rng).round() as i64).max(1) as usize)
        .collect();
    let frames: usize = durations.iter().sum();
    let mut samples = vec![0.0f64; frames * HOP];
    let mut log_f0 = vec![0.0f32; frames];
    let profile = spec.harmonic_profile();
    let mut start = 0;
    for (i, &d) in durations.iter().enumerate() {
        let len = d * HOP;
        if tokens.is_letter(i) {
            let lf = f0_dist.sample(rng);
            let f0 = lf.exp();
            let id = tokens.ids[i];
            let gains: Vec<f64> = (0..HARMONICS)
                .map(|h| profile[h] * formant_gain(id, f0 * (h + 1) as f64))
                .collect();
            let norm: f64 = gains.iter().sum();
            let phase0 = rng.random_range(0.0..2.0 * PI);
            for n in 0..len {
                let edge = EDGE_SAMPLES.min(len / 2).max(1);
                let env = if n < edge {
                    0.5 - 0.5 * (PI * n as f64 / edge as f64).cos()
                } else if n >= len - edge {
                    0.5 - 0.5 * (PI * (len - n) as f64 / edge as f64).cos()
                } else {
                    1.0
                };
                let ph = phase0 + 2.0 * PI * f0 * n as f64 / SAMPLE_RATE as f64;
                let v: f64 = gains
                    .iter()
                    .enumerate()
                    .map(|(h, g)| g * ((h + 1) as f64 * ph).sin())
                    .sum();
                samples[start + n] = 0.5 * env * v / norm;
            }
            for f in &mut log_f0[start / HOP..start / HOP + d] {
                *f = lf as f32;
            }
        }
        start += len;
    }
    let samples = samples
        .iter()
        .map(|&s| {
            let n: f64 = StandardNormal.sample(rng);
            (s + NOISE_AMPLITUDE * n) as f32
        })
        .collect();
    Ok(Utterance {
        text: text.to_string(),
        tokens,
        samples,
        durations,
        contour: PitchContour::from_log_f0(&log_f0),
    })
}

/// Per-utterance generator seed.
pub fn utterance_seed(corpus_seed: u64, speaker: usize, index: usize) -> u64 {
    fnv1a(&[corpus_seed.to_le_bytes(), (speaker as u64).to_le_bytes(), (index as u64).to_le_bytes()].concat())
}

/// A corpus held in memory: utterances grouped by speaker index.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub items: Vec<(usize, Utterance)>,
}

pub fn generate_in_memory(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut items = Vec::new();
    for (s, speaker) in spec.speakers.iter().enumerate() {
        for u in 0..spec.utterances_per_speaker {
            let mut rng = Rng::seed_from_u64(utterance_seed(spec.seed, s, u));
            let text = spec.random_text(&mut rng);
            items.push((s, generate_utterance(speaker, &text, &mut rng)?));
        }
    }
    Ok(Corpus { spec: spec.clone(), items })
}

/// Writes WAVs, speaker vectors, `manifest.jsonl` and `truth.jsonl` under
/// `out_dir` and returns the manifest.
pub fn generate_corpus(spec: &CorpusSpec, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    let out = out_dir.as_ref();
    let corpus = generate_in_memory(spec)?;
    for sub in ["wavs", "speakers"] {
        let p = out.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    for s in &spec.speakers {
        s.vector().write(out.join("speakers").join(format!("{}.vec", s.id)))?;
    }
    let mut records = Vec::new();
    let mut truth = String::new();
    let mut counters = vec![0usize; spec.speakers.len()];
    for (s, utt) in &corpus.items {
        let speaker = &spec.speakers[*s];
        let id = format!("{}_{:04}", speaker.id, counters[*s]);
        counters[*s] += 1;
        let audio = format!("wavs/{id}.wav");
        write_wav(out.join(&audio), &utt.samples)?;
        records.push(ManifestRecord {
            audio: audio.clone(),
            text: utt.text.clone(),
            speaker: speaker.id.clone(),
            speaker_vec: format!("speakers/{}.vec", speaker.id),
        });
        truth.push_str(&serde_json::to_string(&TruthRecord {
            id,
            speaker: speaker.id.clone(),
            audio,
            text: utt.text.clone(),
            durations: utt.durations.clone(),
            log_f0: utt.contour.log_f0.clone(),
        })?);
        truth.push('\n');
    }
    let manifest = Manifest {
        root: PathBuf::from(out),
        records,
    };
    manifest.save(out.join("manifest.jsonl"))?;
    let tp = out.join("truth.jsonl");
    std::fs::write(&tp, truth).map_err(|e| Error::io(&tp, e))?;
    Ok(manifest)
}

pub fn load_truth(path: impl AsRef<Path>) -> Result<Vec<TruthRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Manifest {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

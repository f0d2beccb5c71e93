//! Frame-level fundamental frequency: the contour type, a YIN estimator on
//! waveforms, and a harmonic-template estimator on Mel spectrograms.

use std::sync::OnceLock;

use super::mel::{frame_count, mel_filterbank, pad_reflect, MelSpectrogram};
use super::{HOP, MEL_FLOOR, N_FFT, N_MELS, SAMPLE_RATE, WINDOW};
use crate::error::{Error, Result};

pub const MIN_F0_HZ: f64 = 50.0;
pub const MAX_F0_HZ: f64 = 600.0;

/// Per-frame natural-log F0. Unvoiced frames hold exactly `0.0`.
#[derive(Clone, Debug, PartialEq)]
pub struct PitchContour {
    pub log_f0: Vec<f32>,
    pub voiced: Vec<bool>,
}

impl PitchContour {
    /// Builds a contour from per-frame log-F0 where `0.0` (or anything below
    /// `ln 50`) means unvoiced. Voiced values above `ln 600` are clamped.
    pub fn from_log_f0(values: &[f32]) -> Self {
        let (lo, hi) = (MIN_F0_HZ.ln() as f32, MAX_F0_HZ.ln() as f32);
        let mut log_f0 = Vec::with_capacity(values.len());
        let mut voiced = Vec::with_capacity(values.len());
        for &v in values {
            if v.is_finite() && v >= lo {
                log_f0.push(v.min(hi));
                voiced.push(true);
            } else {
                log_f0.push(0.0);
                voiced.push(false);
            }
        }
        Self { log_f0, voiced }
    }

    pub fn unvoiced(frames: usize) -> Self {
        Self {
            log_f0: vec![0.0; frames],
            voiced: vec![false; frames],
        }
    }

    pub fn frames(&self) -> usize {
        self.log_f0.len()
    }

    pub fn voiced_values(&self) -> impl Iterator<Item = f32> + '_ {
        self.log_f0
            .iter()
            .zip(&self.voiced)
            .filter(|(_, &v)| v)
            .map(|(&x, _)| x)
    }

    pub fn voiced_count(&self) -> usize {
        self.voiced.iter().filter(|&&v| v).count()
    }

    pub fn truncate(&mut self, frames: usize) {
        self.log_f0.truncate(frames);
        self.voiced.truncate(frames);
    }

    /// Checks the unvoiced-zero and value-range invariants.
    pub fn validate(&self) -> Result<()> {
        if self.log_f0.len() != self.voiced.len() {
            return Err(Error::invalid("PitchContour", "mask length differs from values"));
        }
        let (lo, hi) = (MIN_F0_HZ.ln() as f32, MAX_F0_HZ.ln() as f32);
        for (t, (&v, &voiced)) in self.log_f0.iter().zip(&self.voiced).enumerate() {
            let ok = if voiced { (lo..=hi).contains(&v) } else { v == 0.0 };
            if !ok {
                return Err(Error::invalid(
                    "PitchContour",
                    format!("frame {t}: log_f0 {v} inconsistent with voiced={voiced}"),
                ));
            }
        }
        Ok(())
    }
}

const YIN_THRESHOLD: f64 = 0.15;

/// YIN on the Mel frame grid: cumulative-mean-normalized difference, absolute
/// threshold 0.15, parabolic refinement of the lag. Frames without a lag
/// below threshold are unvoiced.
pub fn estimate_f0(samples: &[f32]) -> PitchContour {
    let frames = frame_count(samples.len());
    if samples.len() < 2 || frames == 0 {
        return PitchContour::unvoiced(frames);
    }
    let padded = if samples.len() > (WINDOW - HOP) / 2 {
        pad_reflect(samples)
    } else {
        return PitchContour::unvoiced(frames);
    };
    let tau_min = (SAMPLE_RATE as f64 / MAX_F0_HZ).floor() as usize;
    let tau_max = (SAMPLE_RATE as f64 / MIN_F0_HZ).ceil() as usize;
    let mut values = Vec::with_capacity(frames);
    let mut diff = vec![0.0; tau_max + 2];
    let mut cmnd = vec![0.0; tau_max + 2];
    for t in 0..frames {
        let frame = &padded[t * HOP..t * HOP + WINDOW];
        values.push(yin_frame(frame, tau_min, tau_max, &mut diff, &mut cmnd).map_or(0.0, |f| f.ln() as f32));
    }
    PitchContour::from_log_f0(&values)
}

fn yin_frame(frame: &[f64], tau_min: usize, tau_max: usize, diff: &mut [f64], cmnd: &mut [f64]) -> Option<f64> {
    let energy: f64 = frame.iter().map(|x| x * x).sum();
    if energy < 1e-10 * frame.len() as f64 {
        return None;
    }
    // integration window centred in the frame for every lag
    let span = WINDOW - tau_max - 1;
    for tau in 1..=tau_max + 1 {
        let start = (tau_max + 1 - tau) / 2;
        diff[tau] = (0..span)
            .map(|j| {
                let d = frame[start + j] - frame[start + j + tau];
                d * d
            })
            .sum();
    }
    cmnd[0] = 1.0;
    let mut running = 0.0;
    for tau in 1..=tau_max + 1 {
        running += diff[tau];
        cmnd[tau] = if running > 0.0 {
            diff[tau] * tau as f64 / running
        } else {
            1.0
        };
    }
    let mut tau = tau_min.max(2);
    while tau < tau_max {
        if cmnd[tau] < YIN_THRESHOLD {
            while tau + 1 < tau_max && cmnd[tau + 1] < cmnd[tau] {
                tau += 1;
            }
            let (a, b, c) = (cmnd[tau - 1], cmnd[tau], cmnd[tau + 1]);
            let denom = a - 2.0 * b + c;
            let shift = if denom.abs() > 1e-12 {
                (0.5 * (a - c) / denom).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            let f0 = SAMPLE_RATE as f64 / (tau as f64 + shift);
            return (MIN_F0_HZ..=MAX_F0_HZ).contains(&f0).then_some(f0);
        }
        tau += 1;
    }
    None
}

/// Harmonic-template pitch estimate from a log-Mel spectrogram.
///
/// Each candidate F0 (60–450 Hz, 1/16-semitone grid) has a Mel template made
/// of Gaussian harmonic peaks pushed through the filterbank. A frame takes
/// the candidate whose template has the highest cosine similarity with the
/// frame's Mel magnitudes; frames whose peak energy stays near the floor, or
/// whose best similarity is weak, are unvoiced, as are frames more than
/// 3.5 nats below the loudest frame of the spectrogram. Used for systems that
/// produce a spectrogram without an explicit pitch contour.
pub fn estimate_f0_from_mel(mel: &MelSpectrogram) -> PitchContour {
    let bank = templates();
    let frames = mel.frames();
    let mut values = Vec::with_capacity(frames);
    let floor_db = MEL_FLOOR.ln();
    let peaks: Vec<f64> = (0..frames)
        .map(|t| (0..N_MELS).map(|m| mel.values.get(m, t) as f64).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let loudest = peaks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for (t, &peak) in peaks.iter().enumerate() {
        let col: Vec<f64> = (0..N_MELS).map(|m| mel.values.get(m, t) as f64).collect();
        if peak < floor_db + MEL_VOICING_MARGIN || peak < loudest - MEL_RELATIVE_GATE {
            values.push(0.0);
            continue;
        }
        // magnitudes relative to the frame's own noise floor
        let base = median(&col);
        let mag: Vec<f64> = col.iter().map(|&v| ((v - base).max(0.0) * 0.5).exp_m1()).collect();
        let norm = mag.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 0.0 {
            values.push(0.0);
            continue;
        }
        let (best, score) = bank
            .iter()
            .map(|(f0, tpl)| {
                let dot: f64 = tpl.iter().zip(&mag).map(|(a, b)| a * b).sum();
                (*f0, dot / norm)
            })
            .fold((0.0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        values.push(if score >= MEL_MIN_SIMILARITY { best.ln() as f32 } else { 0.0 });
    }
    PitchContour::from_log_f0(&values)
}


const MEL_VOICING_MARGIN: f64 = 4.0;
const MEL_RELATIVE_GATE: f64 = 3.5;
const MEL_MIN_SIMILARITY: f64 = 0.5;
const TEMPLATE_HARMONICS: usize = 8;

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    s[s.len() / 2]
}

fn templates() -> &'static [(f64, Vec<f64>)] {
    static BANK: OnceLock<Vec<(f64, Vec<f64>)>> = OnceLock::new();
    BANK.get_or_init(|| {
        let fb = mel_filterbank();
        let bins = N_FFT / 2 + 1;
        let bin_hz = SAMPLE_RATE as f64 / N_FFT as f64;
        let width = bin_hz;
        let steps = (12.0 * 16.0 * (450.0f64 / 60.0).log2()).round() as usize;
        (0..=steps)
            .map(|i| {
                let f0 = 60.0 * 2f64.powf(i as f64 / (12.0 * 16.0));
                let spec: Vec<f64> = (0..bins)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        (1..=TEMPLATE_HARMONICS)
                            .map(|h| {
                                let d = (f - h as f64 * f0) / width;
                                (-0.5 * d * d).exp() / (h as f64).sqrt()
                            })
                            .sum()
                    })
                    .collect();
                let mut tpl: Vec<f64> = (0..N_MELS)
                    .map(|m| fb.row_slice(m).iter().zip(&spec).map(|(w, s)| w * s).sum::<f64>().sqrt())
                    .collect();
                let norm = tpl.iter().map(|x| x * x).sum::<f64>().sqrt();
                tpl.iter_mut().for_each(|x| *x /= norm);
                (f0, tpl)
            })
            .collect()
    })
}

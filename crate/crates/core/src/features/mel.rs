use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{HOP, MEL_FLOOR, N_FFT, N_MELS, SAMPLE_RATE, WINDOW};
use crate::error::{Error, Result};
use crate::ndmath::Array;

/// `[80 × frames]` log-Mel energies on the 16 ms / 64 ms grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    pub values: Array<f32>,
}

impl MelSpectrogram {
    pub fn new(values: Array<f32>) -> Result<Self> {
        if !values.is_matrix() || values.rows() != N_MELS {
            return Err(Error::invalid(
                "MelSpectrogram",
                format!("expected {N_MELS} channels, got shape {:?}", values.shape()),
            ));
        }
        Ok(Self { values })
    }

    pub fn frames(&self) -> usize {
        self.values.cols()
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn hop(&self) -> usize {
        HOP
    }
}

/// Frame count for `num_samples`: the signal is reflect-padded by
/// `(WINDOW − HOP)/2` on each side, then cut into `WINDOW`-long frames every
/// `HOP` samples, giving `floor(num_samples / HOP)` frames. Frame `t` is
/// centred on sample `t·HOP + HOP/2`.
pub fn frame_count(num_samples: usize) -> usize {
    let padded = num_samples + (WINDOW - HOP);
    (padded - WINDOW) / HOP + 1
}

pub(crate) fn pad_reflect(samples: &[f32]) -> Vec<f64> {
    let pad = (WINDOW - HOP) / 2;
    let n = samples.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        out.push(samples[i] as f64);
    }
    out.extend(samples.iter().map(|&s| s as f64));
    for i in 0..pad {
        out.push(samples[n - 2 - i] as f64);
    }
    out
}

fn hz_to_mel(f: f64) -> f64 {
    // Slaney: linear below 1 kHz, logarithmic above
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = (6.4f64).ln() / 27.0;
    if f >= min_log_hz {
        min_log_mel + (f / min_log_hz).ln() / logstep
    } else {
        f / f_sp
    }
}

fn mel_to_hz(m: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = (6.4f64).ln() / 27.0;
    if m >= min_log_mel {
        min_log_hz * (logstep * (m - min_log_mel)).exp()
    } else {
        f_sp * m
    }
}

/// Slaney-normalized triangular filterbank, `[N_MELS × (N_FFT/2 + 1)]`,
/// spanning 0–8000 Hz.
pub fn mel_filterbank() -> &'static Array<f64> {
    static BANK: OnceLock<Array<f64>> = OnceLock::new();
    BANK.get_or_init(|| {
        let bins = N_FFT / 2 + 1;
        let (lo, hi) = (hz_to_mel(0.0), hz_to_mel(SAMPLE_RATE as f64 / 2.0));
        let pts: Vec<f64> = (0..N_MELS + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (N_MELS + 1) as f64))
            .collect();
        Array::from_fn(N_MELS, bins, |m, k| {
            let f = k as f64 * SAMPLE_RATE as f64 / N_FFT as f64;
            let lower = (f - pts[m]) / (pts[m + 1] - pts[m]);
            let upper = (pts[m + 2] - f) / (pts[m + 2] - pts[m + 1]);
            let enorm = 2.0 / (pts[m + 2] - pts[m]);
            lower.min(upper).max(0.0) * enorm
        })
    })
}

fn hann() -> &'static [f64] {
    static WIN: OnceLock<Vec<f64>> = OnceLock::new();
    WIN.get_or_init(|| {
        (0..WINDOW)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / WINDOW as f64).cos())
            .collect()
    })
}

fn fft() -> Arc<dyn Fft<f64>> {
    FftPlanner::new().plan_fft_forward(N_FFT)
}

/// Power spectra `[frames × (N_FFT/2 + 1)]` of the Hann-windowed frames.
pub fn power_spectrogram(samples: &[f32]) -> Result<Vec<Vec<f64>>> {
    if samples.len() < WINDOW {
        return Err(Error::AudioTooShort {
            got: samples.len(),
            min: WINDOW,
        });
    }
    let padded = pad_reflect(samples);
    let frames = frame_count(samples.len());
    let plan = fft();
    let win = hann();
    let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        let start = t * HOP;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(padded[start + i] * win[i], 0.0);
        }
        plan.process(&mut buf);
        out.push(buf[..N_FFT / 2 + 1].iter().map(|c| c.norm_sqr()).collect());
    }
    Ok(out)
}

/// Log-compressed Mel energies `ln(max(energy, 1e-5))`.
pub fn mel_spectrogram(samples: &[f32]) -> Result<MelSpectrogram> {
    let power = power_spectrogram(samples)?;
    let bank = mel_filterbank();
    let frames = power.len();
    let mut values = Array::zeros(&[N_MELS, frames]);
    for (t, spec) in power.iter().enumerate() {
        for m in 0..N_MELS {
            let e: f64 = bank.row_slice(m).iter().zip(spec).map(|(w, p)| w * p).sum();
            values.set(m, t, e.max(MEL_FLOOR).ln() as f32);
        }
    }
    MelSpectrogram::new(values)
}

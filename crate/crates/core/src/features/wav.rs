use std::path::Path;

use super::SAMPLE_RATE;
use crate::error::{Error, Result};

const FULL_SCALE: f32 = 32768.0;

/// Reads a PCM 16-bit mono 16 kHz file into samples scaled by `1/32768`.
pub fn load_wav(path: impl AsRef<Path>) -> Result<(Vec<f32>, u32)> {
    let path = path.as_ref();
    let format_err = |msg: String| Error::WavFormat {
        path: path.to_path_buf(),
        msg,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| format_err(e.to_string()))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(format_err(format!(
            "expected 16-bit PCM, got {:?} {} bits",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    if spec.channels != 1 {
        return Err(format_err(format!("expected mono, got {} channels", spec.channels)));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(format_err(format!(
            "expected {SAMPLE_RATE} Hz, got {} Hz (resampling is not supported)",
            spec.sample_rate
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f32 / FULL_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| format_err(format!("truncated or corrupt sample data: {e}")))?;
    Ok((samples, spec.sample_rate))
}

/// Writes samples as PCM 16-bit mono 16 kHz, rounding and clipping to the
/// 16-bit range.
pub fn write_wav(path: impl AsRef<Path>, samples: &[f32]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        writer.write_sample(quantize(s))?;
    }
    writer.finalize()?;
    Ok(())
}

pub(crate) fn quantize(s: f32) -> i16 {
    (s * FULL_SCALE).round().clamp(-32768.0, 32767.0) as i16
}

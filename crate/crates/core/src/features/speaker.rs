use std::path::Path;

use crate::error::{Error, Result};
use crate::ndmath::{Array, Real};

pub const SPEAKER_DIM: usize = 256;

/// Unit-norm 256-dimensional speaker embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerVector {
    values: Vec<f32>,
}

impl SpeakerVector {
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// `[256 × 1]` column for the model.
    pub fn to_column<F: Real>(&self) -> Array<F> {
        Array::column(&self.values).cast()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes: Vec<u8> = self.values.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(path.as_ref(), bytes).map_err(|e| Error::io(path.as_ref(), e))
    }

    /// Reads 256 little-endian `f32`s and renormalizes.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        if bytes.len() != SPEAKER_DIM * 4 {
            return Err(Error::invalid(
                "SpeakerVector::read",
                format!("{}: expected {} bytes, got {}", path.as_ref().display(), SPEAKER_DIM * 4, bytes.len()),
            ));
        }
        let v: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        normalize_speaker(&v)
    }

    /// Parses inline comma-separated floats.
    pub fn parse_inline(text: &str) -> Result<Self> {
        let v = text
            .split(',')
            .map(|s| s.trim().parse::<f32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::invalid("SpeakerVector::parse_inline", e.to_string()))?;
        normalize_speaker(&v)
    }
}

/// Scales `v` to unit Euclidean norm.
pub fn normalize_speaker(v: &[f32]) -> Result<SpeakerVector> {
    if v.len() != SPEAKER_DIM {
        return Err(Error::invalid(
            "normalize_speaker",
            format!("expected {SPEAKER_DIM} values, got {}", v.len()),
        ));
    }
    let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroSpeakerVector);
    }
    Ok(SpeakerVector {
        values: v.iter().map(|&x| (x as f64 / norm) as f32).collect(),
    })
}

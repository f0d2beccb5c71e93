use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::speaker::SpeakerVector;
use crate::error::{Error, Result};

/// One manifest line as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub audio: String,
    pub text: String,
    pub speaker: String,
    pub speaker_vec: String,
}

/// Line-delimited JSON records; relative paths resolve against `root`.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl ManifestRecord {
    pub fn audio_path(&self, root: &Path) -> PathBuf {
        root.join(&self.audio)
    }

    /// Loads the speaker vector from a `.vec` path or inline floats.
    pub fn speaker_vector(&self, root: &Path) -> Result<SpeakerVector> {
        if self.speaker_vec.contains(',') {
            SpeakerVector::parse_inline(&self.speaker_vec)
        } else {
            SpeakerVector::read(root.join(&self.speaker_vec))
        }
    }
}

impl Manifest {
    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| Error::Manifest {
                line: i + 1,
                msg: e.to_string(),
            })?;
            records.push(rec);
        }
        Ok(Self {
            root: root.into(),
            records,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for r in &self.records {
            writeln!(f, "{}", serde_json::to_string(r)?).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    /// Checks that every referenced file exists and parses.
    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            let line = i + 1;
            let wrap = |e: Error| Error::Manifest {
                line,
                msg: e.to_string(),
            };
            super::wav::load_wav(r.audio_path(&self.root)).map_err(wrap)?;
            r.speaker_vector(&self.root).map_err(wrap)?;
            super::tokens::tokenize(&r.text).map_err(wrap)?;
        }
        Ok(())
    }

    /// Distinct speaker ids in first-seen order.
    pub fn speakers(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.speaker) {
                out.push(r.speaker.clone());
            }
        }
        out
    }
}

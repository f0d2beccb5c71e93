//! WAV ingestion, log-Mel features, F0 estimation, tokenization, speaker
//! vectors and the dataset manifest.

pub mod manifest;
pub mod mel;
pub mod pitch;
pub mod speaker;
pub mod tokens;
pub mod wav;

pub const SAMPLE_RATE: u32 = 16_000;
pub const HOP: usize = 256;
pub const WINDOW: usize = 1024;
pub const N_FFT: usize = 1024;
pub const N_MELS: usize = 80;
pub const MEL_FLOOR: f64 = 1e-5;

pub use manifest::{Manifest, ManifestRecord};
pub use mel::{frame_count, mel_spectrogram, MelSpectrogram};
pub use pitch::{estimate_f0, estimate_f0_from_mel, PitchContour};
pub use speaker::{normalize_speaker, SpeakerVector, SPEAKER_DIM};
pub use tokens::{tokenize, TokenSequence, BLANK};
pub use wav::{load_wav, write_wav};

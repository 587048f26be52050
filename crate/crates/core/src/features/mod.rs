//! Acoustic front-end: STFT, 80-dim log-mel + delta features, SVD
//! spectral-basis extraction, energy VAD, and speed perturbation.
//!
//! All operations are pure and safe to apply data-parallel across utterances.

pub mod archive;
mod fft;
mod mel;
mod resample;
mod stft;
mod svd;
mod vad;
pub mod wav;

pub use fft::Fft;
pub use mel::{fbank_delta, mean_normalize, mel_filterbank};
pub use resample::speed_perturb;
pub use stft::stft;
pub use svd::svd_spectral_bases;
pub use vad::energy_vad;

use crate::netcore::Mat;
use crate::{Error, Result};

/// Standard analysis framing: 25 ms windows every 10 ms.
pub const DEFAULT_FRAME_LENGTH_S: f64 = 0.025;
pub const DEFAULT_FRAME_SHIFT_S: f64 = 0.010;
/// 80 mel bands → 160-dim FBK+Δ feature vectors.
pub const DEFAULT_N_MELS: usize = 80;
/// Top-2 spectral bases feed the embedding network.
pub const DEFAULT_SPECTRAL_BASES: usize = 2;

/// A mono waveform with finite samples.
#[derive(Debug, Clone)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArg("sample_rate must be > 0".into()));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("waveform samples".into()));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Magnitude spectrogram (F×T, nonnegative).
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub magnitudes: Mat,
    pub frame_length_s: f64,
    pub frame_shift_s: f64,
    pub sample_rate: u32,
}

impl Spectrogram {
    /// Center frequency of FFT bin `k` in Hz.
    pub fn bin_hz(&self, k: usize) -> f64 {
        let nyquist = self.sample_rate as f64 / 2.0;
        k as f64 * nyquist / (self.magnitudes.rows() - 1) as f64
    }
}

/// Top-k left singular vectors (rows) of a magnitude spectrogram with their
/// singular values, sorted descending.
#[derive(Debug, Clone)]
pub struct SpectralBases {
    pub bases: Mat,
    pub singular_values: Vec<f64>,
}

impl SpectralBases {
    /// Bases rows concatenated into one vector (embedding network input).
    pub fn flattened(&self) -> Vec<f64> {
        self.bases.data().to_vec()
    }
}

/// FBK+Δ features for one utterance with per-utterance mean normalization
/// optionally applied.
pub fn extract_features(w: &Waveform, normalize: bool) -> Result<Mat> {
    let spec = stft(w, DEFAULT_FRAME_LENGTH_S, DEFAULT_FRAME_SHIFT_S)?;
    let mut feats = fbank_delta(&spec, DEFAULT_N_MELS)?;
    if normalize {
        mean_normalize(&mut feats);
    }
    Ok(feats)
}

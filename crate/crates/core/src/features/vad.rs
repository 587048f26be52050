//! Energy-based leading/trailing silence removal.

use super::Waveform;
use crate::{Error, Result};

/// Absolute frame-energy floor below which the whole utterance counts as silent.
const SILENCE_FLOOR: f64 = 1e-12;

/// Trims leading and trailing frames whose energy falls more than
/// |threshold_db| below the utterance peak (threshold_db is a negative dB
/// offset, e.g. -35.0). Interior frames are never removed; `-inf` keeps
/// everything.
pub fn energy_vad(w: &Waveform, threshold_db: f64) -> Result<Waveform> {
    let sr = w.sample_rate as f64;
    let frame = ((super::DEFAULT_FRAME_LENGTH_S * sr).round() as usize).max(1);
    let shift = ((super::DEFAULT_FRAME_SHIFT_S * sr).round() as usize).max(1);
    if w.samples.len() < frame {
        // Single short frame: judge the whole utterance.
        let e: f64 = w.samples.iter().map(|x| x * x).sum();
        if e < SILENCE_FLOOR {
            return Err(Error::NoSpeechDetected);
        }
        return Ok(w.clone());
    }
    let t_frames = 1 + (w.samples.len() - frame) / shift;
    let energies: Vec<f64> = (0..t_frames)
        .map(|t| {
            let s = t * shift;
            w.samples[s..s + frame].iter().map(|x| x * x).sum()
        })
        .collect();
    let peak = energies.iter().cloned().fold(0.0, f64::max);
    if peak < SILENCE_FLOOR {
        return Err(Error::NoSpeechDetected);
    }
    // energy >= peak · 10^(threshold_db/10) keeps the frame
    let cut = peak * 10f64.powf(threshold_db / 10.0);
    let first = energies.iter().position(|&e| e >= cut).unwrap_or(0);
    let last = energies.iter().rposition(|&e| e >= cut).unwrap_or(t_frames - 1);

    let start = first * shift;
    let end = if last == t_frames - 1 {
        w.samples.len()
    } else {
        (last * shift + frame).min(w.samples.len())
    };
    Ok(Waveform {
        samples: w.samples[start..end].to_vec(),
        sample_rate: w.sample_rate,
    })
}

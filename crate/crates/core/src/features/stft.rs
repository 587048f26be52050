//! Hann-windowed magnitude STFT.

use super::fft::Fft;
use super::{Spectrogram, Waveform};
use crate::netcore::Mat;
use crate::{Error, Result};

/// Magnitude spectrogram with F = fft_size/2 + 1 bins, fft_size the next power
/// of two at or above the frame length in samples.
pub fn stft(w: &Waveform, frame_length_s: f64, frame_shift_s: f64) -> Result<Spectrogram> {
    if !(frame_shift_s > 0.0) || frame_length_s < frame_shift_s {
        return Err(Error::InvalidArg(format!(
            "frame length {frame_length_s}s must be ≥ shift {frame_shift_s}s > 0"
        )));
    }
    let sr = w.sample_rate as f64;
    let frame = (frame_length_s * sr).round() as usize;
    let shift = (frame_shift_s * sr).round() as usize;
    if frame == 0 || shift == 0 {
        return Err(Error::InvalidArg("frame/shift rounds to zero samples".into()));
    }
    if w.samples.len() < frame {
        return Err(Error::InvalidArg(format!(
            "utterance of {} samples is shorter than one {frame}-sample frame",
            w.samples.len()
        )));
    }
    let t_frames = 1 + (w.samples.len() - frame) / shift;
    let nfft = frame.next_power_of_two();
    let nbins = nfft / 2 + 1;

    let window: Vec<f64> = if frame == 1 {
        vec![1.0]
    } else {
        (0..frame)
            .map(|i| {
                0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (frame - 1) as f64).cos()
            })
            .collect()
    };

    let fft = Fft::new(nfft);
    let mut mags = Mat::zeros(nbins, t_frames);
    let mut re = vec![0.0; nfft];
    let mut im = vec![0.0; nfft];
    for t in 0..t_frames {
        let start = t * shift;
        re.fill(0.0);
        im.fill(0.0);
        for i in 0..frame {
            re[i] = w.samples[start + i] * window[i];
        }
        fft.forward(&mut re, &mut im);
        for k in 0..nbins {
            mags.set(k, t, (re[k] * re[k] + im[k] * im[k]).sqrt());
        }
    }
    Ok(Spectrogram {
        magnitudes: mags,
        frame_length_s,
        frame_shift_s,
        sample_rate: w.sample_rate,
    })
}

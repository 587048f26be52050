//! Log-mel filter-bank energies with delta coefficients.

use super::Spectrogram;
use crate::netcore::Mat;
use crate::{Error, Result};

const LOG_FLOOR: f64 = 1e-10;
/// Delta regression half-window (±2 frames).
const DELTA_WINDOW: usize = 2;

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters as an n_mels × n_bins weight matrix covering
/// [0, nyquist].
pub fn mel_filterbank(n_mels: usize, n_bins: usize, sample_rate: u32) -> Mat {
    let nyquist = sample_rate as f64 / 2.0;
    let mel_max = hz_to_mel(nyquist);
    // n_mels + 2 equally spaced mel points define the triangle corners.
    let points: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = nyquist / (n_bins - 1) as f64;
    Mat::from_fn(n_mels, n_bins, |m, k| {
        let f = k as f64 * bin_hz;
        let (lo, mid, hi) = (points[m], points[m + 1], points[m + 2]);
        if f <= lo || f >= hi {
            0.0
        } else if f <= mid {
            (f - lo) / (mid - lo)
        } else {
            (hi - f) / (hi - mid)
        }
    })
}

/// T×(2·n_mels) features: log-mel energies (power spectrum, floored at 1e-10
/// before the log) followed by ±2-frame regression deltas. Delta windows are
/// clamped at utterance edges, so a constant or single-frame input has zero
/// deltas.
pub fn fbank_delta(spec: &Spectrogram, n_mels: usize) -> Result<Mat> {
    let nbins = spec.magnitudes.rows();
    let t_frames = spec.magnitudes.cols();
    if nbins < n_mels {
        return Err(Error::dim("fbank mel count", n_mels, nbins));
    }
    let fb = mel_filterbank(n_mels, nbins, spec.sample_rate);

    let mut statics = Mat::zeros(t_frames, n_mels);
    for t in 0..t_frames {
        for m in 0..n_mels {
            let mut e = 0.0;
            for k in 0..nbins {
                let w = fb.at(m, k);
                if w != 0.0 {
                    let mag = spec.magnitudes.at(k, t);
                    e += w * mag * mag;
                }
            }
            statics.set(t, m, e.max(LOG_FLOOR).ln());
        }
    }

    let denom: f64 = 2.0 * (1..=DELTA_WINDOW).map(|n| (n * n) as f64).sum::<f64>();
    let clamp = |t: isize| -> usize { t.clamp(0, t_frames as isize - 1) as usize };
    let mut out = Mat::zeros(t_frames, 2 * n_mels);
    for t in 0..t_frames {
        for m in 0..n_mels {
            out.set(t, m, statics.at(t, m));
            let mut d = 0.0;
            for n in 1..=DELTA_WINDOW {
                let fwd = statics.at(clamp(t as isize + n as isize), m);
                let bwd = statics.at(clamp(t as isize - n as isize), m);
                d += n as f64 * (fwd - bwd);
            }
            out.set(t, m + n_mels, d / denom);
        }
    }
    Ok(out)
}

/// Per-utterance mean normalization (in place, per feature dimension).
pub fn mean_normalize(feats: &mut Mat) {
    let (t_frames, dims) = (feats.rows(), feats.cols());
    if t_frames == 0 {
        return;
    }
    for d in 0..dims {
        let mean: f64 = (0..t_frames).map(|t| feats.at(t, d)).sum::<f64>() / t_frames as f64;
        for t in 0..t_frames {
            let v = feats.at(t, d) - mean;
            feats.set(t, d, v);
        }
    }
}

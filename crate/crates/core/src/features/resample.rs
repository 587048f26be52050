//! Speed perturbation by linear-interpolation resampling.

use super::Waveform;
use crate::{Error, Result};

/// Resamples so that both tempo and pitch scale by `factor`
/// (factor 0.9 → 10% slower and lower). Output length = round(len / factor).
pub fn speed_perturb(w: &Waveform, factor: f64) -> Result<Waveform> {
    if !(0.5..=2.0).contains(&factor) {
        return Err(Error::InvalidArg(format!(
            "speed factor {factor} outside [0.5, 2.0]"
        )));
    }
    let in_len = w.samples.len();
    let out_len = (in_len as f64 / factor).round() as usize;
    let mut out = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let pos = i as f64 * factor;
        let i0 = pos.floor() as usize;
        if i0 + 1 >= in_len {
            out.push(w.samples[in_len.saturating_sub(1).min(i0)]);
        } else {
            let frac = pos - i0 as f64;
            out.push(w.samples[i0] * (1.0 - frac) + w.samples[i0 + 1] * frac);
        }
    }
    Ok(Waveform {
        samples: out,
        sample_rate: w.sample_rate,
    })
}

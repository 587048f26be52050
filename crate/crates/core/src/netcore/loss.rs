//! Softmax cross-entropy and weighted loss interpolation.

use crate::{Error, Result};
use std::collections::BTreeMap;

/// Numerically stable softmax (max subtraction), natural-log domain throughout.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / z).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
    logits.iter().map(|&x| x - lse).collect()
}

/// Cross-entropy target: a hard class index or a full probability vector.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Class(usize),
    Soft(&'a [f64]),
}

/// Softmax cross-entropy loss and its gradient w.r.t. the logits.
///
/// loss = −Σ target·log softmax(logits); gradient = softmax(logits) − target.
pub fn softmax_ce(logits: &[f64], target: Target) -> Result<(f64, Vec<f64>)> {
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("softmax_ce logits".into()));
    }
    let lsm = log_softmax(logits);
    let p = softmax(logits);
    match target {
        Target::Class(idx) => {
            if idx >= logits.len() {
                return Err(Error::dim("softmax_ce class index", logits.len(), idx));
            }
            let loss = -lsm[idx];
            let mut grad = p;
            grad[idx] -= 1.0;
            Ok((loss, grad))
        }
        Target::Soft(t) => {
            if t.len() != logits.len() {
                return Err(Error::dim("softmax_ce soft target", logits.len(), t.len()));
            }
            let sum: f64 = t.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArg(format!(
                    "soft target sums to {sum}, expected 1 ± 1e-9"
                )));
            }
            let loss = -t.iter().zip(&lsm).map(|(ti, li)| ti * li).sum::<f64>();
            let grad = p.iter().zip(t).map(|(pi, ti)| pi - ti).collect();
            Ok((loss, grad))
        }
    }
}

/// A weighted multitask loss: the interpolated scalar plus the raw per-head values.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    /// Σ wᵢ·Lᵢ over the configured weights (natural-log units).
    pub scalar: f64,
    /// Unweighted component values, keyed by head name.
    pub per_head: BTreeMap<String, f64>,
}

/// Weighted sum of loss components.
///
/// Every nonzero-weighted head must be present in `components`; a missing head
/// is an error rather than a silent renormalization. Components outside
/// `weights` are carried through in `per_head` with zero contribution.
pub fn interpolate_losses(
    weights: &BTreeMap<String, f64>,
    components: &BTreeMap<String, f64>,
) -> Result<LossValue> {
    let mut scalar = 0.0;
    for (head, &w) in weights {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::InvalidArg(format!("weight {head}={w} must be finite and ≥ 0")));
        }
        match components.get(head) {
            Some(&l) => scalar += w * l,
            None if w == 0.0 => {}
            None => {
                return Err(Error::MissingComponent {
                    head: head.clone(),
                    weight: w,
                })
            }
        }
    }
    Ok(LossValue {
        scalar,
        per_head: components.clone(),
    })
}

/// Convenience constructor for weight maps.
pub fn weights(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

//! Minimal differentiable dense-network kernel.
//!
//! Explicit forward/backward over stacks of affine+activation layers, softmax
//! cross-entropy, weighted loss interpolation, plain SGD and a
//! finite-difference gradient checker. Training here is single-threaded and
//! bit-reproducible under a fixed seed; the pure operations (forward, losses,
//! gradient checks) are re-entrant.

pub mod ckpt;
mod gradcheck;
mod loss;
mod mat;
mod net;

pub use gradcheck::{check_gradients, GradCheckConfig, GradCheckReport};
pub use loss::{interpolate_losses, log_softmax, softmax, softmax_ce, weights, LossValue, Target};
pub use mat::Mat;
pub use net::{sgd_step, Activation, Backward, Forward, Layer, NetParams};

use crate::{Error, Result};
use std::collections::BTreeMap;

/// Shared training hyperparameters.
///
/// `epochs = 0` is allowed and means "return the initialized model unchanged".
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: u32,
    pub batch_size: usize,
    pub seed: u64,
    /// Loss-head interpolation weights (ω/α/β); consumers fill defaults when empty.
    pub loss_weights: BTreeMap<String, f64>,
}

impl TrainConfig {
    pub fn new(learning_rate: f64, epochs: u32, batch_size: usize, seed: u64) -> Self {
        TrainConfig {
            learning_rate,
            epochs,
            batch_size,
            seed,
            loss_weights: BTreeMap::new(),
        }
    }

    pub fn with_weight(mut self, head: &str, w: f64) -> Self {
        self.loss_weights.insert(head.to_string(), w);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArg(format!(
                "learning_rate {} must be finite and > 0",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArg("batch_size must be ≥ 1".into()));
        }
        if !self.loss_weights.is_empty() {
            let mut sum = 0.0;
            for (k, &w) in &self.loss_weights {
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::InvalidArg(format!("loss weight {k}={w} must be ≥ 0")));
                }
                sum += w;
            }
            if sum <= 0.0 {
                return Err(Error::InvalidArg("loss_weights must sum > 0".into()));
            }
        }
        Ok(())
    }
}

//! Finite-difference gradient verification harness.

use crate::util::rng::SplitMix64;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Number of randomly sampled coordinates to probe.
    pub samples: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            samples: 120,
            tolerance: 1e-4,
            seed: 0x5e7a,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub worst_coord: usize,
    pub passed: bool,
}

/// Compares `analytic` against central finite differences of `loss` at `theta`
/// on a random coordinate subsample.
///
/// Relative error per coordinate is |a−n| / max(|a|, |n|, 1e-8).
pub fn check_gradients<F>(
    mut loss: F,
    theta: &[f64],
    analytic: &[f64],
    cfg: &GradCheckConfig,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(theta.len(), analytic.len(), "gradient length");
    let dim = theta.len();
    let coords: Vec<usize> = if cfg.samples >= dim {
        (0..dim).collect()
    } else {
        let mut idx: Vec<usize> = (0..dim).collect();
        let mut rng = SplitMix64::new(cfg.seed);
        rng.shuffle(&mut idx);
        idx.truncate(cfg.samples);
        idx
    };

    let mut probe = theta.to_vec();
    let mut max_rel = 0.0;
    let mut worst = 0;
    for &i in &coords {
        let orig = probe[i];
        probe[i] = orig + cfg.step;
        let up = loss(&probe);
        probe[i] = orig - cfg.step;
        let down = loss(&probe);
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * cfg.step);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
            worst = i;
        }
    }
    GradCheckReport {
        max_rel_err: max_rel,
        checked: coords.len(),
        worst_coord: worst,
        passed: max_rel < cfg.tolerance,
    }
}

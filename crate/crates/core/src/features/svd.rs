//! Spectral-basis extraction via one-sided Jacobi SVD.

use super::{SpectralBases, Spectrogram};
use crate::netcore::Mat;
use crate::{Error, Result};

const JACOBI_EPS: f64 = 1e-13;
const MAX_SWEEPS: usize = 60;

/// Top-k left singular vectors of the F×T magnitude matrix, with singular
/// values sorted descending. Sign convention: the largest-magnitude component
/// of each basis is positive, so embeddings are reproducible.
pub fn svd_spectral_bases(spec: &Spectrogram, k: usize) -> Result<SpectralBases> {
    let f_bins = spec.magnitudes.rows();
    let t_frames = spec.magnitudes.cols();
    if k == 0 || t_frames < k || f_bins < k {
        return Err(Error::InvalidArg(format!(
            "svd: need T ≥ k and F ≥ k (k={k}, F={f_bins}, T={t_frames})"
        )));
    }

    // One-sided Jacobi orthogonalizes the columns of the narrower orientation;
    // after convergence each column is σᵢ·(singular vector).
    let tall = t_frames <= f_bins; // operate on X (columns length F) if T ≤ F, else on Xᵀ
    let (rows, cols) = if tall { (f_bins, t_frames) } else { (t_frames, f_bins) };
    let mut a: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            (0..rows)
                .map(|i| {
                    if tall {
                        spec.magnitudes.at(i, j)
                    } else {
                        spec.magnitudes.at(j, i)
                    }
                })
                .collect()
        })
        .collect();

    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let (mut app, mut aqq, mut apq) = (0.0, 0.0, 0.0);
                for i in 0..rows {
                    app += a[p][i] * a[p][i];
                    aqq += a[q][i] * a[q][i];
                    apq += a[p][i] * a[q][i];
                }
                if apq.abs() <= JACOBI_EPS * (app * aqq).sqrt() || apq == 0.0 {
                    continue;
                }
                rotated = true;
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let (vp, vq) = (a[p][i], a[q][i]);
                    a[p][i] = c * vp - s * vq;
                    a[q][i] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<(f64, usize)> = a
        .iter()
        .enumerate()
        .map(|(j, col)| (col.iter().map(|x| x * x).sum::<f64>().sqrt(), j))
        .collect();
    order.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));

    if order[0].0 <= 0.0 {
        return Err(Error::RankDeficient);
    }
    let sigma_max = order[0].0;

    let mut bases: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut sigmas = Vec::with_capacity(k);
    for i in 0..k {
        let (sigma, j) = order[i];
        sigmas.push(sigma);
        if sigma > 1e-12 * sigma_max {
            let mut u: Vec<f64> = if tall {
                a[j].iter().map(|x| x / sigma).collect()
            } else {
                // Left vector from the right vector: u = X v / σ.
                let v: Vec<f64> = a[j].iter().map(|x| x / sigma).collect();
                (0..f_bins)
                    .map(|r| {
                        (0..t_frames)
                            .map(|c| spec.magnitudes.at(r, c) * v[c])
                            .sum::<f64>()
                            / sigma
                    })
                    .collect()
            };
            normalize(&mut u);
            bases.push(u);
        } else {
            // Numerically rank-deficient direction: deterministic orthonormal
            // completion from the standard basis.
            bases.push(complete_basis(&bases, f_bins));
        }
    }

    for u in &mut bases {
        fix_sign(u);
    }
    Ok(SpectralBases {
        bases: Mat::from_rows(&bases),
        singular_values: sigmas,
    })
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}

fn fix_sign(v: &mut [f64]) {
    let mut arg = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[arg].abs() {
            arg = i;
        }
    }
    if v[arg] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

fn complete_basis(existing: &[Vec<f64>], dim: usize) -> Vec<f64> {
    for axis in 0..dim {
        let mut cand = vec![0.0; dim];
        cand[axis] = 1.0;
        for b in existing {
            let dot: f64 = cand.iter().zip(b).map(|(x, y)| x * y).sum();
            for (c, bi) in cand.iter_mut().zip(b) {
                *c -= dot * bi;
            }
        }
        let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.5 {
            for c in cand.iter_mut() {
                *c /= norm;
            }
            return cand;
        }
    }
    unreachable!("fewer than dim orthonormal vectors always leave a completion")
}

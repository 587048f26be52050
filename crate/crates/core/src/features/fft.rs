//! Iterative radix-2 complex FFT with precomputed twiddles.
//! Power-of-two sizes only, which is all the STFT front-end needs.

use std::f64::consts::PI;

pub struct Fft {
    n: usize,
    // exp(-2πik/n) for k < n/2
    wr: Vec<f64>,
    wi: Vec<f64>,
}

impl Fft {
    pub fn new(n: usize) -> Self {
        assert!(n.is_power_of_two() && n >= 1, "FFT size must be a power of two");
        let half = (n / 2).max(1);
        let mut wr = Vec::with_capacity(half);
        let mut wi = Vec::with_capacity(half);
        for k in 0..half {
            let ang = -2.0 * PI * k as f64 / n as f64;
            wr.push(ang.cos());
            wi.push(ang.sin());
        }
        Fft { n, wr, wi }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In-place forward DFT of (re, im).
    pub fn forward(&self, re: &mut [f64], im: &mut [f64]) {
        let n = self.n;
        assert_eq!(re.len(), n);
        assert_eq!(im.len(), n);
        if n == 1 {
            return;
        }
        // Bit-reversal permutation.
        let mut j = 0usize;
        for i in 1..n {
            let mut bit = n >> 1;
            while j & bit != 0 {
                j ^= bit;
                bit >>= 1;
            }
            j |= bit;
            if i < j {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let stride = n / len;
            let half = len / 2;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let (cr, ci) = (self.wr[k * stride], self.wi[k * stride]);
                    let (or, oi) = (re[start + k + half], im[start + k + half]);
                    let tr = or * cr - oi * ci;
                    let ti = or * ci + oi * cr;
                    let (er, ei) = (re[start + k], im[start + k]);
                    re[start + k] = er + tr;
                    im[start + k] = ei + ti;
                    re[start + k + half] = er - tr;
                    im[start + k + half] = ei - ti;
                }
            }
            len <<= 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Naive O(n²) DFT oracle.
    fn dft(x: &[f64]) -> Vec<(f64, f64)> {
        let n = x.len();
        (0..n)
            .map(|k| {
                let mut re = 0.0;
                let mut im = 0.0;
                for (t, &v) in x.iter().enumerate() {
                    let ang = -2.0 * PI * (k * t) as f64 / n as f64;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                (re, im)
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft() {
        let n = 64;
        let x: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 13) as f64 - 6.0).collect();
        let oracle = dft(&x);
        let fft = Fft::new(n);
        let mut re = x.clone();
        let mut im = vec![0.0; n];
        fft.forward(&mut re, &mut im);
        for k in 0..n {
            assert!((re[k] - oracle[k].0).abs() < 1e-9, "re bin {k}");
            assert!((im[k] - oracle[k].1).abs() < 1e-9, "im bin {k}");
        }
    }

    #[test]
    fn impulse_is_flat() {
        let fft = Fft::new(8);
        let mut re = vec![0.0; 8];
        let mut im = vec![0.0; 8];
        re[0] = 1.0;
        fft.forward(&mut re, &mut im);
        for k in 0..8 {
            assert!((re[k] - 1.0).abs() < 1e-12);
            assert!(im[k].abs() < 1e-12);
        }
    }
}

//! Sample moments and deterministic summation.

use serde::Serialize;

/// Pairwise (cascade) summation; the result depends only on the order of `xs`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Mean and variance of a sample together with their standard errors.
///
/// `se_variance` is the distribution-free estimate `sqrt((m4 - v^2) / N)`;
/// `se_variance_normal` is the Gaussian-theory value `v * sqrt(2 / (N - 1))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SampleMoments {
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
    pub se_mean: f64,
    pub se_variance: f64,
    pub se_variance_normal: f64,
}

impl SampleMoments {
    pub fn from_slice(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                count: 0,
                mean: f64::NAN,
                variance: f64::NAN,
                se_mean: f64::NAN,
                se_variance: f64::NAN,
                se_variance_normal: f64::NAN,
            };
        }
        let nf = n as f64;
        // shift by the first value so that a constant sample has exactly zero spread
        let x0 = xs[0];
        let shifted: Vec<f64> = xs.iter().map(|x| x - x0).collect();
        let mean_shift = pairwise_sum(&shifted) / nf;
        let mean = x0 + mean_shift;
        let dev2: Vec<f64> = shifted
            .iter()
            .map(|y| (y - mean_shift) * (y - mean_shift))
            .collect();
        let ss = pairwise_sum(&dev2);
        let variance = if n > 1 { ss / (nf - 1.0) } else { 0.0 };
        let m2 = ss / nf;
        let dev4: Vec<f64> = dev2.iter().map(|d| d * d).collect();
        let m4 = pairwise_sum(&dev4) / nf;
        let se_mean = (variance / nf).sqrt();
        let se_variance = ((m4 - m2 * m2).max(0.0) / nf).sqrt();
        let se_variance_normal = if n > 1 {
            variance * (2.0 / (nf - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            count: n,
            mean,
            variance,
            se_mean,
            se_variance,
            se_variance_normal,
        }
    }
}

//! Small summary-statistics helpers shared by the analysis and evaluation code.

use serde::{Deserialize, Serialize};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator); zero for fewer than two values.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// A "mean ± sd" summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    pub fn of(xs: &[f64]) -> MeanSd {
        MeanSd { mean: mean(xs), sd: sample_sd(xs) }
    }
}

impl std::fmt::Display for MeanSd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let p = f.precision().unwrap_or(3);
        write!(f, "{:.*} ± {:.*}", p, self.mean, p, self.sd)
    }
}

/// Linearly resamples a series onto `bins` evenly spaced points spanning its full length.
pub fn resample(series: &[f64], bins: usize) -> Vec<f64> {
    match (series.len(), bins) {
        (_, 0) => Vec::new(),
        (0, _) => vec![f64::NAN; bins],
        (1, _) => vec![series[0]; bins],
        (n, 1) => vec![series[n / 2]],
        (n, _) => (0..bins)
            .map(|i| {
                let x = i as f64 * (n - 1) as f64 / (bins - 1) as f64;
                let k = (x.floor() as usize).min(n - 2);
                let t = x - k as f64;
                series[k] * (1.0 - t) + series[k + 1] * t
            })
            .collect(),
    }
}

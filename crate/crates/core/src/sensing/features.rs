use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Summary statistics of one trace or trace window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    pub min: f64,
    pub max: f64,
    pub iqr: f64,
    pub lag1_autocorrelation: f64,
}

impl FeatureVector {
    pub const DIM: usize = 6;

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.mean,
            self.variance,
            self.min,
            self.max,
            self.iqr,
            self.lag1_autocorrelation,
        ]
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn extract_features(samples: &[f64]) -> Result<FeatureVector> {
    if samples.len() < 2 {
        return Err(Error::arg(format!(
            "need at least 2 samples for features, got {}",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let ss: f64 = samples.iter().map(|x| (x - mean).powi(2)).sum();
    let variance = ss / n;

    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);

    let lag1_autocorrelation = if ss > 0.0 {
        samples
            .windows(2)
            .map(|w| (w[0] - mean) * (w[1] - mean))
            .sum::<f64>()
            / ss
    } else {
        0.0
    };

    Ok(FeatureVector {
        // Clamp guards rounding drift on near-constant input.
        mean: mean.clamp(sorted[0], sorted[sorted.len() - 1]),
        variance,
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        iqr,
        lag1_autocorrelation,
    })
}

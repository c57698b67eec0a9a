//! Gaussian kernel density estimates of KPI marginals.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bandwidth used when the sample spread is zero.
pub const MIN_BANDWIDTH: f64 = 1e-9;
/// Retained samples above this count are reservoir-sampled down.
pub const DEFAULT_SAMPLE_CAP: usize = 10_000;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySummary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// A univariate Gaussian KDE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityModel {
    pub summary: DensitySummary,
    pub bandwidth: f64,
    pub samples: Vec<f64>,
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Silverman's rule `0.9 · min(σ, IQR/1.34) · n^(-1/5)`.
///
/// When one of the two spreads is zero (e.g. a KPI that mostly sits on one
/// value) the other is used; the result is floored at [`MIN_BANDWIDTH`].
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len();
    if n < 2 {
        return MIN_BANDWIDTH;
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let std = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = (quantile(&sorted, 0.75) - quantile(&sorted, 0.25)) / 1.34;
    let spread = match (std > 0.0, iqr > 0.0) {
        (true, true) => std.min(iqr),
        (true, false) => std,
        (false, true) => iqr,
        (false, false) => 0.0,
    };
    (0.9 * spread * (n as f64).powf(-0.2)).max(MIN_BANDWIDTH)
}

/// Fits a KDE retaining at most [`DEFAULT_SAMPLE_CAP`] samples.
pub fn fit_kde(samples: &[f64]) -> Result<DensityModel> {
    fit_kde_capped(samples, DEFAULT_SAMPLE_CAP, 0)
}

/// Fits a KDE; inputs longer than `cap` are reservoir-sampled with `seed`.
///
/// Retained samples are stored sorted, which makes the fit independent of input order.
pub fn fit_kde_capped(samples: &[f64], cap: usize, seed: u64) -> Result<DensityModel> {
    if samples.is_empty() || cap == 0 {
        return Err(Error::EmptySamples);
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("non-finite sample".into()));
    }
    let mut kept: Vec<f64> = if samples.len() > cap {
        // sort first so the subsample is a function of the multiset, not its order
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample(&mut rng, sorted.len(), cap).into_iter().map(|i| sorted[i]).collect()
    } else {
        samples.to_vec()
    };
    kept.sort_by(f64::total_cmp);
    let n = kept.len();
    let mean = kept.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (kept.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(DensityModel {
        summary: DensitySummary {
            n,
            mean,
            std,
            min: kept[0],
            max: kept[n - 1],
        },
        bandwidth: silverman_bandwidth(&kept),
        samples: kept,
    })
}

impl DensityModel {
    /// `(1/(n·h)) · Σ φ((y − sᵢ)/h)`.
    pub fn pdf(&self, y: f64) -> f64 {
        let h = self.bandwidth;
        let sum: f64 = self
            .samples
            .iter()
            .map(|s| {
                let z = (y - s) / h;
                (-0.5 * z * z).exp()
            })
            .sum();
        sum * INV_SQRT_2PI / (self.samples.len() as f64 * h)
    }
}

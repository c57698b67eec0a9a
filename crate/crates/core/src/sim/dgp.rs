//! Synthetic local-structure data-generating processes with known treatment effects.
//!
//! | kind | equations |
//! |------|-----------|
//! | `LS_A` (no confounder) | `X1, X2 ~ U(-1,1)`, `Y = θ1·X1 + θ2·X2 + ε` |
//! | `LS_B` (observed confounder) | `X1 ~ U(-1,1)`, `X2 = θ1·X1 + η`, `Y = θ2·X1 + θ3·X2 + ε` |
//! | `LS_C` (latent confounder) | `IV, X1 ~ U(-1,1)`, `X2 = θ1·X1 + θ2·IV + η`, `Y = θ3·X1 + θ4·X2 + ε` |
//!
//! All noise terms are `U(-1,1)`. In `LS_C`, `X1` is generated but never emitted.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, KpiMeta, Segment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LocalStructure {
    #[serde(rename = "LS_A")]
    NoConfounder,
    #[serde(rename = "LS_B")]
    ObservedConfounder,
    #[serde(rename = "LS_C")]
    LatentConfounder,
}

impl LocalStructure {
    pub const ALL: [LocalStructure; 3] = [
        LocalStructure::NoConfounder,
        LocalStructure::ObservedConfounder,
        LocalStructure::LatentConfounder,
    ];

    pub fn theta_count(self) -> usize {
        match self {
            LocalStructure::NoConfounder => 2,
            LocalStructure::ObservedConfounder => 3,
            LocalStructure::LatentConfounder => 4,
        }
    }

    /// Name of the observed context column (`X1`, or the instrument for `LS_C`).
    pub fn context_column(self) -> &'static str {
        match self {
            LocalStructure::LatentConfounder => "IV",
            _ => "X1",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            LocalStructure::NoConfounder => "LS_A",
            LocalStructure::ObservedConfounder => "LS_B",
            LocalStructure::LatentConfounder => "LS_C",
        }
    }
}

impl std::str::FromStr for LocalStructure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LS_A" | "A" => Ok(LocalStructure::NoConfounder),
            "LS_B" | "B" => Ok(LocalStructure::ObservedConfounder),
            "LS_C" | "C" => Ok(LocalStructure::LatentConfounder),
            _ => Err(Error::InvalidArgument(format!("unknown local structure `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub kind: LocalStructure,
    pub thetas: Vec<f64>,
    pub seed: u64,
}

impl DgpSpec {
    pub fn new(kind: LocalStructure, thetas: Vec<f64>, seed: u64) -> Result<Self> {
        if thetas.len() != kind.theta_count() {
            return Err(Error::InvalidArgument(format!(
                "{} needs {} coefficients, got {}",
                kind.label(),
                kind.theta_count(),
                thetas.len()
            )));
        }
        if thetas.iter().any(|t| !t.is_finite() || *t == 0.0) {
            return Err(Error::InvalidArgument("coefficients must be finite and nonzero".into()));
        }
        Ok(Self { kind, thetas, seed })
    }

    /// Coefficients drawn uniformly from `±[0.5, 2.0]`, seeded.
    pub fn random(kind: LocalStructure, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e7a_5eed);
        let thetas = (0..kind.theta_count())
            .map(|_| {
                let magnitude = rng.random_range(0.5..=2.0);
                if rng.random_bool(0.5) {
                    magnitude
                } else {
                    -magnitude
                }
            })
            .collect();
        Self { kind, thetas, seed }
    }

    /// Coefficient of `X2` in the equation for `Y`.
    pub fn treatment_coefficient(&self) -> f64 {
        *self.thetas.last().expect("validated theta list")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualQuery {
    pub x1: f64,
    pub x2_from: f64,
    pub x2_to: f64,
    pub true_te: f64,
}

fn u(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(-1.0..1.0)
}

/// Draws `n` rows. Columns are `(X1, X2, Y)`, or `(IV, X2, Y)` for `LS_C`.
pub fn sample_dgp(spec: &DgpSpec, n: usize) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let spec = DgpSpec::new(spec.kind, spec.thetas.clone(), spec.seed)?;
    let t = &spec.thetas;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut values = Vec::with_capacity(3 * n);
    for _ in 0..n {
        let row = match spec.kind {
            LocalStructure::NoConfounder => {
                let (x1, x2, eps) = (u(&mut rng), u(&mut rng), u(&mut rng));
                [x1, x2, t[0] * x1 + t[1] * x2 + eps]
            }
            LocalStructure::ObservedConfounder => {
                let (x1, eta, eps) = (u(&mut rng), u(&mut rng), u(&mut rng));
                let x2 = t[0] * x1 + eta;
                [x1, x2, t[1] * x1 + t[2] * x2 + eps]
            }
            LocalStructure::LatentConfounder => {
                let (iv, x1, eta, eps) = (u(&mut rng), u(&mut rng), u(&mut rng), u(&mut rng));
                let x2 = t[0] * x1 + t[1] * iv + eta;
                [iv, x2, t[2] * x1 + t[3] * x2 + eps]
            }
        };
        values.extend_from_slice(&row);
    }
    let first = match spec.kind {
        LocalStructure::LatentConfounder => KpiMeta::chaos("IV").with_description("instrument"),
        _ => KpiMeta::kpi("X1"),
    };
    Dataset::from_row_major(vec![first, KpiMeta::kpi("X2"), KpiMeta::kpi("Y")], values)?
        .with_segments(vec![Segment::baseline(0, n)])
}

/// Random "change X2 from x2 to x2' while X1 = x1" queries with analytic effects.
pub fn generate_queries(spec: &DgpSpec, m: usize, seed: u64) -> Result<Vec<CounterfactualQuery>> {
    if m == 0 {
        return Err(Error::InvalidArgument("m must be at least 1".into()));
    }
    let beta = spec.treatment_coefficient();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..m)
        .map(|_| {
            let (x1, x2_from, x2_to) = (u(&mut rng), u(&mut rng), u(&mut rng));
            CounterfactualQuery {
                x1,
                x2_from,
                x2_to,
                true_te: beta * (x2_to - x2_from),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regress::{correlation, covariance, mean, variance};

    #[test]
    fn theta_counts_are_checked() {
        assert!(DgpSpec::new(LocalStructure::NoConfounder, vec![1.0], 0).is_err());
        assert!(DgpSpec::new(LocalStructure::ObservedConfounder, vec![1.0, 0.0, 2.0], 0).is_err());
        assert!(DgpSpec::new(LocalStructure::LatentConfounder, vec![1.0; 4], 0).is_ok());
    }

    #[test]
    fn random_thetas_bounded_away_from_zero() {
        for seed in 0..50 {
            let s = DgpSpec::random(LocalStructure::LatentConfounder, seed);
            assert!(s.thetas.iter().all(|t| (0.5..=2.0).contains(&t.abs())));
        }
    }

    #[test]
    fn ls_a_independent_exogenous_columns() {
        let spec = DgpSpec::new(LocalStructure::NoConfounder, vec![1.0, 2.0], 42).unwrap();
        let d = sample_dgp(&spec, 5000).unwrap();
        let (x1, x2) = (d.column("X1").unwrap(), d.column("X2").unwrap());
        assert!(correlation(&x1, &x2).abs() < 0.05);
        let bound = 3.0 / (5000f64).sqrt() * (2.0 / 12f64.sqrt());
        for col in [&x1, &x2] {
            assert!(col.iter().all(|v| (-1.0..=1.0).contains(v)));
            assert!(mean(col).abs() < bound);
        }
    }

    #[test]
    fn ls_b_confounding_is_present() {
        let theta1 = 1.5;
        let spec = DgpSpec::new(LocalStructure::ObservedConfounder, vec![theta1, 1.0, 2.0], 5).unwrap();
        let d = sample_dgp(&spec, 5000).unwrap();
        let (x1, x2) = (d.column("X1").unwrap(), d.column("X2").unwrap());
        let expected = theta1 * variance(&x1);
        assert!((covariance(&x1, &x2) - expected).abs() / expected < 0.1);
        assert!((covariance(&x1, &x2) - theta1 / 3.0).abs() / (theta1 / 3.0) < 0.1);
    }

    #[test]
    fn ls_c_hides_x1() {
        let spec = DgpSpec::new(LocalStructure::LatentConfounder, vec![1.0, 1.0, 1.0, 2.0], 1).unwrap();
        let d = sample_dgp(&spec, 10).unwrap();
        assert_eq!(d.column_names(), vec!["IV", "X2", "Y"]);
        assert!(d.meta("IV").unwrap().is_chaos());
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = DgpSpec::random(LocalStructure::ObservedConfounder, 9);
        assert_eq!(sample_dgp(&spec, 100).unwrap(), sample_dgp(&spec, 100).unwrap());
        assert_eq!(generate_queries(&spec, 10, 3).unwrap(), generate_queries(&spec, 10, 3).unwrap());
    }

    #[test]
    fn query_effects_follow_y_equation() {
        let a = DgpSpec::new(LocalStructure::NoConfounder, vec![1.0, 2.0], 0).unwrap();
        assert_eq!(a.treatment_coefficient() * (1.0 - 0.0), 2.0);
        let b = DgpSpec::new(LocalStructure::ObservedConfounder, vec![1.0, 1.0, 1.5], 0).unwrap();
        assert_eq!(b.treatment_coefficient() * (0.5 - (-0.5)), 1.5);
        for q in generate_queries(&b, 100, 1).unwrap() {
            assert_eq!(q.true_te, 1.5 * (q.x2_to - q.x2_from));
        }
        assert!(generate_queries(&b, 0, 1).is_err());
        assert!(sample_dgp(&b, 0).is_err());
    }
}

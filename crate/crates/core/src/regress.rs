//! Least-squares and regression-tree learners used by the effect estimators.
//!
//! Features are passed column-major: `features[j][i]` is feature `j` of row `i`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest eigenvalue of the feature correlation matrix tolerated before the
/// design is declared collinear.
const COLLINEARITY_TOL: f64 = 1e-10;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

/// Population covariance.
pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    xs.iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / xs.len() as f64
}

pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let denom = (variance(xs) * variance(ys)).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        covariance(xs, ys) / denom
    }
}

/// Coefficient of determination of `pred` against `y`.
pub fn r_squared(y: &[f64], pred: &[f64]) -> f64 {
    let m = mean(y);
    let ss_tot: f64 = y.iter().map(|v| (v - m) * (v - m)).sum();
    let ss_res: f64 = y.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum();
    if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    }
}

/// Ordinary least squares with intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub r2: f64,
    pub residual_variance: f64,
}

impl LinearFit {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(row)
                .map(|(b, x)| b * x)
                .sum::<f64>()
    }

    pub fn predict(&self, features: &[Vec<f64>], n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| {
                self.intercept
                    + self
                        .coefficients
                        .iter()
                        .zip(features)
                        .map(|(b, col)| b * col[i])
                        .sum::<f64>()
            })
            .collect()
    }
}

/// Fits `y ~ 1 + features` by solving the centered normal equations.
pub fn ols(features: &[Vec<f64>], y: &[f64]) -> Result<LinearFit> {
    let n = y.len();
    let p = features.len();
    if n == 0 {
        return Err(Error::DegenerateData("no rows".into()));
    }
    if let Some(col) = features.iter().find(|c| c.len() != n) {
        return Err(Error::LengthMismatch(col.len(), n));
    }
    if n <= p {
        return Err(Error::DegenerateData(format!("{n} rows for {p} features")));
    }
    let y_mean = mean(y);
    if p == 0 {
        let residual_variance = variance(y);
        return Ok(LinearFit {
            intercept: y_mean,
            coefficients: Vec::new(),
            r2: 0.0,
            residual_variance,
        });
    }
    let means: Vec<f64> = features.iter().map(|c| mean(c)).collect();
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    for i in 0..n {
        let yc = y[i] - y_mean;
        for a in 0..p {
            let xa = features[a][i] - means[a];
            xty[a] += xa * yc;
            for b in a..p {
                xtx[(a, b)] += xa * (features[b][i] - means[b]);
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtx[(a, b)] = xtx[(b, a)];
        }
    }
    let scale: Vec<f64> = (0..p).map(|a| xtx[(a, a)].sqrt()).collect();
    if let Some(a) = scale.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::DegenerateData(format!("feature {a} has zero variance")));
    }
    let corr = DMatrix::from_fn(p, p, |a, b| xtx[(a, b)] / (scale[a] * scale[b]));
    let min_eig = corr.clone().symmetric_eigen().eigenvalues.min();
    if min_eig < COLLINEARITY_TOL {
        return Err(Error::DegenerateData("collinear features".into()));
    }
    let rhs = DVector::from_fn(p, |a, _| xty[a] / scale[a]);
    let solved = corr
        .cholesky()
        .ok_or_else(|| Error::DegenerateData("normal equations not positive definite".into()))?
        .solve(&rhs);
    let coefficients: Vec<f64> = (0..p).map(|a| solved[a] / scale[a]).collect();
    let intercept = y_mean - coefficients.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
    let fit = LinearFit {
        intercept,
        coefficients,
        r2: 0.0,
        residual_variance: 0.0,
    };
    let pred = fit.predict(features, n);
    let residual_variance = y.iter().zip(&pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64;
    Ok(LinearFit {
        r2: r_squared(y, &pred),
        residual_variance,
        ..fit
    })
}

/// Regressor family for nuisance and baseline models.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum RegressorSpec {
    #[default]
    Linear,
    Polynomial { degree: usize },
    RegressionTree { depth: usize },
}

impl RegressorSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RegressorSpec::Polynomial { degree } if !(1..=3).contains(&degree) => Err(
                Error::InvalidArgument(format!("polynomial degree {degree} outside 1..=3")),
            ),
            RegressorSpec::RegressionTree { depth } if !(1..=8).contains(&depth) => Err(
                Error::InvalidArgument(format!("tree depth {depth} outside 1..=8")),
            ),
            _ => Ok(()),
        }
    }

    pub fn fit(&self, features: &[Vec<f64>], y: &[f64]) -> Result<FittedRegressor> {
        self.validate()?;
        match *self {
            RegressorSpec::Linear => Ok(FittedRegressor::Linear(ols(features, y)?)),
            RegressorSpec::Polynomial { degree } => {
                let expanded = polynomial_features(features, degree);
                Ok(FittedRegressor::Polynomial {
                    degree,
                    fit: ols(&expanded, y)?,
                })
            }
            RegressorSpec::RegressionTree { depth } => {
                Ok(FittedRegressor::Tree(RegressionTree::fit(features, y, depth, 5)?))
            }
        }
    }
}

/// Per-feature powers `x, x², …, x^degree` (no interactions).
pub fn polynomial_features(features: &[Vec<f64>], degree: usize) -> Vec<Vec<f64>> {
    features
        .iter()
        .flat_map(|col| (1..=degree).map(move |d| col.iter().map(|x| x.powi(d as i32)).collect()))
        .collect()
}

#[derive(Debug, Clone)]
pub enum FittedRegressor {
    Linear(LinearFit),
    Polynomial { degree: usize, fit: LinearFit },
    Tree(RegressionTree),
}

impl FittedRegressor {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match self {
            FittedRegressor::Linear(fit) => fit.predict_row(row),
            FittedRegressor::Polynomial { degree, fit } => {
                let expanded: Vec<f64> = row
                    .iter()
                    .flat_map(|x| (1..=*degree).map(move |d| x.powi(d as i32)))
                    .collect();
                fit.predict_row(&expanded)
            }
            FittedRegressor::Tree(tree) => tree.predict_row(row),
        }
    }

    pub fn predict(&self, features: &[Vec<f64>], n: usize) -> Vec<f64> {
        let mut row = vec![0.0; features.len()];
        (0..n)
            .map(|i| {
                for (r, col) in row.iter_mut().zip(features) {
                    *r = col[i];
                }
                self.predict_row(&row)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
enum TreeNode {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

/// CART regression tree with squared-error splits.
#[derive(Debug, Clone)]
pub struct RegressionTree {
    root: TreeNode,
}

impl RegressionTree {
    pub fn fit(features: &[Vec<f64>], y: &[f64], max_depth: usize, min_leaf: usize) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::DegenerateData("no rows".into()));
        }
        if let Some(col) = features.iter().find(|c| c.len() != n) {
            return Err(Error::LengthMismatch(col.len(), n));
        }
        let rows: Vec<usize> = (0..n).collect();
        Ok(Self {
            root: grow(features, y, rows, max_depth, min_leaf.max(1)),
        })
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut node = &self.root;
        loop {
            match node {
                TreeNode::Leaf(v) => return *v,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if row[*feature] <= *threshold { left } else { right },
            }
        }
    }
}

fn grow(features: &[Vec<f64>], y: &[f64], rows: Vec<usize>, depth: usize, min_leaf: usize) -> TreeNode {
    let n = rows.len();
    let total: f64 = rows.iter().map(|&r| y[r]).sum();
    let leaf = TreeNode::Leaf(total / n as f64);
    if depth == 0 || n < 2 * min_leaf {
        return leaf;
    }
    let total_sq: f64 = rows.iter().map(|&r| y[r] * y[r]).sum();
    let parent_sse = total_sq - total * total / n as f64;
    let mut best: Option<(f64, usize, f64)> = None;
    for (f, col) in features.iter().enumerate() {
        let mut sorted = rows.clone();
        sorted.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
        let (mut sum_l, mut sq_l) = (0.0, 0.0);
        for k in 0..n - 1 {
            let v = y[sorted[k]];
            sum_l += v;
            sq_l += v * v;
            let n_l = k + 1;
            let n_r = n - n_l;
            if n_l < min_leaf || n_r < min_leaf || col[sorted[k]] == col[sorted[k + 1]] {
                continue;
            }
            let sum_r = total - sum_l;
            let sse = (sq_l - sum_l * sum_l / n_l as f64) + (total_sq - sq_l - sum_r * sum_r / n_r as f64);
            if best.is_none_or(|(b, _, _)| sse < b) {
                best = Some((sse, f, 0.5 * (col[sorted[k]] + col[sorted[k + 1]])));
            }
        }
    }
    match best {
        Some((sse, feature, threshold)) if sse < parent_sse - 1e-12 * parent_sse.abs() => {
            let (l, r): (Vec<usize>, Vec<usize>) =
                rows.into_iter().partition(|&i| features[feature][i] <= threshold);
            TreeNode::Split {
                feature,
                threshold,
                left: Box::new(grow(features, y, l, depth - 1, min_leaf)),
                right: Box::new(grow(features, y, r, depth - 1, min_leaf)),
            }
        }
        _ => leaf,
    }
}

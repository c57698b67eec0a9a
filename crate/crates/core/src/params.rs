//! Per-edge treatment-effect estimation and SEM assembly.
//!
//! Three estimators share one output type, [`AteModel`]:
//! ordinary least squares with the co-parents as covariates, double machine
//! learning (cross-fitted partialling out of observed confounders) and
//! two-stage least squares with a chaos variable as instrument.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{fit_kde_capped, DensityModel, DEFAULT_SAMPLE_CAP};
use crate::error::{Error, Result};
use crate::graph::CausalGraph;
use crate::model::Dataset;
use crate::regress::{mean, ols, r_squared, variance, RegressorSpec};

pub const DEFAULT_WEAK_INSTRUMENT_R2: f64 = 0.01;
const MIN_ROWS_OLS: usize = 10;
const MIN_ROWS_CROSS_FIT: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Ols,
    Dml,
    #[serde(rename = "iv2sls")]
    Iv2sls,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteDiagnostics {
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_stage_r2: Option<f64>,
    pub residual_r2: f64,
}

/// A fitted treatment → outcome effect `f(x) = Σ c_k · x^(k+1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteModel {
    pub treatment: String,
    pub outcome: String,
    pub estimator: Estimator,
    /// Basis coefficients; a single entry is a plain slope.
    pub effect: Vec<f64>,
    /// Covariates (ols), confounders (dml) or the instrument (iv2sls).
    pub adjustments: Vec<String>,
    pub diagnostics: AteDiagnostics,
}

impl AteModel {
    /// Effect function evaluated at `x`, up to an additive constant.
    pub fn effect_at(&self, x: f64) -> f64 {
        let mut power = x;
        let mut total = 0.0;
        for c in &self.effect {
            total += c * power;
            power *= x;
        }
        total
    }

    pub fn slope(&self) -> f64 {
        self.effect.first().copied().unwrap_or(0.0)
    }

    pub fn ate(&self, x_from: f64, x_to: f64) -> f64 {
        self.effect_at(x_to) - self.effect_at(x_from)
    }
}

/// `effect(x_to) − effect(x_from)`.
pub fn estimate_ate(model: &AteModel, x_from: f64, x_to: f64) -> f64 {
    model.ate(x_from, x_to)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Degree of the effect basis (1 = linear slope).
    pub degree: usize,
    /// Regressor family for DML nuisance models.
    pub nuisance: RegressorSpec,
    pub folds: usize,
    pub seed: u64,
    pub weak_instrument_r2: f64,
    /// Non-chaos columns accepted as instruments.
    pub instrument_whitelist: BTreeSet<String>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            degree: 1,
            nuisance: RegressorSpec::Linear,
            folds: 2,
            seed: 0,
            weak_instrument_r2: DEFAULT_WEAK_INSTRUMENT_R2,
            instrument_whitelist: BTreeSet::new(),
        }
    }
}

impl FitOptions {
    fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.degree) {
            return Err(Error::InvalidArgument(format!("effect degree {} outside 1..=3", self.degree)));
        }
        self.nuisance.validate()
    }
}

fn powers(x: &[f64], degree: usize) -> Vec<Vec<f64>> {
    (1..=degree)
        .map(|d| x.iter().map(|v| v.powi(d as i32)).collect())
        .collect()
}

fn columns(dataset: &Dataset, names: &[String]) -> Result<Vec<Vec<f64>>> {
    names.iter().map(|n| dataset.column(n)).collect()
}

fn check_rows(dataset: &Dataset, min: usize) -> Result<()> {
    if dataset.n_rows() < min {
        return Err(Error::InvalidDataset(format!(
            "{} rows, at least {min} required",
            dataset.n_rows()
        )));
    }
    Ok(())
}

fn check_distinct(treatment: &str, outcome: &str, others: &[String]) -> Result<()> {
    if treatment == outcome || others.iter().any(|o| o == treatment || o == outcome) {
        return Err(Error::InvalidArgument(format!(
            "treatment `{treatment}`, outcome `{outcome}` and adjustments must be distinct"
        )));
    }
    Ok(())
}

fn require_variance(name: &str, xs: &[f64]) -> Result<()> {
    if !(variance(xs) > 0.0) {
        return Err(Error::DegenerateData(format!("`{name}` has zero variance")));
    }
    Ok(())
}

/// Least-squares effect of `treatment` on `outcome`, adjusting for `covariates`.
pub fn fit_ols(
    dataset: &Dataset,
    treatment: &str,
    outcome: &str,
    covariates: &[String],
    options: &FitOptions,
) -> Result<AteModel> {
    options.validate()?;
    check_distinct(treatment, outcome, covariates)?;
    check_rows(dataset, MIN_ROWS_OLS)?;
    let t = dataset.column(treatment)?;
    let y = dataset.column(outcome)?;
    require_variance(treatment, &t)?;
    let mut features = powers(&t, options.degree);
    features.extend(columns(dataset, covariates)?);
    let fit = ols(&features, &y)?;
    Ok(AteModel {
        treatment: treatment.to_string(),
        outcome: outcome.to_string(),
        estimator: Estimator::Ols,
        effect: fit.coefficients[..options.degree].to_vec(),
        adjustments: covariates.to_vec(),
        diagnostics: AteDiagnostics {
            n: y.len(),
            first_stage_r2: None,
            residual_r2: fit.r2,
        },
    })
}

/// Seeded assignment of `n` rows to `folds` near-equal folds.
fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        fold[row] = pos % folds;
    }
    fold
}

/// Out-of-fold residuals of `target` regressed on `features`.
fn cross_fit_residuals(
    spec: &RegressorSpec,
    features: &[Vec<f64>],
    target: &[f64],
    fold: &[usize],
    folds: usize,
) -> Result<Vec<f64>> {
    let mut residual = vec![0.0; target.len()];
    for k in 0..folds {
        let train: Vec<usize> = (0..target.len()).filter(|&i| fold[i] != k).collect();
        let test: Vec<usize> = (0..target.len()).filter(|&i| fold[i] == k).collect();
        let pick = |col: &[f64], rows: &[usize]| rows.iter().map(|&i| col[i]).collect::<Vec<f64>>();
        let train_x: Vec<Vec<f64>> = features.iter().map(|c| pick(c, &train)).collect();
        let test_x: Vec<Vec<f64>> = features.iter().map(|c| pick(c, &test)).collect();
        let model = spec.fit(&train_x, &pick(target, &train))?;
        for (j, p) in model.predict(&test_x, test.len()).into_iter().enumerate() {
            residual[test[j]] = target[test[j]] - p;
        }
    }
    Ok(residual)
}

/// Partialling-out estimator: cross-fitted nuisance regressions of outcome and
/// treatment on the confounders, then residual-on-residual regression.
pub fn fit_dml(
    dataset: &Dataset,
    treatment: &str,
    outcome: &str,
    confounders: &[String],
    options: &FitOptions,
) -> Result<AteModel> {
    options.validate()?;
    if confounders.is_empty() {
        return Err(Error::InvalidArgument("dml needs at least one confounder".into()));
    }
    check_distinct(treatment, outcome, confounders)?;
    check_rows(dataset, MIN_ROWS_CROSS_FIT)?;
    let n = dataset.n_rows();
    if options.folds < 2 || n / options.folds < 10 {
        return Err(Error::InsufficientFolds(format!(
            "{} folds over {n} rows",
            options.folds
        )));
    }
    let t = dataset.column(treatment)?;
    let y = dataset.column(outcome)?;
    require_variance(treatment, &t)?;
    let w = columns(dataset, confounders)?;
    let fold = fold_assignment(n, options.folds, options.seed);
    let y_res = cross_fit_residuals(&options.nuisance, &w, &y, &fold, options.folds)?;
    let mut t_res = Vec::with_capacity(options.degree);
    for (d, basis) in powers(&t, options.degree).into_iter().enumerate() {
        let r = cross_fit_residuals(&options.nuisance, &w, &basis, &fold, options.folds)?;
        if !(variance(&r) > 1e-10 * variance(&basis)) {
            return Err(Error::DegenerateData(format!(
                "`{treatment}`{} is determined by the confounders",
                if d == 0 { String::new() } else { format!("^{}", d + 1) }
            )));
        }
        t_res.push(r);
    }
    let fit = ols(&t_res, &y_res)?;
    Ok(AteModel {
        treatment: treatment.to_string(),
        outcome: outcome.to_string(),
        estimator: Estimator::Dml,
        effect: fit.coefficients,
        adjustments: confounders.to_vec(),
        diagnostics: AteDiagnostics {
            n,
            first_stage_r2: None,
            residual_r2: fit.r2,
        },
    })
}

/// Residuals of `target` after regressing on `controls` (centering when there are none).
fn partial_out(target: &[f64], controls: &[Vec<f64>]) -> Result<Vec<f64>> {
    if controls.is_empty() {
        let m = mean(target);
        return Ok(target.iter().map(|v| v - m).collect());
    }
    let fit = ols(controls, target)?;
    Ok(target
        .iter()
        .zip(fit.predict(controls, target.len()))
        .map(|(v, p)| v - p)
        .collect())
}

/// Two-stage least squares with a single instrument. `controls` are exogenous
/// covariates partialled out of every variable first; with none, the linear
/// slope is the Wald ratio `cov(Z, Y) / cov(Z, X)`.
pub fn fit_iv(
    dataset: &Dataset,
    instrument: &str,
    treatment: &str,
    outcome: &str,
    controls: &[String],
    options: &FitOptions,
) -> Result<AteModel> {
    options.validate()?;
    let mut others = controls.to_vec();
    others.push(instrument.to_string());
    check_distinct(treatment, outcome, &others)?;
    if controls.iter().any(|c| c == instrument) {
        return Err(Error::InvalidArgument(format!("`{instrument}` is both instrument and control")));
    }
    if !dataset.meta(instrument)?.is_chaos() && !options.instrument_whitelist.contains(instrument) {
        return Err(Error::InvalidArgument(format!(
            "`{instrument}` is not a chaos variable and not whitelisted as an instrument"
        )));
    }
    check_rows(dataset, MIN_ROWS_CROSS_FIT)?;
    let z = dataset.column(instrument)?;
    let t = dataset.column(treatment)?;
    let y = dataset.column(outcome)?;
    require_variance(instrument, &z)?;
    require_variance(treatment, &t)?;
    let w = columns(dataset, controls)?;
    let n = y.len();
    let zs: Vec<Vec<f64>> = powers(&z, options.degree)
        .iter()
        .map(|c| partial_out(c, &w))
        .collect::<Result<_>>()?;
    let ts: Vec<Vec<f64>> = powers(&t, options.degree)
        .iter()
        .map(|c| partial_out(c, &w))
        .collect::<Result<_>>()?;
    let y_r = partial_out(&y, &w)?;

    let mut x_hat = Vec::with_capacity(options.degree);
    let mut first_stage_r2 = 0.0;
    for (d, basis) in ts.iter().enumerate() {
        let fit = ols(&zs, basis)?;
        if d == 0 {
            first_stage_r2 = fit.r2;
        }
        x_hat.push(fit.predict(&zs, n));
    }
    if !(first_stage_r2 >= options.weak_instrument_r2) {
        return Err(Error::WeakInstrument {
            instrument: instrument.to_string(),
            treatment: treatment.to_string(),
            r2: first_stage_r2,
            threshold: options.weak_instrument_r2,
        });
    }
    let y_hat = ols(&zs, &y_r)?.predict(&zs, n);
    let stage2 = ols(&x_hat, &y_hat)?;
    let structural = stage2.predict(&x_hat, n);
    Ok(AteModel {
        treatment: treatment.to_string(),
        outcome: outcome.to_string(),
        estimator: Estimator::Iv2sls,
        effect: stage2.coefficients,
        adjustments: vec![instrument.to_string()],
        diagnostics: AteDiagnostics {
            n,
            first_stage_r2: Some(first_stage_r2),
            residual_r2: r_squared(&y_r, &structural),
        },
    })
}

/// Instrument assignment for one treatment KPI.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstrumentSpec {
    pub instrument: String,
    #[serde(default = "default_true")]
    pub latent_confounded: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Deserialize)]
#[serde(untagged)]
enum InstrumentEntry {
    Name(String),
    Spec(InstrumentSpec),
}

/// Treatment KPI → instrument. A bare string value means "latent-confounded, use this instrument".
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct InstrumentMap(pub BTreeMap<String, InstrumentSpec>);

impl<'de> Deserialize<'de> for InstrumentMap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = BTreeMap::<String, InstrumentEntry>::deserialize(d)?;
        Ok(InstrumentMap(
            raw.into_iter()
                .map(|(k, v)| {
                    let spec = match v {
                        InstrumentEntry::Name(instrument) => InstrumentSpec {
                            instrument,
                            latent_confounded: true,
                        },
                        InstrumentEntry::Spec(s) => s,
                    };
                    (k, spec)
                })
                .collect(),
        ))
    }
}

impl InstrumentMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn latent(mut self, treatment: impl Into<String>, instrument: impl Into<String>) -> Self {
        self.0.insert(
            treatment.into(),
            InstrumentSpec {
                instrument: instrument.into(),
                latent_confounded: true,
            },
        );
        self
    }

    fn iv_for(&self, treatment: &str) -> Option<&str> {
        self.0
            .get(treatment)
            .filter(|s| s.latent_confounded)
            .map(|s| s.instrument.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum EdgeEffect {
    Fitted(AteModel),
    Unquantified { reason: String },
}

impl EdgeEffect {
    pub fn model(&self) -> Option<&AteModel> {
        match self {
            EdgeEffect::Fitted(m) => Some(m),
            EdgeEffect::Unquantified { .. } => None,
        }
    }
}

/// Structural equation of one non-root node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralModel {
    pub node: String,
    pub parents: Vec<String>,
    pub effects: BTreeMap<String, EdgeEffect>,
    pub intercept: f64,
    /// Standard deviation of the residual.
    pub noise_scale: f64,
}

impl StructuralModel {
    /// `intercept + Σ effect_p(x_p)` over quantified edges.
    pub fn predict(&self, values: &BTreeMap<String, f64>) -> Result<f64> {
        let mut total = self.intercept;
        for (p, e) in &self.effects {
            if let Some(m) = e.model() {
                let x = values.get(p).ok_or_else(|| Error::UnknownNode(p.clone()))?;
                total += m.effect_at(*x);
            }
        }
        Ok(total)
    }
}

/// Fitted structural equation model with marginal densities and baseline means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sem {
    pub graph: CausalGraph,
    pub node_models: BTreeMap<String, StructuralModel>,
    pub marginals: BTreeMap<String, DensityModel>,
    pub baseline_means: BTreeMap<String, f64>,
    /// Nodes that are chaos variables; never candidate root causes.
    #[serde(default)]
    pub chaos_variables: BTreeSet<String>,
}

impl Sem {
    pub fn validate(&self) -> Result<()> {
        self.graph.topological_sort()?;
        for node in self.graph.nodes() {
            let parents = self.graph.parents(node)?;
            match self.node_models.get(node) {
                Some(m) => {
                    let keys: Vec<String> = m.effects.keys().cloned().collect();
                    if m.parents != parents || keys != parents {
                        return Err(Error::InvalidGraph(format!(
                            "structural model of `{node}` disagrees with its graph parents"
                        )));
                    }
                    if !(m.noise_scale.is_finite() && m.noise_scale >= 0.0 && m.intercept.is_finite()) {
                        return Err(Error::InvalidGraph(format!("`{node}` has a non-finite model")));
                    }
                }
                None if !parents.is_empty() => {
                    return Err(Error::InvalidGraph(format!("`{node}` has parents but no model")));
                }
                None => {}
            }
            if !self.baseline_means.contains_key(node) || !self.marginals.contains_key(node) {
                return Err(Error::InvalidGraph(format!("`{node}` lacks a baseline mean or marginal")));
            }
        }
        if let Some(extra) = self.node_models.keys().find(|k| !self.graph.contains(k)) {
            return Err(Error::UnknownNode(extra.clone()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let sem: Sem = serde_json::from_str(text)?;
        sem.validate()?;
        Ok(sem)
    }

    pub fn is_chaos(&self, node: &str) -> bool {
        self.chaos_variables.contains(node)
    }

    /// Fitted effect of `parent` on `child`.
    pub fn edge(&self, parent: &str, child: &str) -> Result<&AteModel> {
        let model = self
            .node_models
            .get(child)
            .and_then(|m| m.effects.get(parent))
            .ok_or_else(|| Error::InvalidGraph(format!("no edge {parent} -> {child}")))?;
        model.model().ok_or_else(|| Error::UnquantifiedEdge {
            parent: parent.to_string(),
            child: child.to_string(),
        })
    }

    /// Edges that failed to fit, as `(parent, child, reason)`.
    pub fn unquantified_edges(&self) -> Vec<(String, String, String)> {
        self.node_models
            .values()
            .flat_map(|m| {
                m.effects.iter().filter_map(move |(p, e)| match e {
                    EdgeEffect::Unquantified { reason } => Some((p.clone(), m.node.clone(), reason.clone())),
                    EdgeEffect::Fitted(_) => None,
                })
            })
            .collect()
    }
}

/// Which estimator [`fit_sem`] applies to the edge `parent → child`.
pub fn choose_estimator(parent: &str, parents: &[String], instruments: &InstrumentMap) -> Estimator {
    if instruments.iv_for(parent).is_some() {
        Estimator::Iv2sls
    } else if parents.len() > 1 {
        Estimator::Dml
    } else {
        Estimator::Ols
    }
}

fn fit_edge(
    dataset: &Dataset,
    parent: &str,
    child: &str,
    parents: &[String],
    instruments: &InstrumentMap,
    options: &FitOptions,
) -> Result<AteModel> {
    let others: Vec<String> = parents.iter().filter(|p| *p != parent).cloned().collect();
    match choose_estimator(parent, parents, instruments) {
        Estimator::Iv2sls => {
            let z = instruments.iv_for(parent).expect("checked by choose_estimator");
            let controls: Vec<String> = others.into_iter().filter(|p| p != z).collect();
            let mut opts = options.clone();
            opts.instrument_whitelist.insert(z.to_string());
            fit_iv(dataset, z, parent, child, &controls, &opts)
        }
        Estimator::Dml => fit_dml(dataset, parent, child, &others, options),
        Estimator::Ols => fit_ols(dataset, parent, child, &[], options),
    }
}

fn edge_seed(seed: u64, parent: &str, child: &str) -> u64 {
    // FNV-1a over the edge name keeps per-edge fold assignment stable under graph edits
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in parent.bytes().chain([0u8]).chain(child.bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Fits every edge of `graph` and assembles the SEM. An edge whose fit fails
/// is kept as unquantified instead of aborting.
pub fn fit_sem(dataset: &Dataset, graph: &CausalGraph, instruments: &InstrumentMap, options: &FitOptions) -> Result<Sem> {
    options.validate()?;
    graph.topological_sort()?;
    for n in graph.nodes() {
        dataset.column_index(n)?;
    }
    for (treatment, spec) in &instruments.0 {
        if !graph.contains(treatment) {
            return Err(Error::UnknownNode(treatment.clone()));
        }
        dataset.column_index(&spec.instrument)?;
    }
    let baseline = dataset.baseline_rows();
    let non_roots: Vec<(String, Vec<String>)> = graph
        .nodes()
        .iter()
        .map(|n| Ok((n.clone(), graph.parents(n)?)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|(_, ps)| !ps.is_empty())
        .collect();
    let node_models: Vec<StructuralModel> = non_roots
        .par_iter()
        .map(|(node, parents)| {
            let effects: BTreeMap<String, EdgeEffect> = parents
                .iter()
                .map(|p| {
                    let mut opts = options.clone();
                    opts.seed = edge_seed(options.seed, p, node);
                    let effect = match fit_edge(dataset, p, node, parents, instruments, &opts) {
                        Ok(m) => EdgeEffect::Fitted(m),
                        Err(e) => EdgeEffect::Unquantified {
                            reason: Error::EdgeFit {
                                parent: p.clone(),
                                child: node.clone(),
                                source: Box::new(e),
                            }
                            .to_string(),
                        },
                    };
                    (p.clone(), effect)
                })
                .collect();
            let y = dataset.column(node)?;
            let mut residual = y.clone();
            for (p, e) in &effects {
                if let Some(m) = e.model() {
                    for (r, x) in residual.iter_mut().zip(dataset.column(p)?) {
                        *r -= m.effect_at(x);
                    }
                }
            }
            let intercept = mean(&residual);
            Ok(StructuralModel {
                node: node.clone(),
                parents: parents.clone(),
                effects,
                intercept,
                noise_scale: variance(&residual).sqrt(),
            })
        })
        .collect::<Result<_>>()?;
    let mut marginals = BTreeMap::new();
    let mut baseline_means = BTreeMap::new();
    for n in graph.nodes() {
        let values = dataset.column_rows(n, &baseline)?;
        baseline_means.insert(n.clone(), mean(&values));
        marginals.insert(n.clone(), fit_kde_capped(&values, DEFAULT_SAMPLE_CAP, options.seed)?);
    }
    let sem = Sem {
        graph: graph.clone(),
        node_models: node_models.into_iter().map(|m| (m.node.clone(), m)).collect(),
        marginals,
        baseline_means,
        chaos_variables: graph
            .nodes()
            .iter()
            .filter(|n| dataset.meta(n).map(|m| m.is_chaos()).unwrap_or(false))
            .cloned()
            .collect(),
    };
    sem.validate()?;
    Ok(sem)
}

//! Evaluation: regression metrics, ranking metrics, the synthetic
//! treatment-effect study and the simulated root-cause recall study.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::params::{fit_dml, fit_iv, fit_ols, FitOptions, Sem};
use crate::rca::{root_cause_analysis, KpiSnapshot};
use crate::regress::{mean, RegressorSpec};
use crate::sim::{
    anomaly_window, generate_queries, inject_anomaly, sample_dgp, CounterfactualQuery, DgpSpec, LocalStructure,
    SystemSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseR2 {
    pub mse: f64,
    /// Absent when the truth has zero variance.
    pub r2: Option<f64>,
}

/// Mean squared error and `1 − SS_res/SS_tot`.
pub fn mse_r2(predicted: &[f64], truth: &[f64]) -> Result<MseR2> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch(predicted.len(), truth.len()));
    }
    if truth.is_empty() {
        return Err(Error::InvalidArgument("no predictions to score".into()));
    }
    let n = truth.len() as f64;
    let ss_res: f64 = predicted.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    let m = mean(truth);
    let ss_tot: f64 = truth.iter().map(|t| (t - m) * (t - m)).sum();
    Ok(MseR2 {
        mse: ss_res / n,
        r2: (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot),
    })
}

/// Like [`mse_r2`] but fails with `ZeroVarianceTruth` when R² is undefined.
pub fn r2_score(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    mse_r2(predicted, truth)?.r2.ok_or(Error::ZeroVarianceTruth)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingCase {
    pub ranked: Vec<String>,
    pub relevant: BTreeSet<String>,
}

impl RankingCase {
    pub fn new(ranked: Vec<String>, relevant: BTreeSet<String>) -> Result<Self> {
        let unique: BTreeSet<&String> = ranked.iter().collect();
        if unique.len() != ranked.len() {
            return Err(Error::InvalidArgument("ranked list has duplicates".into()));
        }
        Ok(Self { ranked, relevant })
    }

    fn hits(&self) -> impl Iterator<Item = bool> + '_ {
        self.ranked.iter().map(|k| self.relevant.contains(k))
    }
}

/// Average precision truncated at `R = |relevant|`.
pub fn map_at_r(case: &RankingCase) -> Result<f64> {
    let r = case.relevant.len();
    if r == 0 {
        return Err(Error::EmptyRelevantSet);
    }
    let mut found = 0usize;
    let mut total = 0.0;
    for (i, hit) in case.hits().take(r).enumerate() {
        if hit {
            found += 1;
            total += found as f64 / (i + 1) as f64;
        }
    }
    Ok(total / r as f64)
}

/// NDCG with binary gains and `1/log2(rank + 1)` discount.
pub fn ndcg(case: &RankingCase) -> Result<f64> {
    if case.relevant.is_empty() {
        return Err(Error::EmptyRelevantSet);
    }
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = case.hits().enumerate().filter(|(_, h)| *h).map(|(i, _)| discount(i)).sum();
    let idcg: f64 = (0..case.relevant.len()).map(discount).sum();
    Ok(dcg / idcg)
}

/// Fraction of relevant items found in the first `k` ranks.
pub fn recall_at_k(case: &RankingCase, k: usize) -> Result<f64> {
    if case.relevant.is_empty() {
        return Err(Error::EmptyRelevantSet);
    }
    let found = case.hits().take(k).filter(|h| *h).count();
    Ok(found as f64 / case.relevant.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticEvalConfig {
    pub datasets: usize,
    pub train_n: usize,
    pub queries: usize,
    /// Dataset `i` of every structure uses seed `seed + i`.
    pub seed: u64,
    pub tree_depth: usize,
}

impl Default for SyntheticEvalConfig {
    fn default() -> Self {
        Self {
            datasets: 100,
            train_n: 5000,
            queries: 1000,
            seed: 0,
            tree_depth: 6,
        }
    }
}

pub const METHOD: &str = "causal";
pub const NAIVE_LINEAR: &str = "naive_linear";
pub const REGRESSION_TREE: &str = "regression_tree";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub mse_mean: f64,
    pub mse_std: f64,
    pub r2_mean: f64,
    pub r2_std: f64,
    /// Datasets that produced a score.
    pub datasets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFailure {
    pub structure: LocalStructure,
    pub dataset: usize,
    pub method: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: SyntheticEvalConfig,
    /// Structure label → method → summary.
    pub results: BTreeMap<String, BTreeMap<String, MethodSummary>>,
    pub failures: Vec<EvalFailure>,
}

impl EvalReport {
    pub fn summary(&self, structure: LocalStructure, method: &str) -> Option<&MethodSummary> {
        self.results.get(structure.label()).and_then(|m| m.get(method))
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = mean(xs);
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    (m, sd)
}

/// Predicted effects of every query under `method` for one dataset.
fn predict_effects(
    kind: LocalStructure,
    method: &str,
    data: &Dataset,
    queries: &[CounterfactualQuery],
    tree_depth: usize,
) -> Result<Vec<f64>> {
    let ctx = kind.context_column();
    match method {
        METHOD => {
            let opts = FitOptions::default();
            let model = match kind {
                LocalStructure::NoConfounder => fit_ols(data, "X2", "Y", &[ctx.to_string()], &opts)?,
                LocalStructure::ObservedConfounder => fit_dml(data, "X2", "Y", &[ctx.to_string()], &opts)?,
                LocalStructure::LatentConfounder => fit_iv(data, ctx, "X2", "Y", &[], &opts)?,
            };
            Ok(queries.iter().map(|q| model.ate(q.x2_from, q.x2_to)).collect())
        }
        NAIVE_LINEAR | REGRESSION_TREE => {
            let spec = if method == NAIVE_LINEAR {
                RegressorSpec::Linear
            } else {
                RegressorSpec::RegressionTree { depth: tree_depth }
            };
            let features = vec![data.column(ctx)?, data.column("X2")?];
            let model = spec.fit(&features, &data.column("Y")?)?;
            Ok(queries
                .iter()
                .map(|q| model.predict_row(&[q.x1, q.x2_to]) - model.predict_row(&[q.x1, q.x2_from]))
                .collect())
        }
        other => Err(Error::InvalidArgument(format!("unknown method `{other}`"))),
    }
}

/// Fits the structure-matched causal estimator and the two direct-regression
/// baselines on `datasets` random DGPs per local structure and scores their
/// predicted treatment effects on random queries.
type Outcome<'a> = (LocalStructure, usize, &'a str, Result<MseR2>);

pub fn run_synthetic_eval(config: &SyntheticEvalConfig) -> Result<EvalReport> {
    if config.datasets == 0 || config.train_n < 50 || config.queries == 0 {
        return Err(Error::InvalidArgument(
            "need datasets ≥ 1, train_n ≥ 50 and queries ≥ 1".into(),
        ));
    }
    RegressorSpec::RegressionTree { depth: config.tree_depth }.validate()?;
    let methods = [METHOD, NAIVE_LINEAR, REGRESSION_TREE];
    let jobs: Vec<(LocalStructure, usize)> = LocalStructure::ALL
        .iter()
        .flat_map(|&k| (0..config.datasets).map(move |i| (k, i)))
        .collect();
    let outcomes: Vec<Vec<Outcome>> = jobs
        .par_iter()
        .map(|&(kind, i)| {
            let seed = config.seed.wrapping_add(i as u64);
            let spec = DgpSpec::random(kind, seed);
            let prepared = sample_dgp(&spec, config.train_n)
                .and_then(|d| Ok((d, generate_queries(&spec, config.queries, seed ^ 0x9e37_79b9)?)));
            methods
                .iter()
                .map(|&m| {
                    let scored = match &prepared {
                        Ok((data, queries)) => predict_effects(kind, m, data, queries, config.tree_depth).and_then(|p| {
                            let truth: Vec<f64> = queries.iter().map(|q| q.true_te).collect();
                            mse_r2(&p, &truth)
                        }),
                        Err(e) => Err(e.clone()),
                    };
                    (kind, i, m, scored)
                })
                .collect()
        })
        .collect();
    let mut results: BTreeMap<String, BTreeMap<String, MethodSummary>> = BTreeMap::new();
    let mut failures = Vec::new();
    for kind in LocalStructure::ALL {
        for m in methods {
            let mut mses = Vec::new();
            let mut r2s = Vec::new();
            for (k, i, method, scored) in outcomes.iter().flatten() {
                if *k != kind || *method != m {
                    continue;
                }
                match scored {
                    Ok(s) => {
                        mses.push(s.mse);
                        if let Some(r2) = s.r2 {
                            r2s.push(r2);
                        }
                    }
                    Err(e) => failures.push(EvalFailure {
                        structure: kind,
                        dataset: *i,
                        method: m.to_string(),
                        error: e.to_string(),
                    }),
                }
            }
            let (mse_mean, mse_std) = mean_std(&mses);
            let (r2_mean, r2_std) = mean_std(&r2s);
            results.entry(kind.label().to_string()).or_default().insert(
                m.to_string(),
                MethodSummary {
                    mse_mean,
                    mse_std,
                    r2_mean,
                    r2_std,
                    datasets: mses.len(),
                },
            );
        }
    }
    Ok(EvalReport {
        config: config.clone(),
        results,
        failures,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub anomaly: String,
    pub seed: u64,
    pub truth: BTreeSet<String>,
    pub ranked: Vec<String>,
    pub recall: f64,
    pub ndcg: f64,
    pub map_at_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcaStudy {
    pub k: usize,
    pub recall_at_k: f64,
    pub mean_ndcg: f64,
    pub mean_map_at_r: f64,
    pub episodes: Vec<EpisodeResult>,
}

/// Anomaly window length used by [`rca_recall_study`].
pub const EPISODE_DURATION_S: f64 = 60.0;

/// Runs root-cause analysis on `anomalies` simulated episodes, cycling
/// through the system's anomaly catalog, and scores the top `k` against the
/// KPIs each anomaly drives.
pub fn rca_recall_study(system: &SystemSpec, sem: &Sem, anomalies: usize, k: usize, seed: u64) -> Result<RcaStudy> {
    let kinds: Vec<&String> = system.anomaly_catalog.keys().collect();
    rca_study_for(system, sem, &kinds.iter().map(|s| s.as_str()).collect::<Vec<_>>(), anomalies, k, seed)
}

/// [`rca_recall_study`] restricted to the given anomaly kinds, cycled in order.
pub fn rca_study_for(
    system: &SystemSpec,
    sem: &Sem,
    kinds: &[&str],
    anomalies: usize,
    k: usize,
    seed: u64,
) -> Result<RcaStudy> {
    if anomalies == 0 || k == 0 || kinds.is_empty() {
        return Err(Error::InvalidArgument("need at least one episode, one kind and k ≥ 1".into()));
    }
    let episodes: Vec<EpisodeResult> = (0..anomalies)
        .into_par_iter()
        .map(|e| {
            let kind = kinds[e % kinds.len()];
            let ep_seed = seed.wrapping_add(e as u64);
            let (trace, truth) = inject_anomaly(system, kind, EPISODE_DURATION_S, ep_seed)?;
            let (start, end) = anomaly_window(&trace).expect("episodes carry an anomaly segment");
            let snapshot = KpiSnapshot::from_window(&trace, start, end)?;
            let diagnosis = root_cause_analysis(sem, &snapshot, &system.target)?;
            let case = RankingCase::new(diagnosis.ranked(), truth.clone())?;
            Ok(EpisodeResult {
                anomaly: kind.to_string(),
                seed: ep_seed,
                recall: recall_at_k(&case, k)?,
                ndcg: ndcg(&case)?,
                map_at_r: map_at_r(&case)?,
                ranked: case.ranked,
                truth,
            })
        })
        .collect::<Result<_>>()?;
    let avg = |f: fn(&EpisodeResult) -> f64| mean(&episodes.iter().map(f).collect::<Vec<_>>());
    Ok(RcaStudy {
        k,
        recall_at_k: avg(|e| e.recall),
        mean_ndcg: avg(|e| e.ndcg),
        mean_map_at_r: avg(|e| e.map_at_r),
        episodes,
    })
}

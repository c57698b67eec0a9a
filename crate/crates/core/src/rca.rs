//! Online queries against a fitted [`Sem`]: counterfactual propagation,
//! what-if interventions and blame-ranked root-cause analysis.
//!
//! Propagation walks the descendants of the intervened nodes in topological
//! order and shifts each one by the summed treatment effects of its changed
//! parents, `x̂_d = x_d + Σ_p ATE_{p→d}(x_p → x̂_p)`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::params::Sem;

/// Observed KPI vector, e.g. one sample or a window mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiSnapshot {
    pub values: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<(usize, usize)>,
}

impl KpiSnapshot {
    pub fn new(values: BTreeMap<String, f64>) -> Self {
        Self { values, window: None }
    }

    /// Per-column mean over rows `start..end`.
    pub fn from_window(dataset: &Dataset, start: usize, end: usize) -> Result<Self> {
        Ok(Self {
            values: dataset.window_mean(start, end)?,
            window: Some((start, end)),
        })
    }

    pub fn get(&self, name: &str) -> Result<f64> {
        self.values
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("snapshot has no value for `{name}`")))
    }

    fn check_covers(&self, sem: &Sem) -> Result<()> {
        for n in sem.graph.nodes() {
            if !self.get(n)?.is_finite() {
                return Err(Error::InvalidArgument(format!("snapshot value of `{n}` is not finite")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlameEntry {
    pub kpi: String,
    /// `pdf_Y(ŷ) − pdf_Y(y)`, in units of 1/[Y].
    pub blame: f64,
    pub counterfactual_y: f64,
    pub observed_value: f64,
    pub normal_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub target: String,
    pub observed_y: f64,
    pub entries: Vec<BlameEntry>,
}

impl Diagnosis {
    pub fn top(mut self, k: usize) -> Self {
        self.entries.truncate(k);
        self
    }

    pub fn ranked(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.kpi.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIf {
    pub y: f64,
    pub y_hat: f64,
    pub delta: f64,
    /// `x̂ − x` for every intervened or updated node.
    pub per_node_shifts: BTreeMap<String, f64>,
}

/// `Σ_p ATE_{p→node}(x_p → x̂_p)` over the parents of `node`. Parents whose
/// value did not change contribute nothing, fitted or not.
pub fn total_te(
    sem: &Sem,
    node: &str,
    x_hat: &BTreeMap<String, f64>,
    x: &BTreeMap<String, f64>,
) -> Result<f64> {
    let parents = sem.graph.parents(node)?;
    if parents.is_empty() {
        return Err(Error::InvalidArgument(format!("`{node}` has no parents")));
    }
    let lookup = |m: &BTreeMap<String, f64>, p: &str| {
        m.get(p)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("no value for `{p}`")))
    };
    let mut total = 0.0;
    for p in &parents {
        let (from, to) = (lookup(x, p)?, lookup(x_hat, p)?);
        if from != to {
            total += sem.edge(p, node)?.ate(from, to);
        }
    }
    Ok(total)
}

/// Propagates `interventions` through `order`, which must be a topological
/// order of the SEM graph, stopping once `target` has been updated.
pub fn propagate_in_order(
    sem: &Sem,
    snapshot: &KpiSnapshot,
    interventions: &BTreeMap<String, f64>,
    target: &str,
    order: &[String],
) -> Result<BTreeMap<String, f64>> {
    check_order(sem, order)?;
    let mut affected: BTreeSet<String> = BTreeSet::new();
    for (node, value) in interventions {
        if !value.is_finite() {
            return Err(Error::InvalidArgument(format!("intervention on `{node}` is not finite")));
        }
        affected.extend(sem.graph.descendants(node)?);
    }
    let x = &snapshot.values;
    let mut x_hat = x.clone();
    for (node, value) in interventions {
        x_hat.insert(node.clone(), *value);
    }
    for node in order {
        if affected.contains(node) && !interventions.contains_key(node) {
            let shift = total_te(sem, node, &x_hat, x)?;
            x_hat.insert(node.clone(), snapshot.get(node)? + shift);
        }
        if node == target {
            break;
        }
    }
    Ok(x_hat)
}

fn check_order(sem: &Sem, order: &[String]) -> Result<()> {
    let nodes: BTreeSet<&String> = sem.graph.nodes().iter().collect();
    let given: BTreeSet<&String> = order.iter().collect();
    if given != nodes || order.len() != nodes.len() {
        return Err(Error::InvalidArgument("order must list every node once".into()));
    }
    let pos: BTreeMap<&str, usize> = order.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    if sem.graph.edges().any(|(p, c)| pos[p] > pos[c]) {
        return Err(Error::InvalidArgument("order is not topological".into()));
    }
    Ok(())
}

fn check_target(sem: &Sem, target: &str) -> Result<()> {
    if !sem.graph.contains(target) {
        return Err(Error::UnknownNode(target.to_string()));
    }
    Ok(())
}

/// Predicted `Y` after setting `cause` to `new_value`.
pub fn counterfactual_predict(
    sem: &Sem,
    snapshot: &KpiSnapshot,
    target: &str,
    cause: &str,
    new_value: f64,
) -> Result<f64> {
    check_target(sem, target)?;
    if !sem.graph.contains(cause) {
        return Err(Error::UnknownNode(cause.to_string()));
    }
    if !sem.graph.ancestors(target)?.contains(cause) {
        return Err(Error::NotAnAncestor {
            candidate: cause.to_string(),
            target: target.to_string(),
        });
    }
    snapshot.check_covers(sem)?;
    let order = sem.graph.topological_sort()?;
    let x_hat = propagate_in_order(sem, snapshot, &BTreeMap::from([(cause.to_string(), new_value)]), target, &order)?;
    Ok(x_hat[target])
}

fn whatif_inner(
    sem: &Sem,
    snapshot: &KpiSnapshot,
    target: &str,
    interventions: &BTreeMap<String, f64>,
    forced: bool,
) -> Result<WhatIf> {
    check_target(sem, target)?;
    if interventions.is_empty() {
        return Err(Error::InvalidArgument("at least one intervention is required".into()));
    }
    if let Some(unknown) = interventions.keys().find(|k| !sem.graph.contains(k)) {
        return Err(Error::UnknownNode(unknown.clone()));
    }
    if !forced {
        let ancestors = sem.graph.ancestors(target)?;
        let bad: Vec<String> = interventions.keys().filter(|k| !ancestors.contains(*k)).cloned().collect();
        if !bad.is_empty() {
            return Err(Error::NotAncestors {
                candidates: bad,
                target: target.to_string(),
            });
        }
    }
    snapshot.check_covers(sem)?;
    let order = sem.graph.topological_sort()?;
    let x_hat = propagate_in_order(sem, snapshot, interventions, target, &order)?;
    let y = snapshot.get(target)?;
    let y_hat = x_hat[target];
    let per_node_shifts = x_hat
        .iter()
        .filter(|(k, v)| sem.graph.contains(k) && snapshot.values[*k] != **v)
        .map(|(k, v)| (k.clone(), v - snapshot.values[k]))
        .collect();
    Ok(WhatIf {
        y,
        y_hat,
        delta: y_hat - y,
        per_node_shifts,
    })
}

/// Sets every intervened KPI at once and propagates a single pass.
pub fn whatif(sem: &Sem, snapshot: &KpiSnapshot, target: &str, interventions: &BTreeMap<String, f64>) -> Result<WhatIf> {
    whatif_inner(sem, snapshot, target, interventions, false)
}

/// [`whatif`] without the ancestor check; non-ancestors leave `Y` unchanged.
pub fn whatif_forced(
    sem: &Sem,
    snapshot: &KpiSnapshot,
    target: &str,
    interventions: &BTreeMap<String, f64>,
) -> Result<WhatIf> {
    whatif_inner(sem, snapshot, target, interventions, true)
}

fn rank(a: &BlameEntry, b: &BlameEntry, y: f64) -> Ordering {
    b.blame
        .total_cmp(&a.blame)
        .then_with(|| (b.counterfactual_y - y).abs().total_cmp(&(a.counterfactual_y - y).abs()))
        .then_with(|| a.kpi.cmp(&b.kpi))
}

/// Blames every non-chaos ancestor of `target` by how much restoring it to its
/// baseline mean raises the density of the predicted `Y`.
pub fn root_cause_analysis(sem: &Sem, snapshot: &KpiSnapshot, target: &str) -> Result<Diagnosis> {
    check_target(sem, target)?;
    snapshot.check_covers(sem)?;
    let y = snapshot.get(target)?;
    let density = sem
        .marginals
        .get(target)
        .ok_or_else(|| Error::InvalidGraph(format!("no marginal for `{target}`")))?;
    let base_pdf = density.pdf(y);
    let candidates: Vec<String> = sem
        .graph
        .ancestors(target)?
        .into_iter()
        .filter(|c| !sem.is_chaos(c))
        .collect();
    let scored: Vec<Option<BlameEntry>> = candidates
        .par_iter()
        .map(|c| {
            let normal = sem.baseline_means[c];
            match counterfactual_predict(sem, snapshot, target, c, normal) {
                Ok(y_hat) => Ok(Some(BlameEntry {
                    kpi: c.clone(),
                    blame: density.pdf(y_hat) - base_pdf,
                    counterfactual_y: y_hat,
                    observed_value: snapshot.get(c)?,
                    normal_value: normal,
                })),
                Err(Error::UnquantifiedEdge { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let mut entries: Vec<BlameEntry> = scored.into_iter().flatten().filter(|e| e.blame > 0.0).collect();
    entries.sort_by(|a, b| rank(a, b, y));
    Ok(Diagnosis {
        target: target.to_string(),
        observed_y: y,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::CausalGraph;
    use crate::model::KpiMeta;
    use crate::params::{fit_sem, AteDiagnostics, AteModel, EdgeEffect, Estimator, FitOptions, InstrumentMap, StructuralModel};
    use crate::density::fit_kde;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn names(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    /// Linear SEM with hand-set slopes; marginals are N(0, 1) draws.
    fn hand_sem(edges: &[(&str, &str, f64)], nodes: &[&str]) -> Sem {
        let graph = CausalGraph::from_edges(names(nodes), edges.iter().map(|(p, c, _)| (*p, *c))).unwrap();
        let mut node_models = BTreeMap::new();
        for n in nodes {
            let parents = graph.parents(n).unwrap();
            if parents.is_empty() {
                continue;
            }
            let effects = parents
                .iter()
                .map(|p| {
                    let slope = edges.iter().find(|(a, b, _)| a == p && b == n).unwrap().2;
                    let model = AteModel {
                        treatment: p.clone(),
                        outcome: n.to_string(),
                        estimator: Estimator::Ols,
                        effect: vec![slope],
                        adjustments: vec![],
                        diagnostics: AteDiagnostics { n: 0, first_stage_r2: None, residual_r2: 1.0 },
                    };
                    (p.clone(), EdgeEffect::Fitted(model))
                })
                .collect();
            node_models.insert(
                n.to_string(),
                StructuralModel { node: n.to_string(), parents, effects, intercept: 0.0, noise_scale: 1.0 },
            );
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let draws: Vec<f64> = (0..500).map(|_| normal.sample(&mut rng)).collect();
        Sem {
            graph,
            node_models,
            marginals: nodes.iter().map(|n| (n.to_string(), fit_kde(&draws).unwrap())).collect(),
            baseline_means: nodes.iter().map(|n| (n.to_string(), 0.0)).collect(),
            chaos_variables: BTreeSet::new(),
        }
    }

    fn snap(pairs: &[(&str, f64)]) -> KpiSnapshot {
        KpiSnapshot::new(pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect())
    }

    #[test]
    fn total_te_cases() {
        let sem = hand_sem(&[("A", "Y", 1.0), ("B", "Y", 2.0)], &["A", "B", "Y"]);
        let x = snap(&[("A", 0.0), ("B", 0.0), ("Y", 0.0)]).values;
        assert_eq!(total_te(&sem, "Y", &x, &x).unwrap(), 0.0);
        let x_hat = snap(&[("A", 0.5), ("B", 0.25), ("Y", 0.0)]).values;
        assert!((total_te(&sem, "Y", &x_hat, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!(total_te(&sem, "A", &x_hat, &x).is_err());
    }

    #[test]
    fn chain_matches_closed_form() {
        let (b1, b2) = (1.7, -0.6);
        let sem = hand_sem(&[("X", "M", b1), ("M", "Y", b2)], &["X", "M", "Y"]);
        let s = snap(&[("X", 2.0), ("M", 3.0), ("Y", -1.0)]);
        let y_hat = counterfactual_predict(&sem, &s, "Y", "X", 0.5).unwrap();
        assert!((y_hat - (-1.0 + b1 * b2 * (0.5 - 2.0))).abs() < 1e-6);
        assert_eq!(counterfactual_predict(&sem, &s, "Y", "X", 2.0).unwrap(), -1.0);
        assert!(matches!(
            counterfactual_predict(&sem, &s, "X", "Y", 0.0),
            Err(Error::NotAnAncestor { .. })
        ));
        // a direct parent restored to its normal value adds the average treatment effect
        let direct = counterfactual_predict(&sem, &s, "Y", "M", sem.baseline_means["M"]).unwrap();
        assert!((direct - (-1.0 + b2 * (0.0 - 3.0))).abs() < 1e-12);
    }

    #[test]
    fn whatif_single_equals_counterfactual_and_is_additive() {
        let sem = hand_sem(&[("A", "Y", 1.5), ("B", "Y", -2.0)], &["A", "B", "Y"]);
        let s = snap(&[("A", 1.0), ("B", 2.0), ("Y", 0.3)]);
        let one = whatif(&sem, &s, "Y", &BTreeMap::from([("A".to_string(), 0.2)])).unwrap();
        assert_eq!(one.y_hat, counterfactual_predict(&sem, &s, "Y", "A", 0.2).unwrap());
        let other = whatif(&sem, &s, "Y", &BTreeMap::from([("B".to_string(), -1.0)])).unwrap();
        let both = whatif(
            &sem,
            &s,
            "Y",
            &BTreeMap::from([("A".to_string(), 0.2), ("B".to_string(), -1.0)]),
        )
        .unwrap();
        assert!((both.delta - (one.delta + other.delta)).abs() < 1e-12);
        assert!(matches!(whatif(&sem, &s, "Y", &BTreeMap::new()), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn non_ancestors_are_reported_together_and_local() {
        let sem = hand_sem(&[("A", "Y", 1.0), ("Y", "C", 1.0)], &["A", "B", "C", "Y"]);
        let s = snap(&[("A", 1.0), ("B", 2.0), ("C", 0.0), ("Y", 0.3)]);
        let iv = BTreeMap::from([("B".to_string(), 5.0), ("C".to_string(), 1.0)]);
        match whatif(&sem, &s, "Y", &iv) {
            Err(Error::NotAncestors { candidates, .. }) => assert_eq!(candidates, names(&["B", "C"])),
            other => panic!("{other:?}"),
        }
        let forced = whatif_forced(&sem, &s, "Y", &iv).unwrap();
        assert_eq!(forced.y_hat, forced.y);
    }

    #[test]
    fn diamond_order_independence() {
        let sem = hand_sem(
            &[("A", "B", 0.7), ("A", "C", -1.3), ("B", "D", 2.1), ("C", "D", 0.4)],
            &["A", "B", "C", "D"],
        );
        let s = snap(&[("A", 1.0), ("B", 0.5), ("C", -0.2), ("D", 3.0)]);
        let iv = BTreeMap::from([("A".to_string(), -0.4)]);
        let o1 = propagate_in_order(&sem, &s, &iv, "D", &names(&["A", "B", "C", "D"])).unwrap();
        let o2 = propagate_in_order(&sem, &s, &iv, "D", &names(&["A", "C", "B", "D"])).unwrap();
        assert!((o1["D"] - o2["D"]).abs() < 1e-9);
        assert!(propagate_in_order(&sem, &s, &iv, "D", &names(&["B", "A", "C", "D"])).is_err());
    }

    #[test]
    fn root_without_ancestors_gives_empty_diagnosis() {
        let sem = hand_sem(&[("A", "Y", 1.0)], &["A", "Y"]);
        let s = snap(&[("A", 1.0), ("Y", 0.3)]);
        assert!(root_cause_analysis(&sem, &s, "A").unwrap().entries.is_empty());
        assert!(matches!(root_cause_analysis(&sem, &s, "Z"), Err(Error::UnknownNode(_))));
    }

    #[test]
    fn blame_ranks_the_shifted_parent_and_drops_harmful_candidates() {
        let sem = hand_sem(&[("A", "Y", 1.0), ("B", "Y", 1.0)], &["A", "B", "Y"]);
        // Y is 2.5 high; restoring A (obs 2) brings it to 0.5, restoring B (obs -0.5) pushes it to 3
        let s = snap(&[("A", 2.0), ("B", -0.5), ("Y", 2.5)]);
        let d = root_cause_analysis(&sem, &s, "Y").unwrap();
        assert_eq!(d.ranked(), names(&["A"]));
        assert!(d.entries[0].blame > 0.0);
        assert!((d.entries[0].counterfactual_y - 0.5).abs() < 1e-12);
    }

    #[test]
    fn blames_rescale_under_target_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let rows: Vec<Vec<f64>> = (0..2000)
            .map(|_| {
                let (a, b) = (normal.sample(&mut rng), normal.sample(&mut rng));
                vec![a, b, 2.0 * a - b + 0.5 * normal.sample(&mut rng)]
            })
            .collect();
        let metas = vec![KpiMeta::kpi("A"), KpiMeta::kpi("B"), KpiMeta::kpi("Y")];
        let d = Dataset::from_rows(metas, &rows).unwrap();
        let g = CausalGraph::from_edges(names(&["A", "B", "Y"]), [("A", "Y"), ("B", "Y")]).unwrap();
        let c = 7.5;
        let scaled = d.map_column("Y", |v| v * c).unwrap();
        let sem = fit_sem(&d, &g, &InstrumentMap::new(), &FitOptions::default()).unwrap();
        let sem_c = fit_sem(&scaled, &g, &InstrumentMap::new(), &FitOptions::default()).unwrap();
        let s = snap(&[("A", 1.5), ("B", -1.0), ("Y", 4.0)]);
        let s_c = snap(&[("A", 1.5), ("B", -1.0), ("Y", 4.0 * c)]);
        let (r, r_c) = (root_cause_analysis(&sem, &s, "Y").unwrap(), root_cause_analysis(&sem_c, &s_c, "Y").unwrap());
        assert_eq!(r.ranked(), r_c.ranked());
        assert!(!r.entries.is_empty());
        for (e, e_c) in r.entries.iter().zip(&r_c.entries) {
            assert!((e.blame / c - e_c.blame).abs() < 1e-9 * e.blame.abs());
        }
    }

    #[test]
    fn snapshot_from_window() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let d = Dataset::from_rows(vec![KpiMeta::kpi("A")], &rows).unwrap();
        let s = KpiSnapshot::from_window(&d, 2, 6).unwrap();
        assert_eq!(s.values["A"], 3.5);
        assert_eq!(s.window, Some((2, 6)));
    }
}

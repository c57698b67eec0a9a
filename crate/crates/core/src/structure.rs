//! Score-based causal graph learning.
//!
//! Stage one scores every candidate parent set of every node (linear-Gaussian
//! BIC) into a [`LocalScoreCache`]; stage two searches for the DAG that
//! maximises the sum of cached local scores, either exactly by dynamic
//! programming over node subsets or by hill climbing with random restarts.
//! Chaos-variable columns may take part in the search but are always roots.

use std::collections::{BTreeSet, HashMap};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::CausalGraph;
use crate::model::Dataset;
use crate::regress::correlation;

/// Largest node count accepted by the exact search.
pub const EXACT_MAX_NODES: usize = 12;
/// Two-sided significance level of the correlation test in [`evaluate_graph`].
pub const DSEP_ALPHA: f64 = 0.05;
const Z_975: f64 = 1.959_963_984_540_054;
const TIE_TOL: f64 = 1e-9;

/// Column means and population covariance, enough to score any linear-Gaussian parent set.
#[derive(Debug, Clone)]
pub struct ScoreData {
    names: Vec<String>,
    n: usize,
    cov: DMatrix<f64>,
}

impl ScoreData {
    pub fn new(dataset: &Dataset, columns: &[String]) -> Result<Self> {
        let idx: Vec<usize> = columns
            .iter()
            .map(|c| dataset.column_index(c))
            .collect::<Result<_>>()?;
        let n = dataset.n_rows();
        let p = idx.len();
        let mut means = vec![0.0; p];
        for r in 0..n {
            let row = dataset.row(r);
            for (m, &i) in means.iter_mut().zip(&idx) {
                *m += row[i];
            }
        }
        means.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = DMatrix::<f64>::zeros(p, p);
        let mut centered = vec![0.0; p];
        for r in 0..n {
            let row = dataset.row(r);
            for (a, &i) in idx.iter().enumerate() {
                centered[a] = row[i] - means[a];
            }
            for a in 0..p {
                for b in a..p {
                    cov[(a, b)] += centered[a] * centered[b];
                }
            }
        }
        for a in 0..p {
            for b in a..p {
                cov[(a, b)] /= n as f64;
                cov[(b, a)] = cov[(a, b)];
            }
        }
        Ok(Self {
            names: columns.to_vec(),
            n,
            cov,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownNode(name.to_string()))
    }

    /// BIC of regressing `child` on `parents`: `loglik − (k/2)·ln n`, `k = |parents| + 2`.
    pub fn score(&self, child: usize, parents: &[usize]) -> Result<f64> {
        let k = parents.len();
        if parents.contains(&child) {
            return Err(Error::InvalidArgument("a node cannot be its own parent".into()));
        }
        if self.n <= k + 2 {
            return Err(Error::DegenerateData(format!(
                "{} rows cannot support {k} parents",
                self.n
            )));
        }
        let var = self.cov[(child, child)];
        if !(var > 0.0) {
            return Err(Error::DegenerateData(format!(
                "`{}` has zero variance",
                self.names[child]
            )));
        }
        let residual = if k == 0 {
            var
        } else {
            let spp = DMatrix::from_fn(k, k, |a, b| self.cov[(parents[a], parents[b])]);
            let scale: Vec<f64> = (0..k).map(|a| spp[(a, a)].sqrt()).collect();
            if scale.iter().any(|s| !(*s > 0.0)) {
                return Err(Error::DegenerateData("constant parent".into()));
            }
            let corr = DMatrix::from_fn(k, k, |a, b| spp[(a, b)] / (scale[a] * scale[b]));
            if corr.clone().symmetric_eigen().eigenvalues.min() < 1e-10 {
                return Err(Error::DegenerateData("collinear parents".into()));
            }
            let spc = nalgebra::DVector::from_fn(k, |a, _| self.cov[(parents[a], child)] / scale[a]);
            let chol = corr
                .cholesky()
                .ok_or_else(|| Error::DegenerateData("collinear parents".into()))?;
            let explained = spc.dot(&chol.solve(&spc));
            var - explained
        };
        let sigma2 = residual.max(var * 1e-12);
        let n = self.n as f64;
        let loglik = -0.5 * n * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0);
        Ok(loglik - 0.5 * (k as f64 + 2.0) * n.ln())
    }

    pub fn score_named(&self, child: &str, parents: &[String]) -> Result<f64> {
        let c = self.index(child)?;
        let mut ps: Vec<usize> = parents.iter().map(|p| self.index(p)).collect::<Result<_>>()?;
        ps.sort_unstable();
        ps.dedup();
        self.score(c, &ps)
    }
}

/// Linear-Gaussian BIC local score of `child` given `parent_set`. Higher is better.
pub fn local_score(dataset: &Dataset, child: &str, parent_set: &[String]) -> Result<f64> {
    let mut parents: Vec<String> = parent_set.to_vec();
    parents.sort();
    parents.dedup();
    let mut cols = vec![child.to_string()];
    cols.extend(parents);
    let data = ScoreData::new(dataset, &cols)?;
    let parents: Vec<usize> = (1..cols.len()).collect();
    data.score(0, &parents)
}

/// Sum of local scores of every node given its parents in `graph`.
pub fn global_score(dataset: &Dataset, graph: &CausalGraph) -> Result<f64> {
    let data = ScoreData::new(dataset, graph.nodes())?;
    graph
        .nodes()
        .iter()
        .map(|n| data.score_named(n, &graph.parents(n)?))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    /// Exact when the node count allows it, otherwise hill climbing.
    Auto,
    Exact,
    HillClimb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub max_in_degree: usize,
    pub restarts: usize,
    pub seed: u64,
    pub mode: SearchMode,
    /// Whether chaos-variable columns join the graph (always as roots).
    pub include_chaos: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            max_in_degree: 3,
            restarts: 10,
            seed: 0,
            mode: SearchMode::Auto,
            include_chaos: true,
        }
    }
}

/// Stage-one table of `(child, parent set) → BIC`.
#[derive(Debug, Clone)]
pub struct LocalScoreCache {
    names: Vec<String>,
    max_in_degree: usize,
    roots_only: Vec<bool>,
    entries: HashMap<(usize, Vec<usize>), f64>,
}

fn subsets_up_to(pool: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..k {
        let mut next = Vec::new();
        for s in &frontier {
            let start = s.last().map_or(0, |&l| pool.iter().position(|&p| p == l).unwrap() + 1);
            for &p in &pool[start..] {
                let mut t: Vec<usize> = s.clone();
                t.push(p);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

impl LocalScoreCache {
    /// Scores all parent sets of size ≤ `max_in_degree`. Nodes flagged in
    /// `roots_only` only get the empty set. Degenerate sets are left out.
    pub fn build(data: &ScoreData, max_in_degree: usize, roots_only: &[bool]) -> Result<Self> {
        if max_in_degree == 0 {
            return Err(Error::InvalidArgument("max_in_degree must be at least 1".into()));
        }
        let p = data.names.len();
        let entries: Vec<((usize, Vec<usize>), f64)> = (0..p)
            .into_par_iter()
            .flat_map_iter(|child| {
                let pool: Vec<usize> = (0..p).filter(|&q| q != child).collect();
                let sets = if roots_only[child] {
                    vec![Vec::new()]
                } else {
                    subsets_up_to(&pool, max_in_degree.min(pool.len()))
                };
                sets.into_iter()
                    .filter_map(move |s| data.score(child, &s).ok().map(|v| ((child, s), v)))
            })
            .collect();
        let entries: HashMap<_, _> = entries.into_iter().collect();
        for child in 0..p {
            if !entries.contains_key(&(child, Vec::new())) {
                return Err(Error::DegenerateData(format!(
                    "`{}` cannot be scored",
                    data.names[child]
                )));
            }
        }
        Ok(Self {
            names: data.names.clone(),
            max_in_degree,
            roots_only: roots_only.to_vec(),
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_in_degree(&self) -> usize {
        self.max_in_degree
    }

    /// Cached score; `parents` must be sorted.
    pub fn get(&self, child: usize, parents: &[usize]) -> Option<f64> {
        self.entries.get(&(child, parents.to_vec())).copied()
    }

    /// Parent sets of `child` that beat every one of their proper subsets,
    /// best first.
    pub fn pruned_candidates(&self, child: usize) -> Vec<(Vec<usize>, f64)> {
        let mut sets: Vec<(Vec<usize>, f64)> = self
            .entries
            .iter()
            .filter(|((c, _), _)| *c == child)
            .map(|((_, s), v)| (s.clone(), *v))
            .collect();
        sets.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| a.0.cmp(&b.0)));
        let lookup: HashMap<Vec<usize>, f64> = sets.iter().cloned().collect();
        let mut kept: Vec<(Vec<usize>, f64)> = sets
            .into_iter()
            .filter(|(s, v)| {
                s.is_empty()
                    || subsets_up_to(s, s.len() - 1)
                        .iter()
                        .all(|sub| lookup.get(sub).is_none_or(|w| v > w))
            })
            .collect();
        kept.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        kept
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchResult {
    pub graph: CausalGraph,
    pub score: f64,
    /// Constant columns excluded from the search.
    pub dropped: Vec<String>,
    pub mode: SearchMode,
}

fn is_constant(values: &[f64]) -> bool {
    values.iter().all(|v| *v == values[0])
}

/// Learns a DAG over the dataset's usable columns.
pub fn search_dag(dataset: &Dataset, config: &SearchConfig) -> Result<CausalGraph> {
    Ok(search_dag_report(dataset, config)?.graph)
}

pub fn search_dag_report(dataset: &Dataset, config: &SearchConfig) -> Result<SearchResult> {
    if config.max_in_degree == 0 {
        return Err(Error::InvalidArgument("max_in_degree must be at least 1".into()));
    }
    let mut usable = Vec::new();
    let mut dropped = Vec::new();
    for (i, c) in dataset.columns().iter().enumerate() {
        if c.is_chaos() && !config.include_chaos {
            continue;
        }
        if is_constant(&dataset.column_at(i)) {
            dropped.push(c.name.clone());
        } else {
            usable.push(c.name.clone());
        }
    }
    if usable.iter().filter(|n| !dataset.meta(n).unwrap().is_chaos()).count() < 2 {
        return Err(Error::NoUsableColumns(format!(
            "need at least 2 non-constant KPI columns, dropped {dropped:?}"
        )));
    }
    let data = ScoreData::new(dataset, &usable)?;
    let roots_only: Vec<bool> = usable.iter().map(|n| dataset.meta(n).unwrap().is_chaos()).collect();
    let cache = LocalScoreCache::build(&data, config.max_in_degree, &roots_only)?;
    let mode = match config.mode {
        SearchMode::Auto if usable.len() <= EXACT_MAX_NODES => SearchMode::Exact,
        SearchMode::Auto => SearchMode::HillClimb,
        m => m,
    };
    let (parents, score) = match mode {
        SearchMode::Exact => exact_search(&cache)?,
        _ => hill_climb_search(&cache, config.restarts, config.seed),
    };
    let graph = to_graph(&usable, &parents)?;
    Ok(SearchResult {
        graph,
        score,
        dropped,
        mode,
    })
}

fn to_graph(names: &[String], parents: &[Vec<usize>]) -> Result<CausalGraph> {
    let edges = parents
        .iter()
        .enumerate()
        .flat_map(|(c, ps)| ps.iter().map(move |&p| (names[p].clone(), names[c].clone())));
    CausalGraph::from_edges(names.to_vec(), edges)
}

/// Lexicographic rank of every node name; used to break score ties.
fn name_ranks(names: &[String]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..names.len()).collect();
    order.sort_by(|&a, &b| names[a].cmp(&names[b]));
    let mut rank = vec![0; names.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    rank
}

/// Exact maximisation over all DAGs respecting the cache's in-degree bound.
/// Parent index sets per node, with the total score.
pub type Dag = (Vec<Vec<usize>>, f64);

pub fn exact_search(cache: &LocalScoreCache) -> Result<Dag> {
    let p = cache.names.len();
    if p > EXACT_MAX_NODES {
        return Err(Error::InvalidArgument(format!(
            "exact search supports at most {EXACT_MAX_NODES} nodes, got {p}"
        )));
    }
    let candidates: Vec<Vec<(u32, f64, Vec<usize>)>> = (0..p)
        .map(|v| {
            cache
                .pruned_candidates(v)
                .into_iter()
                .map(|(s, score)| (s.iter().fold(0u32, |m, &q| m | (1 << q)), score, s))
                .collect()
        })
        .collect();
    let best_parents = |v: usize, allowed: u32| -> (f64, usize) {
        let idx = candidates[v]
            .iter()
            .position(|(mask, _, _)| mask & !allowed == 0)
            .expect("the empty set is always a candidate");
        (candidates[v][idx].1, idx)
    };
    let rank = name_ranks(&cache.names);
    // later names are tried first as sinks so ties orient edges from smaller to larger names
    let mut sink_order: Vec<usize> = (0..p).collect();
    sink_order.sort_by(|&a, &b| rank[b].cmp(&rank[a]));
    let full = (1u32 << p) - 1;
    let mut best = vec![f64::NEG_INFINITY; 1 << p];
    let mut choice = vec![(0usize, 0usize); 1 << p];
    best[0] = 0.0;
    for set in 1..=full {
        for &v in &sink_order {
            if set & (1 << v) == 0 {
                continue;
            }
            let rest = set & !(1 << v);
            let (s, idx) = best_parents(v, rest);
            let total = best[rest as usize] + s;
            if total > best[set as usize] + TIE_TOL * total.abs().max(1.0) {
                best[set as usize] = total;
                choice[set as usize] = (v, idx);
            }
        }
    }
    let mut parents = vec![Vec::new(); p];
    let mut set = full;
    while set != 0 {
        let (v, idx) = choice[set as usize];
        parents[v] = candidates[v][idx].2.clone();
        set &= !(1 << v);
    }
    let score = (0..p).map(|v| cache.get(v, &parents[v]).unwrap()).sum();
    Ok((parents, score))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Move {
    Add(usize, usize),
    Remove(usize, usize),
    Reverse(usize, usize),
}

struct ClimbState<'a> {
    cache: &'a LocalScoreCache,
    parents: Vec<Vec<usize>>,
    local: Vec<f64>,
}

impl<'a> ClimbState<'a> {
    fn new(cache: &'a LocalScoreCache, parents: Vec<Vec<usize>>) -> Self {
        let local = parents
            .iter()
            .enumerate()
            .map(|(c, ps)| cache.get(c, ps).expect("start graph uses cached parent sets"))
            .collect();
        Self {
            cache,
            parents,
            local,
        }
    }

    fn total(&self) -> f64 {
        self.local.iter().sum()
    }

    fn has_edge(&self, p: usize, c: usize) -> bool {
        self.parents[c].contains(&p)
    }

    /// Whether `to` is reachable from `from` along directed edges, optionally ignoring one edge.
    fn reaches(&self, from: usize, to: usize, skip: Option<(usize, usize)>) -> bool {
        let p = self.parents.len();
        let mut seen = vec![false; p];
        let mut stack = vec![from];
        while let Some(cur) = stack.pop() {
            if cur == to {
                return true;
            }
            for (c, s) in seen.iter_mut().enumerate() {
                if !*s && self.parents[c].contains(&cur) && skip != Some((cur, c)) {
                    *s = true;
                    stack.push(c);
                }
            }
        }
        false
    }

    fn with(&self, c: usize, add: Option<usize>, remove: Option<usize>) -> Option<(Vec<usize>, f64)> {
        let mut ps = self.parents[c].clone();
        if let Some(r) = remove {
            ps.retain(|&q| q != r);
        }
        if let Some(a) = add {
            if self.cache.roots_only[c] || ps.len() >= self.cache.max_in_degree {
                return None;
            }
            ps.push(a);
            ps.sort_unstable();
        }
        self.cache.get(c, &ps).map(|s| (ps, s))
    }

    fn delta(&self, m: Move) -> Option<f64> {
        match m {
            Move::Add(p, c) => {
                if self.reaches(c, p, None) {
                    return None;
                }
                self.with(c, Some(p), None).map(|(_, s)| s - self.local[c])
            }
            Move::Remove(p, c) => self.with(c, None, Some(p)).map(|(_, s)| s - self.local[c]),
            Move::Reverse(p, c) => {
                if self.reaches(p, c, Some((p, c))) {
                    return None;
                }
                let (_, sc) = self.with(c, None, Some(p))?;
                let (_, sp) = self.with(p, Some(c), None)?;
                Some(sc - self.local[c] + sp - self.local[p])
            }
        }
    }

    fn apply(&mut self, m: Move) {
        // (node, parent added, parent removed)
        let edits: Vec<(usize, Option<usize>, Option<usize>)> = match m {
            Move::Add(p, c) => vec![(c, Some(p), None)],
            Move::Remove(p, c) => vec![(c, None, Some(p))],
            Move::Reverse(p, c) => vec![(c, None, Some(p)), (p, Some(c), None)],
        };
        for (node, add, remove) in edits {
            let (ps, s) = self.with(node, add, remove).expect("move was validated");
            self.parents[node] = ps;
            self.local[node] = s;
        }
    }

    fn moves(&self, order: &[usize]) -> Vec<Move> {
        let mut out = Vec::new();
        for &a in order {
            for &b in order {
                if a == b {
                    continue;
                }
                if self.has_edge(a, b) {
                    out.push(Move::Remove(a, b));
                    out.push(Move::Reverse(a, b));
                } else if !self.has_edge(b, a) {
                    out.push(Move::Add(a, b));
                }
            }
        }
        out
    }

    /// Greedy best-improvement ascent; returns the score after every accepted move.
    fn climb(&mut self, order: &[usize]) -> Vec<f64> {
        let mut trace = vec![self.total()];
        loop {
            let mut best: Option<(f64, Move)> = None;
            for m in self.moves(order) {
                if let Some(d) = self.delta(m) {
                    let tol = TIE_TOL * self.total().abs().max(1.0);
                    if d > tol && best.is_none_or(|(bd, _)| d > bd + tol) {
                        best = Some((d, m));
                    }
                }
            }
            match best {
                Some((_, m)) => {
                    self.apply(m);
                    trace.push(self.total());
                }
                None => return trace,
            }
        }
    }
}

/// Candidate parent sets per node, best first.
type Candidates = Vec<Vec<(Vec<usize>, f64)>>;

/// Best-scoring candidate of `v` whose parents all precede it.
fn best_given_order(cands: &Candidates, v: usize, pos: &[usize]) -> (usize, f64) {
    cands[v]
        .iter()
        .enumerate()
        .find(|(_, (set, _))| set.iter().all(|&q| pos[q] < pos[v]))
        .map(|(i, (_, s))| (i, *s))
        .expect("the empty set is always a candidate")
}

fn positions(order: &[usize]) -> Vec<usize> {
    let mut pos = vec![0; order.len()];
    for (i, &v) in order.iter().enumerate() {
        pos[v] = i;
    }
    pos
}

/// Local search over node orderings with single-node insertion moves; each
/// node takes its best cached parent set among its predecessors.
fn order_search(cands: &Candidates, mut order: Vec<usize>, visit: &[usize]) -> Vec<usize> {
    let n = order.len();
    let mut pos = positions(&order);
    let mut local: Vec<f64> = (0..n).map(|v| best_given_order(cands, v, &pos).1).collect();
    loop {
        let total: f64 = local.iter().sum();
        let tol = TIE_TOL * total.abs().max(1.0);
        let mut improved = false;
        for &v in visit {
            let i = pos[v];
            let mut best: Option<(f64, usize, Vec<f64>)> = None;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let mut trial = order.clone();
                trial.remove(i);
                trial.insert(j, v);
                let tpos = positions(&trial);
                let span = if j < i { j..=i } else { i..=j };
                let mut scores = local.clone();
                let mut delta = 0.0;
                for &u in &trial[span] {
                    let s = best_given_order(cands, u, &tpos).1;
                    delta += s - local[u];
                    scores[u] = s;
                }
                if delta > tol && best.as_ref().is_none_or(|(bd, _, _)| delta > bd + tol) {
                    best = Some((delta, j, scores));
                }
            }
            if let Some((_, j, scores)) = best {
                order.remove(i);
                order.insert(j, v);
                pos = positions(&order);
                local = scores;
                improved = true;
            }
        }
        if !improved {
            return order;
        }
    }
}

fn parents_for_order(cands: &Candidates, order: &[usize]) -> Vec<Vec<usize>> {
    let pos = positions(order);
    (0..order.len())
        .map(|v| cands[v][best_given_order(cands, v, &pos).0].0.clone())
        .collect()
}

/// A topological order of the parent lists, ties broken by `rank`.
fn topo_order(parents: &[Vec<usize>], rank: &[usize]) -> Vec<usize> {
    let n = parents.len();
    let mut indegree: Vec<usize> = parents.iter().map(|ps| ps.len()).collect();
    let mut ready: BTreeSet<(usize, usize)> = (0..n).filter(|&v| indegree[v] == 0).map(|v| (rank[v], v)).collect();
    let mut out = Vec::with_capacity(n);
    while let Some(&(r, v)) = ready.iter().next() {
        ready.remove(&(r, v));
        out.push(v);
        for c in 0..n {
            if parents[c].contains(&v) {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert((rank[c], c));
                }
            }
        }
    }
    out
}

/// Hill climbing under edge add/remove/reverse moves. Starting points are the
/// empty graph, the optimum of an ordering search seeded with the incumbent's
/// topological order, and `restarts` ordering searches from random orders.
/// Every start is polished by edge moves, so the result is a local maximum.
pub fn hill_climb_search(cache: &LocalScoreCache, restarts: usize, seed: u64) -> Dag {
    hill_climb_traced(cache, restarts, seed).0
}

pub(crate) fn hill_climb_traced(
    cache: &LocalScoreCache,
    restarts: usize,
    seed: u64,
) -> (Dag, Vec<Vec<f64>>) {
    let p = cache.names.len();
    let rank = name_ranks(&cache.names);
    let mut by_name: Vec<usize> = (0..p).collect();
    by_name.sort_by_key(|&i| rank[i]);
    let cands: Candidates = (0..p).map(|v| cache.pruned_candidates(v)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut traces = Vec::new();
    let mut best: Option<(Vec<Vec<usize>>, f64)> = None;
    let polish = |start: Vec<Vec<usize>>, traces: &mut Vec<Vec<f64>>, best: &mut Option<(Vec<Vec<usize>>, f64)>| {
        let mut state = ClimbState::new(cache, start);
        traces.push(state.climb(&by_name));
        let total = state.total();
        if best
            .as_ref()
            .is_none_or(|(_, b)| total > b + TIE_TOL * total.abs().max(1.0))
        {
            *best = Some((state.parents, total));
        }
    };
    polish(vec![Vec::new(); p], &mut traces, &mut best);
    let incumbent = topo_order(&best.as_ref().unwrap().0, &rank);
    let mut starts = vec![incumbent];
    for _ in 0..restarts {
        let mut o = by_name.clone();
        o.shuffle(&mut rng);
        starts.push(o);
    }
    for start in starts {
        let order = order_search(&cands, start, &by_name);
        polish(parents_for_order(&cands, &order), &mut traces, &mut best);
    }
    (best.unwrap(), traces)
}

/// Fit statistics of a graph on (held-out) data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphQuality {
    /// Sum of BIC local scores over the graph's KPI nodes.
    pub bic: f64,
    /// Fraction of KPI pairs whose marginal d-separation agrees with a correlation test.
    pub dsep_accuracy: f64,
    pub pairs: usize,
}

/// `|r|` above which a correlation is significant at [`DSEP_ALPHA`] (Fisher z).
pub fn correlation_threshold(n: usize) -> f64 {
    (Z_975 / ((n as f64) - 3.0).max(1.0).sqrt()).tanh()
}

/// Scores `graph` against `dataset`. Chaos-variable nodes act as given inputs:
/// they may be parents but are not scored or paired.
pub fn evaluate_graph(graph: &CausalGraph, dataset: &Dataset) -> Result<GraphQuality> {
    for n in graph.nodes() {
        if !dataset.has_column(n) {
            return Err(Error::UnknownNode(n.clone()));
        }
    }
    let data = ScoreData::new(dataset, graph.nodes())?;
    let kpis: Vec<&String> = graph
        .nodes()
        .iter()
        .filter(|n| !dataset.meta(n).unwrap().is_chaos())
        .collect();
    let mut bic = 0.0;
    for n in &kpis {
        bic += data.score_named(n, &graph.parents(n)?)?;
    }
    let columns: Vec<Vec<f64>> = kpis.iter().map(|n| dataset.column(n)).collect::<Result<_>>()?;
    let threshold = correlation_threshold(dataset.n_rows());
    let mut agree = 0usize;
    let mut pairs = 0usize;
    for i in 0..kpis.len() {
        for j in i + 1..kpis.len() {
            let separated = graph.d_separated(kpis[i], kpis[j], &[])?;
            let dependent = correlation(&columns[i], &columns[j]).abs() > threshold;
            pairs += 1;
            if separated != dependent {
                agree += 1;
            }
        }
    }
    Ok(GraphQuality {
        bic,
        dsep_accuracy: if pairs == 0 { 1.0 } else { agree as f64 / pairs as f64 },
        pairs,
    })
}

/// Precision, recall and F1 of the learned skeleton against a reference,
/// over edges among nodes both graphs share.
pub fn skeleton_f1(learned: &CausalGraph, truth: &CausalGraph) -> (f64, f64, f64) {
    let shared: BTreeSet<&String> = learned.nodes().iter().filter(|n| truth.contains(n)).collect();
    let keep = |g: &CausalGraph| -> BTreeSet<(String, String)> {
        g.skeleton()
            .into_iter()
            .filter(|(a, b)| shared.contains(a) && shared.contains(b))
            .collect()
    };
    let (l, t) = (keep(learned), keep(truth));
    let tp = l.intersection(&t).count() as f64;
    let precision = if l.is_empty() { 1.0 } else { tp / l.len() as f64 };
    let recall = if t.is_empty() { 1.0 } else { tp / t.len() as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

//! Directed acyclic causal graphs over KPI names.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A DAG whose nodes are KPI names and whose edges are `(parent, child)` pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphJson", into = "GraphJson")]
pub struct CausalGraph {
    nodes: Vec<String>,
    edges: BTreeSet<(String, String)>,
}

#[derive(Serialize, Deserialize)]
struct GraphJson {
    nodes: Vec<String>,
    edges: Vec<(String, String)>,
}

impl TryFrom<GraphJson> for CausalGraph {
    type Error = Error;

    fn try_from(g: GraphJson) -> Result<Self> {
        CausalGraph::from_edges(g.nodes, g.edges)
    }
}

impl From<CausalGraph> for GraphJson {
    fn from(g: CausalGraph) -> Self {
        GraphJson {
            nodes: g.nodes,
            edges: g.edges.into_iter().collect(),
        }
    }
}

impl CausalGraph {
    pub fn new(nodes: Vec<String>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for n in &nodes {
            if !seen.insert(n.as_str()) {
                return Err(Error::InvalidGraph(format!("duplicate node `{n}`")));
            }
        }
        Ok(Self {
            nodes,
            edges: BTreeSet::new(),
        })
    }

    /// Builds a graph and checks it is a DAG.
    pub fn from_edges<S: Into<String>>(
        nodes: Vec<String>,
        edges: impl IntoIterator<Item = (S, S)>,
    ) -> Result<Self> {
        let mut g = Self::new(nodes)?;
        for (p, c) in edges {
            g.insert_edge(p.into(), c.into())?;
        }
        g.topological_sort()?;
        Ok(g)
    }

    /// Adds an edge, rejecting self-loops, unknown endpoints and cycles.
    pub fn add_edge(&mut self, parent: &str, child: &str) -> Result<()> {
        self.insert_edge(parent.to_string(), child.to_string())?;
        if let Err(e) = self.topological_sort() {
            self.edges.remove(&(parent.to_string(), child.to_string()));
            return Err(e);
        }
        Ok(())
    }

    fn insert_edge(&mut self, parent: String, child: String) -> Result<()> {
        if parent == child {
            return Err(Error::InvalidGraph(format!("self-loop on `{parent}`")));
        }
        for n in [&parent, &child] {
            if !self.contains(n) {
                return Err(Error::UnknownNode(n.clone()));
            }
        }
        self.edges.insert((parent, child));
        Ok(())
    }

    pub fn remove_edge(&mut self, parent: &str, child: &str) -> bool {
        self.edges.remove(&(parent.to_string(), child.to_string()))
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str)> {
        self.edges.iter().map(|(p, c)| (p.as_str(), c.as_str()))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, parent: &str, child: &str) -> bool {
        self.edges.contains(&(parent.to_string(), child.to_string()))
    }

    pub fn contains(&self, node: &str) -> bool {
        self.nodes.iter().any(|n| n == node)
    }

    fn check(&self, node: &str) -> Result<()> {
        if self.contains(node) {
            Ok(())
        } else {
            Err(Error::UnknownNode(node.to_string()))
        }
    }

    /// Parents of `node` in lexicographic order.
    pub fn parents(&self, node: &str) -> Result<Vec<String>> {
        self.check(node)?;
        Ok(self
            .edges
            .iter()
            .filter(|(_, c)| c == node)
            .map(|(p, _)| p.clone())
            .collect())
    }

    pub fn children(&self, node: &str) -> Result<Vec<String>> {
        self.check(node)?;
        Ok(self
            .edges
            .iter()
            .filter(|(p, _)| p == node)
            .map(|(_, c)| c.clone())
            .collect())
    }

    pub fn roots(&self) -> Vec<String> {
        let with_parent: BTreeSet<&str> = self.edges.iter().map(|(_, c)| c.as_str()).collect();
        self.nodes
            .iter()
            .filter(|n| !with_parent.contains(n.as_str()))
            .cloned()
            .collect()
    }

    /// Kahn's algorithm; ready nodes are released in lexicographic order so the
    /// result is deterministic.
    pub fn topological_sort(&self) -> Result<Vec<String>> {
        let mut indegree: BTreeMap<&str, usize> = self.nodes.iter().map(|n| (n.as_str(), 0)).collect();
        let mut children: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (p, c) in &self.edges {
            *indegree.get_mut(c.as_str()).expect("edge endpoint is a node") += 1;
            children.entry(p.as_str()).or_default().push(c.as_str());
        }
        let mut ready: BTreeSet<&str> = indegree
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&n, _)| n)
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(n) = ready.pop_first() {
            order.push(n.to_string());
            for &c in children.get(n).map(Vec::as_slice).unwrap_or(&[]) {
                let d = indegree.get_mut(c).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() == self.nodes.len() {
            return Ok(order);
        }
        let remaining: BTreeSet<&str> = indegree
            .iter()
            .filter(|(_, &d)| d > 0)
            .map(|(&n, _)| n)
            .collect();
        Err(Error::CycleDetected(self.find_cycle(&remaining)))
    }

    /// Walks parent links inside the unsorted remainder until a node repeats.
    fn find_cycle(&self, remaining: &BTreeSet<&str>) -> Vec<String> {
        let Some(&start) = remaining.first() else {
            return Vec::new();
        };
        let mut path: Vec<&str> = vec![start];
        let mut cur = start;
        loop {
            let next = self
                .edges
                .iter()
                .find(|(p, c)| c == cur && remaining.contains(p.as_str()))
                .map(|(p, _)| p.as_str())
                .expect("every node left by Kahn's algorithm has a remaining parent");
            if let Some(pos) = path.iter().position(|&n| n == next) {
                let mut cycle: Vec<String> = path[pos..].iter().rev().map(|s| s.to_string()).collect();
                cycle.rotate_right(1);
                return cycle;
            }
            path.push(next);
            cur = next;
        }
    }

    pub fn is_acyclic(&self) -> bool {
        self.topological_sort().is_ok()
    }

    fn reach(&self, node: &str, upward: bool) -> Result<BTreeSet<String>> {
        self.check(node)?;
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([node.to_string()]);
        while let Some(cur) = queue.pop_front() {
            for (p, c) in &self.edges {
                let (from, to) = if upward { (c, p) } else { (p, c) };
                if *from == cur && to != node && seen.insert(to.clone()) {
                    queue.push_back(to.clone());
                }
            }
        }
        Ok(seen)
    }

    /// Every node with a directed path into `node`, excluding `node`.
    pub fn ancestors(&self, node: &str) -> Result<BTreeSet<String>> {
        self.reach(node, true)
    }

    /// Every node reachable from `node`, excluding `node`.
    pub fn descendants(&self, node: &str) -> Result<BTreeSet<String>> {
        self.reach(node, false)
    }

    /// Restricts the graph to `keep`, dropping incident edges.
    pub fn induced(&self, keep: &[String]) -> Result<CausalGraph> {
        let set: BTreeSet<&str> = keep.iter().map(String::as_str).collect();
        let mut g = CausalGraph::new(keep.to_vec())?;
        for (p, c) in &self.edges {
            if set.contains(p.as_str()) && set.contains(c.as_str()) {
                g.edges.insert((p.clone(), c.clone()));
            }
        }
        Ok(g)
    }

    /// Undirected edge set `{min, max}` used for skeleton comparisons.
    pub fn skeleton(&self) -> BTreeSet<(String, String)> {
        self.edges
            .iter()
            .map(|(p, c)| if p < c { (p.clone(), c.clone()) } else { (c.clone(), p.clone()) })
            .collect()
    }

    /// d-separation of `a` and `b` given `given` (moralized ancestral graph test).
    pub fn d_separated(&self, a: &str, b: &str, given: &[String]) -> Result<bool> {
        self.check(a)?;
        self.check(b)?;
        let mut relevant: BTreeSet<String> = [a.to_string(), b.to_string()].into();
        for z in given {
            self.check(z)?;
            relevant.insert(z.clone());
        }
        let seeds: Vec<String> = relevant.iter().cloned().collect();
        for s in seeds {
            relevant.extend(self.ancestors(&s)?);
        }
        let mut adj: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        let mut link = |x: &String, y: &String| {
            adj.entry(x.clone()).or_default().insert(y.clone());
            adj.entry(y.clone()).or_default().insert(x.clone());
        };
        for n in &relevant {
            let ps: Vec<&String> = self
                .edges
                .iter()
                .filter(|(_, c)| c == n)
                .map(|(p, _)| p)
                .collect();
            for p in &ps {
                link(p, n);
            }
            for (i, p) in ps.iter().enumerate() {
                for q in &ps[i + 1..] {
                    link(p, q);
                }
            }
        }
        let blocked: BTreeSet<&str> = given.iter().map(String::as_str).collect();
        if blocked.contains(a) || blocked.contains(b) {
            return Ok(true);
        }
        let mut seen: BTreeSet<&str> = [a].into();
        let mut queue = VecDeque::from([a]);
        while let Some(cur) = queue.pop_front() {
            if cur == b {
                return Ok(false);
            }
            for nb in adj.get(cur).into_iter().flatten() {
                let nb = nb.as_str();
                if !blocked.contains(nb) && seen.insert(nb) {
                    queue.push_back(nb);
                }
            }
        }
        Ok(true)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph causal {\n");
        for n in &self.nodes {
            let _ = writeln!(out, "  \"{n}\";");
        }
        for (p, c) in &self.edges {
            let _ = writeln!(out, "  \"{p}\" -> \"{c}\";");
        }
        out.push_str("}\n");
        out
    }
}

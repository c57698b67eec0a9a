//! Linear-Gaussian model of a database's KPIs, its chaos knobs and anomaly catalog.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::CausalGraph;
use crate::model::KpiMeta;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    #[serde(default)]
    pub unit: String,
    pub intercept: f64,
    pub noise_std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub parent: String,
    pub child: String,
    pub gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChaosKind {
    /// On/off fault: enabled at the top of its range.
    Direct,
    /// Swept over equally spaced thresholds of its range.
    Configurable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sensitivity {
    Low,
    High,
}

impl Sensitivity {
    pub fn level_count(self) -> usize {
        match self {
            Sensitivity::Low => 3,
            Sensitivity::High => 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosBinding {
    pub target: String,
    pub gain: f64,
    pub kind: ChaosKind,
    pub sensitivity: Sensitivity,
    /// Valid input range `[low, high]` of the knob.
    pub range: (f64, f64),
    #[serde(default)]
    pub unit: String,
}

impl ChaosBinding {
    /// Thresholds that equally divide the valid range (excluding the idle value).
    pub fn levels(&self) -> Vec<f64> {
        let (lo, hi) = self.range;
        match self.kind {
            ChaosKind::Direct => vec![hi],
            ChaosKind::Configurable => {
                let k = self.sensitivity.level_count();
                (1..=k).map(|i| lo + (hi - lo) * i as f64 / k as f64).collect()
            }
        }
    }
}

/// Unobserved common cause; never emitted as a column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSpec {
    pub name: String,
    pub std: f64,
    pub effects: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalySpec {
    #[serde(default)]
    pub description: String,
    /// Chaos variable → knob value while the anomaly is active.
    pub settings: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub kpis: Vec<NodeSpec>,
    pub edges: Vec<EdgeSpec>,
    pub chaos_bindings: BTreeMap<String, ChaosBinding>,
    #[serde(default)]
    pub latent: Vec<LatentSpec>,
    pub anomaly_catalog: BTreeMap<String, AnomalySpec>,
    /// KPI of interest for diagnosis studies.
    pub target: String,
}

impl SystemSpec {
    pub fn validate(&self) -> Result<()> {
        let kpis: BTreeSet<&str> = self.kpis.iter().map(|k| k.name.as_str()).collect();
        if kpis.len() != self.kpis.len() {
            return Err(Error::SchemaError("duplicate KPI names".into()));
        }
        for k in &self.kpis {
            if !(k.noise_std >= 0.0 && k.noise_std.is_finite() && k.intercept.is_finite()) {
                return Err(Error::SchemaError(format!("bad parameters for `{}`", k.name)));
            }
        }
        for e in &self.edges {
            if !e.gain.is_finite() {
                return Err(Error::SchemaError(format!("bad gain on {} -> {}", e.parent, e.child)));
            }
            for n in [&e.parent, &e.child] {
                if !kpis.contains(n.as_str()) {
                    // chaos variables are roots: they can never appear on a KPI edge
                    return Err(Error::SchemaError(format!("edge endpoint `{n}` is not a KPI")));
                }
            }
        }
        self.kpi_graph()?;
        for (name, b) in &self.chaos_bindings {
            if kpis.contains(name.as_str()) {
                return Err(Error::SchemaError(format!("chaos variable `{name}` shadows a KPI")));
            }
            if !kpis.contains(b.target.as_str()) {
                return Err(Error::UnknownNode(b.target.clone()));
            }
            if !(b.range.0.is_finite() && b.range.1.is_finite() && b.range.0 < b.range.1) {
                return Err(Error::SchemaError(format!("bad range for `{name}`")));
            }
        }
        for l in &self.latent {
            for t in l.effects.keys() {
                if !kpis.contains(t.as_str()) {
                    return Err(Error::UnknownNode(t.clone()));
                }
            }
        }
        for (kind, a) in &self.anomaly_catalog {
            if a.settings.is_empty() {
                return Err(Error::SchemaError(format!("anomaly `{kind}` has no chaos setting")));
            }
            for v in a.settings.keys() {
                if !self.chaos_bindings.contains_key(v) {
                    return Err(Error::UnknownChaosVariable(v.clone()));
                }
            }
        }
        if !kpis.contains(self.target.as_str()) {
            return Err(Error::UnknownNode(self.target.clone()));
        }
        Ok(())
    }

    pub fn kpi_names(&self) -> Vec<String> {
        self.kpis.iter().map(|k| k.name.clone()).collect()
    }

    pub fn chaos_names(&self) -> Vec<String> {
        self.chaos_bindings.keys().cloned().collect()
    }

    /// KPIs first, then chaos variables.
    pub fn columns(&self) -> Vec<KpiMeta> {
        let mut cols: Vec<KpiMeta> = self
            .kpis
            .iter()
            .map(|k| {
                let m = KpiMeta::kpi(k.name.clone()).with_unit(k.unit.clone());
                match &k.description {
                    Some(d) => m.with_description(d.clone()),
                    None => m,
                }
            })
            .collect();
        cols.extend(
            self.chaos_bindings
                .iter()
                .map(|(n, b)| KpiMeta::chaos(n.clone()).with_unit(b.unit.clone())),
        );
        cols
    }

    pub fn kpi_graph(&self) -> Result<CausalGraph> {
        CausalGraph::from_edges(
            self.kpi_names(),
            self.edges.iter().map(|e| (e.parent.clone(), e.child.clone())),
        )
    }

    /// Ground-truth graph including `chaos variable → target` edges.
    pub fn full_graph(&self) -> Result<CausalGraph> {
        let mut nodes = self.kpi_names();
        nodes.extend(self.chaos_names());
        let mut edges: Vec<(String, String)> = self
            .edges
            .iter()
            .map(|e| (e.parent.clone(), e.child.clone()))
            .collect();
        edges.extend(self.chaos_bindings.iter().map(|(n, b)| (n.clone(), b.target.clone())));
        CausalGraph::from_edges(nodes, edges)
    }

    pub fn gain(&self, parent: &str, child: &str) -> Option<f64> {
        self.edges
            .iter()
            .find(|e| e.parent == parent && e.child == child)
            .map(|e| e.gain)
            .or_else(|| {
                self.chaos_bindings
                    .get(parent)
                    .filter(|b| b.target == child)
                    .map(|b| b.gain)
            })
    }

    /// Treatment → instrument pairs an operator would supply: every KPI that
    /// shares a latent cause with another KPI and has a chaos knob bound to it
    /// is instrumented by that knob (first by name if several).
    pub fn suggested_instruments(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for l in self.latent.iter().filter(|l| l.effects.len() > 1) {
            for kpi in l.effects.keys() {
                if let Some((knob, _)) = self.chaos_bindings.iter().find(|(_, b)| &b.target == kpi) {
                    out.entry(kpi.clone()).or_insert_with(|| knob.clone());
                }
            }
        }
        out
    }

    /// KPIs directly driven by the chaos settings of an anomaly.
    pub fn anomaly_ground_truth(&self, kind: &str) -> Result<BTreeSet<String>> {
        let a = self
            .anomaly_catalog
            .get(kind)
            .ok_or_else(|| Error::UnknownAnomalyKind(kind.to_string()))?;
        Ok(a.settings
            .keys()
            .map(|v| self.chaos_bindings[v].target.clone())
            .collect())
    }

    /// Default 20-KPI database model with five chaos knobs.
    pub fn default_database() -> SystemSpec {
        let node = |name: &str, unit: &str, intercept: f64, noise_std: f64, description: &str| NodeSpec {
            name: name.into(),
            unit: unit.into(),
            intercept,
            noise_std,
            description: Some(description.into()),
        };
        let kpis = vec![
            node("workload_qps", "req/s", 500.0, 25.0, "client queries per second"),
            node("active_connections", "conn", 10.0, 3.0, "open client connections"),
            node("cpu_load", "%", 10.0, 2.0, "database CPU utilisation"),
            node("mem_free", "MB", 8000.0, 30.0, "free memory"),
            node("swap_usage", "MB", 1200.0, 15.0, "swap in use"),
            node("buffer_hit_ratio", "%", 52.0, 0.8, "buffer pool hit ratio"),
            node("disk_reads", "ops/s", 600.0, 12.0, "physical reads"),
            node("io_latency", "ms", 1.0, 0.25, "storage request latency"),
            node("io_wait", "%", 0.5, 0.3, "CPU time waiting on I/O"),
            node("net_delay", "ms", 0.5, 0.05, "network round-trip delay"),
            node("net_retransmits", "pkt/s", 2.0, 0.5, "TCP retransmissions"),
            node("lock_waits", "1/s", 1.0, 1.0, "row lock waits"),
            node("context_switches", "1/s", 2000.0, 60.0, "OS context switches"),
            node("thread_running", "threads", 1.0, 0.5, "running server threads"),
            node("query_duration", "ms", 2.0, 0.4, "mean query processing time"),
            node("tps", "tx/s", 900.0, 15.0, "committed transactions per second"),
            node("slow_queries", "1/min", 0.0, 0.3, "slow query log rate"),
            node("bytes_sent", "KB/s", 0.0, 40.0, "network bytes sent"),
            node("log_flush_rate", "1/s", 0.0, 1.5, "redo log flushes"),
            node("temp_tables", "1/s", 0.0, 1.0, "temporary tables created"),
        ];
        let edge = |p: &str, c: &str, gain: f64| EdgeSpec {
            parent: p.into(),
            child: c.into(),
            gain,
        };
        let edges = vec![
            edge("workload_qps", "active_connections", 0.1),
            edge("workload_qps", "cpu_load", 0.04),
            edge("workload_qps", "disk_reads", 0.3),
            edge("workload_qps", "temp_tables", 0.02),
            edge("mem_free", "swap_usage", -0.12),
            edge("mem_free", "buffer_hit_ratio", 0.005),
            edge("buffer_hit_ratio", "disk_reads", -5.0),
            edge("disk_reads", "io_latency", 0.01),
            edge("io_latency", "io_wait", 0.8),
            edge("net_delay", "net_retransmits", 0.8),
            edge("active_connections", "lock_waits", 0.15),
            edge("cpu_load", "context_switches", 30.0),
            edge("active_connections", "context_switches", 8.0),
            edge("cpu_load", "thread_running", 0.1),
            edge("io_wait", "thread_running", 0.5),
            edge("cpu_load", "query_duration", 0.15),
            edge("io_latency", "query_duration", 1.2),
            edge("net_delay", "query_duration", 0.8),
            edge("query_duration", "tps", -12.0),
            edge("active_connections", "tps", 1.5),
            edge("lock_waits", "tps", -2.0),
            edge("query_duration", "slow_queries", 0.5),
            edge("tps", "bytes_sent", 4.0),
            edge("tps", "log_flush_rate", 0.05),
        ];
        let binding = |target: &str, gain: f64, sensitivity: Sensitivity, range: (f64, f64), unit: &str| {
            ChaosBinding {
                target: target.into(),
                gain,
                kind: ChaosKind::Configurable,
                sensitivity,
                range,
                unit: unit.into(),
            }
        };
        let chaos_bindings = BTreeMap::from([
            ("chaos_cpu_stress".to_string(), binding("cpu_load", 0.5, Sensitivity::High, (0.0, 100.0), "% load")),
            ("chaos_io_delay".to_string(), binding("io_latency", 1.0, Sensitivity::High, (0.0, 20.0), "ms")),
            ("chaos_mem_stress".to_string(), binding("mem_free", -1.0, Sensitivity::Low, (0.0, 6000.0), "MB")),
            ("chaos_net_delay".to_string(), binding("net_delay", 1.0, Sensitivity::Low, (0.0, 30.0), "ms")),
            ("chaos_workload".to_string(), binding("workload_qps", 1.0, Sensitivity::High, (0.0, 1500.0), "req/s")),
        ]);
        let latent = vec![LatentSpec {
            name: "background_load".into(),
            std: 1.0,
            effects: BTreeMap::from([("cpu_load".to_string(), 3.0), ("query_duration".to_string(), 1.0)]),
        }];
        let anomaly = |description: &str, settings: &[(&str, f64)]| AnomalySpec {
            description: description.into(),
            settings: settings.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        };
        let anomaly_catalog = BTreeMap::from([
            ("workload_spike".to_string(), anomaly("sudden surge of client queries", &[("chaos_workload", 1200.0)])),
            ("io_saturation".to_string(), anomaly("storage bandwidth saturated", &[("chaos_io_delay", 15.0)])),
            ("io_latency".to_string(), anomaly("slow storage responses", &[("chaos_io_delay", 8.0)])),
            ("io_fault".to_string(), anomaly("failing storage device", &[("chaos_io_delay", 20.0)])),
            ("network_delay".to_string(), anomaly("delayed packets", &[("chaos_net_delay", 20.0)])),
            ("network_loss".to_string(), anomaly("dropped packets cause retransmission delay", &[("chaos_net_delay", 25.0)])),
            ("network_partition".to_string(), anomaly("partial partition", &[("chaos_net_delay", 30.0)])),
            ("memory_stress".to_string(), anomaly("memory hog on the host", &[("chaos_mem_stress", 6000.0)])),
            ("cpu_stress".to_string(), anomaly("CPU hog on the host", &[("chaos_cpu_stress", 80.0)])),
            ("db_backup".to_string(), anomaly("database backup", &[("chaos_io_delay", 10.0), ("chaos_cpu_stress", 40.0)])),
            ("db_restore".to_string(), anomaly("database restore", &[("chaos_io_delay", 12.0), ("chaos_cpu_stress", 30.0)])),
            ("db_flush".to_string(), anomaly("table flush", &[("chaos_io_delay", 6.0), ("chaos_cpu_stress", 20.0)])),
        ]);
        SystemSpec {
            kpis,
            edges,
            chaos_bindings,
            latent,
            anomaly_catalog,
            target: "query_duration".into(),
        }
    }
}

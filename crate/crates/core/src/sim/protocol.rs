//! Chaos-experiment protocol and anomaly episodes over a [`SystemSpec`].
//!
//! A protocol run records a baseline period, then for every experiment and
//! every level a chaos window followed by a suspend window. KPI values are
//! forward-sampled from the system's linear-Gaussian SEM once per sample.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::system::{ChaosKind, SystemSpec};
use crate::error::{Error, Result};
use crate::model::{Dataset, Segment, SegmentKind};

/// Baseline recorded before an injected anomaly.
pub const ANOMALY_LEAD_IN_S: f64 = 120.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub variable: String,
    pub levels: Vec<f64>,
    pub duration_s: f64,
    pub suspend_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub baseline_s: f64,
    pub experiments: Vec<Experiment>,
}

impl ExperimentManifest {
    /// One sweep per chaos variable over its thresholds: 300 s baseline,
    /// 60 s per level and 30 s suspend.
    pub fn default_for(system: &SystemSpec) -> Self {
        Self::scaled_for(system, 300.0, 60.0, 30.0)
    }

    pub fn scaled_for(system: &SystemSpec, baseline_s: f64, duration_s: f64, suspend_s: f64) -> Self {
        Self {
            baseline_s,
            experiments: system
                .chaos_bindings
                .iter()
                .map(|(name, b)| Experiment {
                    variable: name.clone(),
                    levels: b.levels(),
                    duration_s,
                    suspend_s,
                })
                .collect(),
        }
    }

    pub fn validate(&self, system: &SystemSpec) -> Result<()> {
        if !(self.baseline_s >= 0.0 && self.baseline_s.is_finite()) {
            return Err(Error::InvalidArgument("baseline_s must be non-negative".into()));
        }
        for e in &self.experiments {
            let binding = system
                .chaos_bindings
                .get(&e.variable)
                .ok_or_else(|| Error::UnknownChaosVariable(e.variable.clone()))?;
            if !(e.duration_s > 0.0 && e.suspend_s >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "`{}`: durations must be positive",
                    e.variable
                )));
            }
            if e.levels.is_empty() {
                return Err(Error::InvalidArgument(format!("`{}` has no levels", e.variable)));
            }
            if binding.kind == ChaosKind::Configurable {
                if !(3..=5).contains(&e.levels.len()) {
                    return Err(Error::InvalidArgument(format!(
                        "configurable `{}` needs 3 to 5 levels, got {}",
                        e.variable,
                        e.levels.len()
                    )));
                }
                let step = e.levels[1] - e.levels[0];
                let spaced = e.levels.windows(2).all(|w| ((w[1] - w[0]) - step).abs() <= 1e-12 * step.abs().max(1.0));
                if !spaced || step <= 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "levels of `{}` must be increasing and equally spaced",
                        e.variable
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Precomputed forward sampler for a system.
struct Sampler {
    n_kpi: usize,
    order: Vec<usize>,
    intercept: Vec<f64>,
    noise: Vec<f64>,
    parents: Vec<Vec<(usize, f64)>>,
    /// per KPI: (chaos column offset, gain)
    chaos: Vec<Vec<(usize, f64)>>,
    latent: Vec<(f64, Vec<(usize, f64)>)>,
    chaos_index: BTreeMap<String, usize>,
}

impl Sampler {
    fn new(system: &SystemSpec) -> Result<Self> {
        system.validate()?;
        let names = system.kpi_names();
        let idx = |n: &str| names.iter().position(|x| x == n).expect("validated KPI name");
        let order = system.kpi_graph()?.topological_sort()?.iter().map(|n| idx(n)).collect();
        let n_kpi = names.len();
        let mut parents = vec![Vec::new(); n_kpi];
        for e in &system.edges {
            parents[idx(&e.child)].push((idx(&e.parent), e.gain));
        }
        let mut chaos = vec![Vec::new(); n_kpi];
        let mut chaos_index = BTreeMap::new();
        for (j, (name, b)) in system.chaos_bindings.iter().enumerate() {
            chaos[idx(&b.target)].push((j, b.gain));
            chaos_index.insert(name.clone(), j);
        }
        let latent = system
            .latent
            .iter()
            .map(|l| (l.std, l.effects.iter().map(|(t, g)| (idx(t), *g)).collect()))
            .collect();
        Ok(Self {
            n_kpi,
            order,
            intercept: system.kpis.iter().map(|k| k.intercept).collect(),
            noise: system.kpis.iter().map(|k| k.noise_std).collect(),
            parents,
            chaos,
            latent,
            chaos_index,
        })
    }

    /// Appends one row: KPI values followed by the chaos settings.
    fn sample_row(&self, chaos_values: &[f64], rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
        let mut x = vec![0.0; self.n_kpi];
        let mut shift = vec![0.0; self.n_kpi];
        for (std, effects) in &self.latent {
            let z: f64 = StandardNormal.sample(rng);
            for &(t, g) in effects {
                shift[t] += g * std * z;
            }
        }
        for &k in &self.order {
            let eps: f64 = StandardNormal.sample(rng);
            let mut v = self.intercept[k] + shift[k] + self.noise[k] * eps;
            v += self.parents[k].iter().map(|&(p, g)| g * x[p]).sum::<f64>();
            v += self.chaos[k].iter().map(|&(c, g)| g * chaos_values[c]).sum::<f64>();
            x[k] = v;
        }
        out.extend_from_slice(&x);
        out.extend_from_slice(chaos_values);
    }
}

fn seconds_to_rows(s: f64) -> usize {
    s.round().max(0.0) as usize
}

struct TraceBuilder<'a> {
    sampler: &'a Sampler,
    rng: ChaCha8Rng,
    values: Vec<f64>,
    rows: usize,
    segments: Vec<Segment>,
}

impl TraceBuilder<'_> {
    fn push(&mut self, rows: usize, chaos_values: &[f64], kind: SegmentKind) {
        if rows == 0 {
            return;
        }
        for _ in 0..rows {
            self.sampler.sample_row(chaos_values, &mut self.rng, &mut self.values);
        }
        self.segments.push(Segment {
            kind,
            start: self.rows,
            end: self.rows + rows,
        });
        self.rows += rows;
    }
}

/// Runs the baseline + chaos sweep protocol at 1 Hz.
pub fn run_chaos_protocol(system: &SystemSpec, manifest: &ExperimentManifest, seed: u64) -> Result<Dataset> {
    manifest.validate(system)?;
    let sampler = Sampler::new(system)?;
    let idle = vec![0.0; system.chaos_bindings.len()];
    let mut b = TraceBuilder {
        sampler: &sampler,
        rng: ChaCha8Rng::seed_from_u64(seed),
        values: Vec::new(),
        rows: 0,
        segments: Vec::new(),
    };
    let baseline_rows = seconds_to_rows(manifest.baseline_s).max(
        // an empty manifest still needs at least one row
        usize::from(manifest.experiments.is_empty()),
    );
    b.push(baseline_rows, &idle, SegmentKind::Baseline);
    for e in &manifest.experiments {
        let col = sampler.chaos_index[&e.variable];
        for (level, &value) in e.levels.iter().enumerate() {
            let mut setting = idle.clone();
            setting[col] = value;
            b.push(
                seconds_to_rows(e.duration_s).max(1),
                &setting,
                SegmentKind::Chaos {
                    variable: e.variable.clone(),
                    level,
                },
            );
            b.push(seconds_to_rows(e.suspend_s), &idle, SegmentKind::Baseline);
        }
    }
    let segments = merge_adjacent_baselines(b.segments);
    Dataset::from_row_major(system.columns(), b.values)?.with_segments(segments)
}

fn merge_adjacent_baselines(segments: Vec<Segment>) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::with_capacity(segments.len());
    for s in segments {
        match out.last_mut() {
            Some(last) if last.is_baseline() && s.is_baseline() && last.end == s.start => last.end = s.end,
            _ => out.push(s),
        }
    }
    out
}

/// A purely observational trace of `rows` samples (no chaos).
pub fn run_observational(system: &SystemSpec, rows: usize, seed: u64) -> Result<Dataset> {
    let manifest = ExperimentManifest {
        baseline_s: rows as f64,
        experiments: Vec::new(),
    };
    run_chaos_protocol(system, &manifest, seed)
}

/// An evaluation trace in which every chaos variable is switched
/// independently each `window_s` seconds: off with probability one half,
/// otherwise at one of its levels drawn uniformly. Windows with every
/// variable off are labeled baseline; the others are left unlabeled.
pub fn run_randomized_chaos(system: &SystemSpec, rows: usize, window_s: f64, seed: u64) -> Result<Dataset> {
    let window = seconds_to_rows(window_s);
    if rows == 0 || window == 0 {
        return Err(Error::InvalidArgument("rows and window must be positive".into()));
    }
    let sampler = Sampler::new(system)?;
    let levels: Vec<Vec<f64>> = system.chaos_bindings.values().map(|b| b.levels()).collect();
    let mut b = TraceBuilder {
        sampler: &sampler,
        rng: ChaCha8Rng::seed_from_u64(seed),
        values: Vec::new(),
        rows: 0,
        segments: Vec::new(),
    };
    let mut labeled = Vec::new();
    while b.rows < rows {
        let setting: Vec<f64> = levels
            .iter()
            .map(|l| {
                if b.rng.random_bool(0.5) {
                    0.0
                } else {
                    l[b.rng.random_range(0..l.len())]
                }
            })
            .collect();
        let n = window.min(rows - b.rows);
        let idle = setting.iter().all(|v| *v == 0.0);
        b.push(n, &setting, SegmentKind::Baseline);
        let seg = b.segments.pop().expect("segment just pushed");
        if idle {
            labeled.push(seg);
        }
    }
    Dataset::from_row_major(system.columns(), b.values)?.with_segments(merge_adjacent_baselines(labeled))
}

/// Simulates one anomaly episode: a baseline lead-in followed by a labeled
/// anomaly window. Returns the trace and the KPIs the anomaly's chaos
/// settings drive directly.
pub fn inject_anomaly(
    system: &SystemSpec,
    kind: &str,
    duration_s: f64,
    seed: u64,
) -> Result<(Dataset, BTreeSet<String>)> {
    let spec = system
        .anomaly_catalog
        .get(kind)
        .ok_or_else(|| Error::UnknownAnomalyKind(kind.to_string()))?;
    let rows = seconds_to_rows(duration_s);
    if !(duration_s > 0.0) || rows == 0 {
        return Err(Error::InvalidArgument("anomaly duration must be positive".into()));
    }
    let sampler = Sampler::new(system)?;
    let mut setting = vec![0.0; system.chaos_bindings.len()];
    for (var, v) in &spec.settings {
        setting[sampler.chaos_index[var]] = *v;
    }
    let mut b = TraceBuilder {
        sampler: &sampler,
        rng: ChaCha8Rng::seed_from_u64(seed),
        values: Vec::new(),
        rows: 0,
        segments: Vec::new(),
    };
    b.push(
        seconds_to_rows(ANOMALY_LEAD_IN_S),
        &vec![0.0; system.chaos_bindings.len()],
        SegmentKind::Baseline,
    );
    b.push(rows, &setting, SegmentKind::Anomaly { kind: kind.to_string() });
    let truth = system.anomaly_ground_truth(kind)?;
    let dataset = Dataset::from_row_major(system.columns(), b.values)?.with_segments(b.segments)?;
    Ok((dataset, truth))
}

/// The `[start, end)` rows of the first anomaly segment, if any.
pub fn anomaly_window(dataset: &Dataset) -> Option<(usize, usize)> {
    dataset
        .segments()
        .iter()
        .find(|s| matches!(s.kind, SegmentKind::Anomaly { .. }))
        .map(|s| (s.start, s.end))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regress::mean;
    use crate::sim::system::Sensitivity;

    fn chaos_segments(d: &Dataset) -> usize {
        d.segments()
            .iter()
            .filter(|s| matches!(s.kind, SegmentKind::Chaos { .. }))
            .count()
    }

    #[test]
    fn low_sensitivity_variable_gets_three_windows() {
        let system = SystemSpec::default_database();
        let b = &system.chaos_bindings["chaos_mem_stress"];
        assert_eq!(b.sensitivity, Sensitivity::Low);
        let manifest = ExperimentManifest {
            baseline_s: 30.0,
            experiments: vec![Experiment {
                variable: "chaos_mem_stress".into(),
                levels: b.levels(),
                duration_s: 10.0,
                suspend_s: 5.0,
            }],
        };
        let d = run_chaos_protocol(&system, &manifest, 1).unwrap();
        assert_eq!(chaos_segments(&d), 3);
        assert_eq!(d.n_rows(), 30 + 3 * 15);
    }

    #[test]
    fn empty_manifest_is_one_baseline_segment() {
        let system = SystemSpec::default_database();
        let manifest = ExperimentManifest {
            baseline_s: 50.0,
            experiments: vec![],
        };
        let d = run_chaos_protocol(&system, &manifest, 2).unwrap();
        assert_eq!(d.segments(), &[Segment::baseline(0, 50)]);
        for c in d.chaos_variables() {
            assert!(d.column(&c).unwrap().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn segment_bookkeeping_matches_manifest() {
        let system = SystemSpec::default_database();
        let manifest = ExperimentManifest::scaled_for(&system, 20.0, 5.0, 2.0);
        let d = run_chaos_protocol(&system, &manifest, 3).unwrap();
        let expected: usize = manifest.experiments.iter().map(|e| e.levels.len()).sum();
        assert_eq!(chaos_segments(&d), expected);
        for e in &manifest.experiments {
            let step = e.levels[1] - e.levels[0];
            for w in e.levels.windows(2) {
                assert!(((w[1] - w[0]) - step).abs() < 1e-12);
            }
        }
        let covered: usize = d.segments().iter().map(Segment::len).sum();
        assert!(covered <= d.n_rows());
    }

    #[test]
    fn deterministic_given_seed() {
        let system = SystemSpec::default_database();
        let manifest = ExperimentManifest::scaled_for(&system, 20.0, 5.0, 2.0);
        let a = run_chaos_protocol(&system, &manifest, 7).unwrap();
        let b = run_chaos_protocol(&system, &manifest, 7).unwrap();
        assert_eq!(a, b);
        let c = run_chaos_protocol(&system, &manifest, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn cpu_stress_raises_query_duration() {
        let system = SystemSpec::default_database();
        let b = &system.chaos_bindings["chaos_cpu_stress"];
        let manifest = ExperimentManifest {
            baseline_s: 300.0,
            experiments: vec![Experiment {
                variable: "chaos_cpu_stress".into(),
                levels: b.levels(),
                duration_s: 60.0,
                suspend_s: 30.0,
            }],
        };
        let d = run_chaos_protocol(&system, &manifest, 11).unwrap();
        let qd = d.column("query_duration").unwrap();
        let top = d
            .segments()
            .iter()
            .find(|s| matches!(&s.kind, SegmentKind::Chaos { level: 4, .. }))
            .unwrap();
        let inside = mean(&qd[top.start..top.end]);
        let base_rows = d.baseline_rows();
        let base = mean(&base_rows.iter().map(|&r| qd[r]).collect::<Vec<_>>());
        assert!(inside > base, "{inside} <= {base}");
    }

    #[test]
    fn unknown_variable_rejected() {
        let system = SystemSpec::default_database();
        let manifest = ExperimentManifest {
            baseline_s: 10.0,
            experiments: vec![Experiment {
                variable: "chaos_nope".into(),
                levels: vec![1.0],
                duration_s: 1.0,
                suspend_s: 1.0,
            }],
        };
        assert_eq!(
            run_chaos_protocol(&system, &manifest, 0),
            Err(Error::UnknownChaosVariable("chaos_nope".into()))
        );
    }

    #[test]
    fn anomaly_episodes() {
        let system = SystemSpec::default_database();
        let (d, truth) = inject_anomaly(&system, "network_loss", 60.0, 1).unwrap();
        assert!(truth.contains("net_delay"));
        assert_eq!(anomaly_window(&d), Some((120, 180)));

        let (d, truth) = inject_anomaly(&system, "memory_stress", 60.0, 2).unwrap();
        assert_eq!(truth, BTreeSet::from(["mem_free".to_string()]));
        let mem = d.column("mem_free").unwrap();
        assert!(mean(&mem[120..180]) < mean(&mem[..120]));

        assert!(matches!(
            inject_anomaly(&system, "network_loss", 0.0, 1),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            inject_anomaly(&system, "alien_invasion", 10.0, 1),
            Err(Error::UnknownAnomalyKind(_))
        ));
    }

    #[test]
    fn randomized_chaos_labels_only_idle_windows() {
        let system = SystemSpec::default_database();
        let d = run_randomized_chaos(&system, 1000, 20.0, 3).unwrap();
        assert_eq!(d.n_rows(), 1000);
        assert_eq!(d, run_randomized_chaos(&system, 1000, 20.0, 3).unwrap());
        let chaos: Vec<Vec<f64>> = system.chaos_names().iter().map(|c| d.column(c).unwrap().to_vec()).collect();
        let mut baseline_rows = 0;
        for s in d.segments() {
            assert_eq!(s.kind, SegmentKind::Baseline);
            for r in s.start..s.end {
                assert!(chaos.iter().all(|c| c[r] == 0.0));
            }
            baseline_rows += s.end - s.start;
        }
        assert!(baseline_rows < d.n_rows());
        assert!(chaos.iter().all(|c| c.iter().any(|v| *v > 0.0)));
        assert!(matches!(run_randomized_chaos(&system, 0, 20.0, 3), Err(Error::InvalidArgument(_))));
    }
}

//! Computations shared by the CLI and the HTTP service, so both render
//! identical bytes for identical inputs.

use std::collections::BTreeMap;

use serde::Serialize;

use perfce_core::params::{fit_sem, FitOptions, InstrumentMap, Sem};
use perfce_core::rca::{root_cause_analysis, whatif, whatif_forced, Diagnosis, KpiSnapshot, WhatIf};
use perfce_core::sim::{anomaly_window, run_chaos_protocol, ExperimentManifest, SystemSpec};
use perfce_core::structure::{search_dag_report, SearchConfig, SearchResult};
use perfce_core::{Dataset, Result};

/// Pretty JSON with a trailing newline.
pub fn render_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("response types serialize");
    s.push('\n');
    s
}

/// The requested window, else the labeled anomaly window, else the whole trace.
pub fn resolve_window(data: &Dataset, window: Option<(usize, usize)>) -> (usize, usize) {
    window
        .or_else(|| anomaly_window(data))
        .unwrap_or((0, data.n_rows()))
}

pub fn diagnose(
    sem: &Sem,
    data: &Dataset,
    target: &str,
    window: Option<(usize, usize)>,
    top: Option<usize>,
) -> Result<Diagnosis> {
    let (a, b) = resolve_window(data, window);
    let snap = KpiSnapshot::from_window(data, a, b)?;
    let d = root_cause_analysis(sem, &snap, target)?;
    Ok(match top {
        Some(k) => d.top(k),
        None => d,
    })
}

pub fn what_if(
    sem: &Sem,
    data: &Dataset,
    target: &str,
    window: Option<(usize, usize)>,
    interventions: &BTreeMap<String, f64>,
    force: bool,
) -> Result<WhatIf> {
    let (a, b) = resolve_window(data, window);
    let snap = KpiSnapshot::from_window(data, a, b)?;
    if force {
        whatif_forced(sem, &snap, target, interventions)
    } else {
        whatif(sem, &snap, target, interventions)
    }
}

pub fn instrument_map(pairs: &BTreeMap<String, String>) -> InstrumentMap {
    pairs
        .iter()
        .fold(InstrumentMap::new(), |m, (t, z)| m.latent(t.clone(), z.clone()))
}

/// Offline phase on the default protocol: chaos trace, structure, SEM.
pub struct Learned {
    pub trace: Dataset,
    pub search: SearchResult,
    pub sem: Sem,
}

pub fn learn_from_protocol(system: &SystemSpec, manifest: &ExperimentManifest, seed: u64) -> Result<Learned> {
    let trace = run_chaos_protocol(system, manifest, seed)?;
    let search = search_dag_report(
        &trace,
        &SearchConfig {
            seed,
            ..SearchConfig::default()
        },
    )?;
    let options = FitOptions {
        seed,
        ..FitOptions::default()
    };
    let sem = fit_sem(
        &trace,
        &search.graph,
        &instrument_map(&system.suggested_instruments()),
        &options,
    )?;
    Ok(Learned { trace, search, sem })
}

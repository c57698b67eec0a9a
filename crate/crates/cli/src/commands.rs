use std::collections::BTreeMap;
use std::fs;
use std::net::IpAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use perfce_core::eval::{rca_recall_study, run_synthetic_eval, SyntheticEvalConfig};
use perfce_core::io::{load_dataset, load_graph, save_dataset, save_graph};
use perfce_core::params::{fit_sem, FitOptions, InstrumentMap, Sem};
use perfce_core::sim::{
    inject_anomaly, run_chaos_protocol, run_observational, run_randomized_chaos, ExperimentManifest, SystemSpec,
};
use perfce_core::structure::{search_dag_report, SearchConfig, SearchMode};
use perfce_core::Dataset;

use crate::error::CliError;
use crate::ops::{diagnose, learn_from_protocol, render_json, what_if};
use crate::server::{self, ServeConfig, ServiceState};

#[derive(Debug, Parser)]
#[command(name = "perfce", version, about = "Causal root-cause analysis and what-if queries over database KPIs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a KPI trace from a simulated system.
    Simulate(SimulateArgs),
    /// Learn a causal graph from a trace.
    LearnStructure(LearnStructureArgs),
    /// Fit per-edge effects, marginals and baseline means into a SEM.
    LearnParams(LearnParamsArgs),
    /// Rank the ancestors of a KPI by blame over a window.
    Diagnose(DiagnoseArgs),
    /// Predict a KPI after setting some of its ancestors.
    Whatif(WhatIfArgs),
    /// Reproducible evaluation runs.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Serve the JSON API over a loaded SEM and trace.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TraceMode {
    /// Baseline followed by one window per chaos level.
    Chaos,
    /// No fault injection.
    Observational,
    /// Every window draws each knob independently.
    Randomized,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// System definition (JSON); defaults to the built-in 20-KPI database.
    #[arg(long)]
    pub system: Option<PathBuf>,
    /// Experiment manifest (JSON); defaults to every knob at every level.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV; `.segments.json` and `.columns.json` sidecars are written next to it.
    #[arg(long, required_unless_present = "dump_defaults")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = TraceMode::Chaos)]
    pub mode: TraceMode,
    /// Rows for observational/randomized traces; defaults to the chaos trace length.
    #[arg(long)]
    pub rows: Option<usize>,
    /// Window length in seconds for randomized traces.
    #[arg(long, default_value_t = 30.0)]
    pub window_s: f64,
    /// Simulate one anomaly episode from the catalog instead.
    #[arg(long)]
    pub anomaly: Option<String>,
    /// Anomaly duration in seconds.
    #[arg(long, default_value_t = 60.0)]
    pub duration_s: f64,
    /// Write the default system, manifest and instrument map into DIR and exit.
    #[arg(long, value_name = "DIR")]
    pub dump_defaults: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LearnStructureArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Graph JSON; a `.dot` rendering is written alongside.
    #[arg(long)]
    pub out: PathBuf,
    /// Force exact search (at most 12 nodes).
    #[arg(long, conflicts_with = "hill_climb")]
    pub exact: bool,
    /// Force hill climbing.
    #[arg(long)]
    pub hill_climb: bool,
    #[arg(long, default_value_t = 3)]
    pub max_parents: usize,
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Leave chaos columns out of the graph.
    #[arg(long)]
    pub no_chaos: bool,
}

#[derive(Debug, Args)]
pub struct LearnParamsArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON map treatment → instrument (a name or `{instrument, latent_confounded}`).
    #[arg(long)]
    pub instruments: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub folds: usize,
    /// Polynomial degree of the treatment basis.
    #[arg(long, default_value_t = 1)]
    pub degree: usize,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub sem: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub target: String,
    /// Row range `from:to`; defaults to the labeled anomaly window, else the whole trace.
    #[arg(long, value_parser = parse_window)]
    pub window: Option<(usize, usize)>,
    #[arg(long)]
    pub top: Option<usize>,
}

#[derive(Debug, Args)]
pub struct WhatIfArgs {
    #[arg(long)]
    pub sem: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub target: String,
    /// Interventions `kpi=value`, comma separated or repeated.
    #[arg(long = "set", required = true, value_delimiter = ',', value_parser = parse_assignment)]
    pub set: Vec<(String, f64)>,
    #[arg(long, value_parser = parse_window)]
    pub window: Option<(usize, usize)>,
    /// Accept interventions on non-ancestors (they leave the target unchanged).
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Counterfactual accuracy on the three synthetic local structures.
    Synthetic(SyntheticArgs),
    /// Root-cause recall over simulated anomaly episodes.
    Rca(RcaArgs),
}

#[derive(Debug, Args)]
pub struct SyntheticArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub datasets: usize,
    #[arg(long, default_value_t = 5000)]
    pub train_n: usize,
    #[arg(long, default_value_t = 1000)]
    pub queries: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct RcaArgs {
    #[arg(long)]
    pub system: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub anomalies: usize,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub sem: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, env = "PERFCE_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, env = "PERFCE_BIND", default_value = "127.0.0.1")]
    pub bind: IpAddr,
    /// Directory of static console assets served at `/`.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    /// Concurrent diagnosis computations; defaults to the CPU count.
    #[arg(long)]
    pub workers: Option<usize>,
}

fn parse_window(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or("expected from:to")?;
    let a: usize = a.trim().parse().map_err(|e| format!("bad start: {e}"))?;
    let b: usize = b.trim().parse().map_err(|e| format!("bad end: {e}"))?;
    if a >= b {
        return Err(format!("empty window {a}:{b}"));
    }
    Ok((a, b))
}

fn parse_assignment(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or("expected kpi=value")?;
    let v: f64 = v.trim().parse().map_err(|e| format!("bad value for {k}: {e}"))?;
    if !v.is_finite() {
        return Err(format!("value for {k} is not finite"));
    }
    Ok((k.trim().to_string(), v))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Load(format!("{}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Load(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Load(format!("{}: {e}", path.display())))
}

pub fn load_sem(path: &Path) -> Result<Sem, CliError> {
    Ok(Sem::from_json(&read_text(path)?)?)
}

fn load_system(path: Option<&Path>) -> Result<SystemSpec, CliError> {
    let system = match path {
        Some(p) => read_json::<SystemSpec>(p)?,
        None => SystemSpec::default_database(),
    };
    system.validate()?;
    Ok(system)
}

fn load_manifest(path: Option<&Path>, system: &SystemSpec) -> Result<ExperimentManifest, CliError> {
    let manifest = match path {
        Some(p) => read_json::<ExperimentManifest>(p)?,
        None => ExperimentManifest::default_for(system),
    };
    manifest.validate(system)?;
    Ok(manifest)
}

#[derive(Serialize)]
struct TraceSummary<'a> {
    out: &'a Path,
    rows: usize,
    columns: usize,
    segments: usize,
}

fn simulate(args: &SimulateArgs) -> Result<String, CliError> {
    let system = load_system(args.system.as_deref())?;
    let manifest = load_manifest(args.manifest.as_deref(), &system)?;
    if let Some(dir) = &args.dump_defaults {
        fs::create_dir_all(dir).map_err(|e| CliError::Load(format!("{}: {e}", dir.display())))?;
        write_text(&dir.join("system.json"), &render_json(&system))?;
        write_text(&dir.join("manifest.json"), &render_json(&manifest))?;
        write_text(&dir.join("instruments.json"), &render_json(&system.suggested_instruments()))?;
        return Ok(render_json(&BTreeMap::from([("defaults", dir)])));
    }
    let out = args.out.as_deref().expect("clap requires --out");
    let trace = if let Some(kind) = &args.anomaly {
        inject_anomaly(&system, kind, args.duration_s, args.seed)?.0
    } else {
        match args.mode {
            TraceMode::Chaos => run_chaos_protocol(&system, &manifest, args.seed)?,
            mode => {
                let rows = match args.rows {
                    Some(r) => r,
                    None => run_chaos_protocol(&system, &manifest, args.seed)?.n_rows(),
                };
                if mode == TraceMode::Observational {
                    run_observational(&system, rows, args.seed)?
                } else {
                    run_randomized_chaos(&system, rows, args.window_s, args.seed)?
                }
            }
        }
    };
    save_dataset(&trace, out)?;
    Ok(render_json(&TraceSummary {
        out,
        rows: trace.n_rows(),
        columns: trace.n_cols(),
        segments: trace.segments().len(),
    }))
}

#[derive(Serialize)]
struct StructureSummary {
    nodes: usize,
    edges: usize,
    score: f64,
    mode: SearchMode,
    dropped: Vec<String>,
}

fn learn_structure(args: &LearnStructureArgs) -> Result<String, CliError> {
    let data = load_dataset(&args.data)?;
    let mode = if args.exact {
        SearchMode::Exact
    } else if args.hill_climb {
        SearchMode::HillClimb
    } else {
        SearchMode::Auto
    };
    let result = search_dag_report(
        &data,
        &SearchConfig {
            max_in_degree: args.max_parents,
            restarts: args.restarts,
            seed: args.seed,
            mode,
            include_chaos: !args.no_chaos,
        },
    )?;
    save_graph(&result.graph, &args.out)?;
    Ok(render_json(&StructureSummary {
        nodes: result.graph.nodes().len(),
        edges: result.graph.edge_count(),
        score: result.score,
        mode: result.mode,
        dropped: result.dropped.clone(),
    }))
}

#[derive(Serialize)]
struct UnquantifiedRow {
    parent: String,
    child: String,
    reason: String,
}

#[derive(Serialize)]
struct SemSummary {
    nodes: usize,
    edges: usize,
    unquantified: Vec<UnquantifiedRow>,
}

fn sem_summary(sem: &Sem) -> SemSummary {
    SemSummary {
        nodes: sem.graph.nodes().len(),
        edges: sem.graph.edge_count(),
        unquantified: sem
            .unquantified_edges()
            .into_iter()
            .map(|(parent, child, reason)| UnquantifiedRow { parent, child, reason })
            .collect(),
    }
}

fn learn_params(args: &LearnParamsArgs) -> Result<String, CliError> {
    let data = load_dataset(&args.data)?;
    let graph = load_graph(&args.graph)?;
    let instruments = match &args.instruments {
        Some(p) => read_json::<InstrumentMap>(p)?,
        None => InstrumentMap::new(),
    };
    let options = FitOptions {
        degree: args.degree,
        folds: args.folds,
        seed: args.seed,
        ..FitOptions::default()
    };
    let sem = fit_sem(&data, &graph, &instruments, &options)?;
    write_text(&args.out, &sem.to_json()?)?;
    Ok(render_json(&sem_summary(&sem)))
}

fn run_eval(cmd: &EvalCommand) -> Result<String, CliError> {
    match cmd {
        EvalCommand::Synthetic(a) => {
            let report = run_synthetic_eval(&SyntheticEvalConfig {
                datasets: a.datasets,
                train_n: a.train_n,
                queries: a.queries,
                seed: a.seed,
                ..SyntheticEvalConfig::default()
            })?;
            write_text(&a.out, &render_json(&report))?;
            Ok(render_json(&report.results))
        }
        EvalCommand::Rca(a) => {
            let system = load_system(a.system.as_deref())?;
            let manifest = load_manifest(a.manifest.as_deref(), &system)?;
            let learned = learn_from_protocol(&system, &manifest, a.seed)?;
            let study = rca_recall_study(&system, &learned.sem, a.anomalies, a.k, a.seed)?;
            write_text(&a.out, &render_json(&study))?;
            Ok(render_json(&BTreeMap::from([
                ("recall_at_k", study.recall_at_k),
                ("mean_ndcg", study.mean_ndcg),
                ("mean_map_at_r", study.mean_map_at_r),
            ])))
        }
    }
}

fn load_state(args: &ServeArgs) -> Result<ServiceState, CliError> {
    let sem = args.sem.as_deref().map(load_sem).transpose()?;
    let trace: Option<Dataset> = args.data.as_deref().map(load_dataset).transpose()?;
    let workers = args
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(4, |n| n.get()));
    if workers == 0 {
        return Err(CliError::Usage("--workers must be positive".into()));
    }
    Ok(ServiceState {
        sem,
        trace,
        config: ServeConfig {
            port: args.port,
            bind: args.bind,
            static_dir: args.static_dir.clone(),
            workers,
        },
    })
}

/// Runs one command and returns what it prints on stdout.
pub fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::LearnStructure(a) => learn_structure(&a),
        Command::LearnParams(a) => learn_params(&a),
        Command::Diagnose(a) => {
            let sem = load_sem(&a.sem)?;
            let data = load_dataset(&a.data)?;
            Ok(render_json(&diagnose(&sem, &data, &a.target, a.window, a.top)?))
        }
        Command::Whatif(a) => {
            let sem = load_sem(&a.sem)?;
            let data = load_dataset(&a.data)?;
            let mut interventions = BTreeMap::new();
            for (k, v) in &a.set {
                if interventions.insert(k.clone(), *v).is_some() {
                    return Err(CliError::Usage(format!("`{k}` is set twice")));
                }
            }
            Ok(render_json(&what_if(&sem, &data, &a.target, a.window, &interventions, a.force)?))
        }
        Command::Eval(cmd) => run_eval(&cmd),
        Command::Serve(a) => {
            let state = load_state(&a)?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Load(e.to_string()))?;
            rt.block_on(server::serve(state))?;
            Ok(String::new())
        }
    }
}

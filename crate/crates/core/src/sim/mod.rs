//! Data generation: synthetic DGPs and a simulated database driven through chaos experiments.

pub mod dgp;
pub mod protocol;
pub mod system;

pub use dgp::{generate_queries, sample_dgp, CounterfactualQuery, DgpSpec, LocalStructure};
pub use protocol::{
    anomaly_window, inject_anomaly, run_chaos_protocol, run_observational, run_randomized_chaos, Experiment,
    ExperimentManifest,
};
pub use system::{AnomalySpec, ChaosBinding, ChaosKind, EdgeSpec, LatentSpec, NodeSpec, Sensitivity, SystemSpec};

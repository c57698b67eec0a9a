//! Causal diagnosis of database performance anomalies.
//!
//! The offline phase learns a causal graph over KPIs from chaos-augmented
//! traces ([`structure`]) and fits per-edge treatment effects into a
//! structural equation model ([`params`]). The online phase answers
//! counterfactual and root-cause queries against that model ([`rca`]).
//! [`sim`] generates every dataset the crate is tested on.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod density;
pub mod error;
pub mod eval;
pub mod graph;
pub mod io;
pub mod model;
pub mod params;
pub mod rca;
pub mod regress;
pub mod sim;
pub mod structure;

pub use error::{Error, Result};
pub use graph::CausalGraph;
pub use model::{Dataset, KpiKind, KpiMeta, Segment, SegmentKind};

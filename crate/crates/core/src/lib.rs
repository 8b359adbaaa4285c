//! Root-cause localization for microservice traces.
//!
//! A trace becomes a heterogeneous graph of service instances with attached
//! metric windows and log lines. Multi-head attention over each instance's
//! data nodes scores how anomalous it looks, a hypergraph built from the
//! invocation DAG's causal paths mixes those scores along call chains, and a
//! linear head ranks instances as root-cause candidates. Gradients come from a
//! small reverse-mode tape over `ndarray` matrices.

pub mod attention;
pub mod checkpoint;
pub mod data;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod hypergraph;
pub mod model;
pub mod tape;
pub mod trace;
pub mod train;

pub use error::{Error, Result};
pub use eval::{EvalReport, RankedDiagnosis};
pub use model::{Ablation, Model, TrainConfig};
pub use train::{predict, train, TrainedModel};
pub use trace::{LabeledTrace, TraceBundle, TraceLabel};

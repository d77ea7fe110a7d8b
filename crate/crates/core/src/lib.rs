//! Deterministic simulator of a cloud batch-compute service.
//!
//! The crate models a batch service the way a research group uses one to
//! run MPI workloads on rented GPU nodes: an instance catalog with quota
//! tables, pools of dedicated and low-priority nodes, gang-scheduled
//! multi-instance tasks, a metered fileshare, and a billing ledger. Runs are
//! driven by four YAML documents and a command transcript, so a whole study
//! can be packed into an archive and re-verified bit for bit.
//!
//! Two benchmark workloads are executable: OSU-style ping-pong tables over
//! an alpha-beta interconnect model and a matrix-free conjugate-gradient
//! Poisson solver on a 7-point stencil.

pub mod batch;
pub mod billing;
pub mod catalog;
pub mod config;
pub mod digest;
pub mod fabric;
pub mod money;
pub mod par;
pub mod repro;
pub mod scenarios;
pub mod session;
pub mod storage;
pub mod workloads;

pub use batch::{BatchError, Service};
pub use catalog::{Catalog, PricingPlan, SkuSpec};
pub use config::ConfigSet;
pub use fabric::{InterconnectModel, SimDuration, SimTime};
pub use money::Usd;
pub use par::Execution;
pub use session::{Command, Session};

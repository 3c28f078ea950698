//! Simulation and verification of a four-layer silent self-stabilizing
//! algorithm that builds a minimal weakly ST-reachable DAG: a set of arcs
//! over an undirected graph in which every sender reaches some target, every
//! target is reached by some sender, there is no directed cycle, and no arc
//! can be dropped without breaking one of the first two conditions.
//!
//! - [`graph`]: topologies, local labels, roles, instance files.
//! - [`protocol`]: the guarded actions, evaluated on a node's local view.
//! - [`sim`]: configurations, schedulers, execution with round accounting.
//! - [`verify`]: correctness predicates and a centralized reference oracle.
//! - [`experiment`]: seeded parameter sweeps with CSV output.

pub mod error;
pub mod experiment;
pub mod graph;
pub mod protocol;
pub mod sim;
pub mod verify;

pub use error::{Error, Result};
pub use graph::{Instance, Label, NodeId, RoleAssignment, Topology};
pub use protocol::{ActionId, LocalView, NodeState, Parent};
pub use sim::{Configuration, RunOptions, SchedulerKind, Trace, TraceMode};
pub use verify::{OutputDigraph, VerdictReport};

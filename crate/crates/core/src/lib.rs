//! Simulation and optimization of federated learning over a ring of ground
//! areas served by one LEO orbit, with store-carry-forward model mixing.
//!
//! * [`geometry`], [`linkmodel`]: orbit kinematics, link rates, round latency.
//! * [`flcore`]: datasets, partitioning, models, local SGD, FedAvg, metrics.
//! * [`dispersal`]: the mixing protocol engine.
//! * [`scmr`]: convergence-bound calculator and the staleness/mixing-ratio solver.
//! * [`baselines`]: ground-station, neighbour-exchange and ring-allreduce schemes.
//! * [`scheme`]: name → scheme registry used by the harness.
//! * [`harness`]: config loading, experiment runs, metrics files, reports.

// validation reads `!(x > 0.0)` so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod dispersal;
pub mod error;
pub mod flcore;
pub mod geometry;
pub mod harness;
pub mod linkmodel;
pub mod rng;
pub mod scheme;
pub mod scmr;

pub use error::{Error, Result};
pub use flcore::ModelVector;

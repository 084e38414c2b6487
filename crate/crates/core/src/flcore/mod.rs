//! Desk-scale federated-learning primitives shared by every scheme.

pub mod aggregate;
pub mod data;
pub mod federation;
pub mod gamma;
pub mod metrics;
pub mod model;
pub mod partition;
pub mod train;

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use aggregate::{fedavg, fedavg_uniform, select_clients};
pub use data::{Dataset, GaussianBlobs, Sample};
pub use federation::{average_models, train_round, AreaRunner, Federation, MetricsRecord};
pub use gamma::{estimate_gamma_noniid, minimize, GammaEstimate, SolverOptions};
pub use metrics::{accuracy, global_loss};
pub use model::{Curvature, ModelFamily, ModelRegistry, ModelSpec};
pub use partition::{partition, Partition, PartitionScheme, PartitionSpec};
pub use train::{local_train, sgd_step, BatchStream, LrSchedule};

/// Flat parameter vector; the unit of aggregation, mixing and transport.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelVector(Vec<f64>);

impl ModelVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Errors with `Numeric` if any entry is NaN or infinite.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.0.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Numeric(format!(
                "{what}: entry {i} is {}",
                self.0[i]
            ))),
        }
    }

    pub fn sq_dist(&self, other: &ModelVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

impl From<Vec<f64>> for ModelVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Deref for ModelVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ModelVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

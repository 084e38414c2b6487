//! The per-area training round every scheme is built from: sample clients,
//! run `E` local steps on each, FedAvg the results.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::aggregate::{fedavg_uniform, select_clients};
use super::data::Dataset;
use super::metrics::{accuracy, global_loss};
use super::model::ModelFamily;
use super::partition::Partition;
use super::train::{local_train, BatchStream, LrSchedule};
use super::ModelVector;
use crate::error::{invalid_config, Result};
use crate::rng::{SeedStreams, StreamRng};

/// Data, model and training hyper-parameters shared by all areas.
#[derive(Debug, Clone)]
pub struct Federation {
    pub model: Arc<dyn ModelFamily>,
    pub partition: Partition,
    pub test: Dataset,
    pub schedule: LrSchedule,
    pub local_iters: usize,
    pub batch_size: usize,
    /// `U_i`.
    pub participants_per_area: Vec<usize>,
    pub init: ModelVector,
    pub seeds: SeedStreams,
}

impl Federation {
    pub fn validate(&self) -> Result<()> {
        let m = self.partition.num_areas();
        if self.participants_per_area.len() != m {
            return Err(invalid_config(format!(
                "participants_per_area has {} entries for {m} areas",
                self.participants_per_area.len()
            )));
        }
        for (i, (&u, &n)) in self
            .participants_per_area
            .iter()
            .zip(&self.partition.clients_per_area)
            .enumerate()
        {
            if u == 0 || u > n {
                return Err(invalid_config(format!(
                    "area {i}: participants {u} must be in 1..={n}"
                )));
            }
        }
        if self.local_iters == 0 {
            return Err(invalid_config("local_iters must be >= 1"));
        }
        if self.init.dim() != self.model.dim() {
            return Err(invalid_config(format!(
                "initial model has dimension {}, model family expects {}",
                self.init.dim(),
                self.model.dim()
            )));
        }
        Ok(())
    }

    pub fn num_areas(&self) -> usize {
        self.partition.num_areas()
    }

    pub fn total_participants(&self) -> usize {
        self.participants_per_area.iter().sum()
    }

    /// Fresh per-area runners with their own selection and batching streams.
    pub fn runners(&self) -> Vec<AreaRunner> {
        (0..self.num_areas())
            .map(|i| {
                let range = self.partition.area_range(i);
                AreaRunner {
                    area: i,
                    selector: self.seeds.stream("selection", i as u64),
                    batches: range
                        .map(|j| {
                            BatchStream::new(
                                self.partition.clients[j].len(),
                                self.batch_size,
                                self.seeds.stream("batching", j as u64),
                            )
                        })
                        .collect(),
                }
            })
            .collect()
    }

    /// Global loss over all client data and accuracy on the test set.
    pub fn evaluate(&self, w: &ModelVector) -> (f64, f64) {
        let model = self.model.as_ref();
        (
            global_loss(model, w, &self.partition),
            accuracy(model, w, &self.test),
        )
    }
}

/// Mutable per-area training state: its client-selection stream and one
/// batch stream per client.
#[derive(Debug, Clone)]
pub struct AreaRunner {
    pub area: usize,
    selector: StreamRng,
    batches: Vec<BatchStream>,
}

impl AreaRunner {
    /// Global round `k` (1-based): selected clients start from `w` and run
    /// steps `(k−1)E+1 ..= kE`; returns the uniform average of their models.
    pub fn round(&mut self, fed: &Federation, w: &ModelVector, k: usize) -> Result<ModelVector> {
        let n = fed.partition.clients_per_area[self.area];
        let u = fed.participants_per_area[self.area];
        let chosen = select_clients(n, u, &mut self.selector)?;
        let first = fed.partition.area_range(self.area).start;
        let t0 = (k - 1) * fed.local_iters + 1;
        let mut locals = Vec::with_capacity(chosen.len());
        for j in chosen {
            locals.push(local_train(
                fed.model.as_ref(),
                w,
                &fed.partition.clients[first + j],
                &mut self.batches[j],
                &fed.schedule,
                t0,
                fed.local_iters,
            )?);
        }
        let refs: Vec<&ModelVector> = locals.iter().collect();
        let avg = fedavg_uniform(&refs)?;
        avg.check_finite("area aggregate")?;
        Ok(avg)
    }
}

/// Run one round in every area, in parallel across areas. Area `i` starts
/// from `models[i]`.
pub fn train_round(
    fed: &Federation,
    runners: &mut [AreaRunner],
    models: &[ModelVector],
    k: usize,
) -> Result<Vec<ModelVector>> {
    if runners.len() == 1 {
        return Ok(vec![runners[0].round(fed, &models[0], k)?]);
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = runners
            .iter_mut()
            .zip(models)
            .map(|(r, w)| s.spawn(move || r.round(fed, w, k)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("area worker panicked"))
            .collect()
    })
}

/// One row of a metrics stream; emitted after every evaluated global round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// Global round index (one sync step every `E` local steps).
    pub k: usize,
    pub t_sim_s: f64,
    pub loss_global: f64,
    pub acc_test: f64,
    pub traffic_bits: u128,
    /// `;`-separated event tags (`mix`, `handover`, `exchange`, `global_agg`).
    pub event: String,
    #[serde(skip)]
    pub area_loss: Vec<f64>,
}

/// Cross-area uniform average of area models.
pub fn average_models(models: &[ModelVector]) -> Result<ModelVector> {
    let refs: Vec<&ModelVector> = models.iter().collect();
    fedavg_uniform(&refs)
}

//! Splitting a dataset across areas and clients.
//!
//! The label-skewed schemes give every client a fixed number of labels and an
//! identical per-label quota, so sample counts are exactly equal and label
//! supports have exactly the configured size.

use std::ops::Range;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::{Dataset, Sample};
use crate::error::{invalid_config, Result};
use crate::rng::SeedStreams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionScheme {
    /// Uniformly shuffled samples dealt out to all clients.
    IidClients,
    /// Every area draws from all labels; each client holds `labels_per_cluster`
    /// labels.
    IidClusters,
    /// Each area owns `labels_per_cluster` labels; each client holds
    /// `labels_per_client` of them.
    NoniidClusters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub scheme: PartitionScheme,
    /// `N_i` for every area; its length is the number of areas.
    pub clients_per_area: Vec<usize>,
    #[serde(default = "default_labels_per_cluster")]
    pub labels_per_cluster: usize,
    #[serde(default = "default_labels_per_client")]
    pub labels_per_client: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_labels_per_cluster() -> usize {
    3
}

fn default_labels_per_client() -> usize {
    2
}

impl PartitionSpec {
    pub fn uniform(scheme: PartitionScheme, areas: usize, clients_each: usize, seed: u64) -> Self {
        Self {
            scheme,
            clients_per_area: vec![clients_each; areas],
            labels_per_cluster: default_labels_per_cluster(),
            labels_per_client: default_labels_per_client(),
            seed,
        }
    }

    pub fn num_areas(&self) -> usize {
        self.clients_per_area.len()
    }

    pub fn num_clients(&self) -> usize {
        self.clients_per_area.iter().sum()
    }

    pub fn validate(&self, num_labels: usize) -> Result<()> {
        if self.clients_per_area.is_empty() || self.clients_per_area.contains(&0) {
            return Err(invalid_config(
                "partition.clients_per_area needs at least one area with >= 1 client each",
            ));
        }
        match self.scheme {
            PartitionScheme::IidClients => {}
            PartitionScheme::IidClusters => {
                if self.labels_per_cluster == 0 || self.labels_per_cluster > num_labels {
                    return Err(invalid_config(format!(
                        "partition.labels_per_cluster = {} must be in 1..={num_labels}",
                        self.labels_per_cluster
                    )));
                }
            }
            PartitionScheme::NoniidClusters => {
                if self.labels_per_cluster == 0 || self.labels_per_cluster > num_labels {
                    return Err(invalid_config(format!(
                        "partition.labels_per_cluster = {} must be in 1..={num_labels}",
                        self.labels_per_cluster
                    )));
                }
                if self.labels_per_client == 0 || self.labels_per_client > self.labels_per_cluster
                {
                    return Err(invalid_config(format!(
                        "partition.labels_per_client = {} must be in 1..={}",
                        self.labels_per_client, self.labels_per_cluster
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Client datasets grouped by area; clients of area `i` are contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub clients: Vec<Dataset>,
    pub clients_per_area: Vec<usize>,
}

impl Partition {
    pub fn num_areas(&self) -> usize {
        self.clients_per_area.len()
    }

    pub fn area_range(&self, area: usize) -> Range<usize> {
        let start: usize = self.clients_per_area[..area].iter().sum();
        start..start + self.clients_per_area[area]
    }

    pub fn area_clients(&self, area: usize) -> &[Dataset] {
        &self.clients[self.area_range(area)]
    }
}

pub fn partition(dataset: &Dataset, spec: &PartitionSpec) -> Result<Partition> {
    dataset.validate()?;
    spec.validate(dataset.num_labels)?;
    let n = spec.num_clients();
    let mut rng = SeedStreams::new(spec.seed).stream("partition", 0);

    if n == 1 {
        return Ok(Partition {
            clients: vec![dataset.clone()],
            clients_per_area: spec.clients_per_area.clone(),
        });
    }

    let label_sets: Vec<Vec<usize>> = match spec.scheme {
        PartitionScheme::IidClients => {
            let mut idx: Vec<usize> = (0..dataset.len()).collect();
            idx.shuffle(&mut rng);
            if dataset.len() < n {
                return Err(invalid_config(format!(
                    "{} samples cannot cover {n} clients",
                    dataset.len()
                )));
            }
            let base = dataset.len() / n;
            let extra = dataset.len() % n;
            let mut clients = Vec::with_capacity(n);
            let mut at = 0;
            for j in 0..n {
                let take = base + usize::from(j < extra);
                let samples = idx[at..at + take]
                    .iter()
                    .map(|&i| dataset.samples[i].clone())
                    .collect();
                at += take;
                clients.push(Dataset {
                    samples,
                    num_labels: dataset.num_labels,
                });
            }
            return Ok(Partition {
                clients,
                clients_per_area: spec.clients_per_area.clone(),
            });
        }
        PartitionScheme::IidClusters => {
            let c = spec.labels_per_cluster;
            let mut sets = Vec::with_capacity(n);
            for &ni in &spec.clients_per_area {
                let mut perm: Vec<usize> = (0..dataset.num_labels).collect();
                perm.shuffle(&mut rng);
                for j in 0..ni {
                    sets.push(rotate_pick(&perm, j * c, c));
                }
            }
            sets
        }
        PartitionScheme::NoniidClusters => {
            let mut perm: Vec<usize> = (0..dataset.num_labels).collect();
            perm.shuffle(&mut rng);
            let lc = spec.labels_per_cluster;
            let c = spec.labels_per_client;
            let mut sets = Vec::with_capacity(n);
            for (i, &ni) in spec.clients_per_area.iter().enumerate() {
                let cluster = rotate_pick(&perm, i * lc, lc);
                for j in 0..ni {
                    sets.push(rotate_pick(&cluster, j * c, c));
                }
            }
            sets
        }
    };

    let mut pools: Vec<Vec<&Sample>> = vec![Vec::new(); dataset.num_labels];
    for s in &dataset.samples {
        pools[s.label].push(s);
    }
    for p in &mut pools {
        p.shuffle(&mut rng);
    }
    let mut holders = vec![0usize; dataset.num_labels];
    for set in &label_sets {
        for &l in set {
            holders[l] += 1;
        }
    }
    let quota = holders
        .iter()
        .enumerate()
        .filter(|(_, &h)| h > 0)
        .map(|(l, &h)| pools[l].len() / h)
        .min()
        .unwrap_or(0);
    if quota == 0 {
        return Err(invalid_config(
            "label allocation infeasible: some label has fewer samples than clients holding it",
        ));
    }
    let mut cursor = vec![0usize; dataset.num_labels];
    let clients = label_sets
        .iter()
        .map(|set| {
            let mut samples = Vec::with_capacity(set.len() * quota);
            for &l in set {
                samples.extend(
                    pools[l][cursor[l]..cursor[l] + quota]
                        .iter()
                        .map(|&s| s.clone()),
                );
                cursor[l] += quota;
            }
            samples.shuffle(&mut rng);
            Dataset {
                samples,
                num_labels: dataset.num_labels,
            }
        })
        .collect();
    Ok(Partition {
        clients,
        clients_per_area: spec.clients_per_area.clone(),
    })
}

/// `count` consecutive entries of `items` starting at `start`, wrapping.
fn rotate_pick(items: &[usize], start: usize, count: usize) -> Vec<usize> {
    (0..count).map(|r| items[(start + r) % items.len()]).collect()
}

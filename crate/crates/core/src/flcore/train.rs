//! Local SGD: step-size schedule, deterministic minibatching, and the
//! `E`-iteration local update.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::{Dataset, Sample};
use super::model::{gradient, ModelFamily};
use super::ModelVector;
use crate::error::{invalid_arg, invalid_config, Error, Result};
use crate::rng::StreamRng;

/// `η_t = β / (γ + t)` for global iteration index `t ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub beta: f64,
    pub gamma: f64,
}

impl LrSchedule {
    /// `β = 5/μ`, `γ = max{8L/μ, E} − 1`.
    pub fn strongly_convex(mu: f64, smoothness: f64, local_iters: usize) -> Result<Self> {
        if !(mu > 0.0) || !(smoothness >= mu) {
            return Err(invalid_config(format!(
                "schedule needs 0 < mu <= L, got mu = {mu}, L = {smoothness}"
            )));
        }
        if local_iters == 0 {
            return Err(invalid_config("schedule needs E >= 1"));
        }
        Ok(Self {
            beta: 5.0 / mu,
            gamma: schedule_gamma(mu, smoothness, local_iters),
        })
    }

    pub fn explicit(beta: f64, gamma: f64) -> Result<Self> {
        if !(beta > 0.0) || !(gamma > -1.0) {
            return Err(invalid_config(format!(
                "schedule needs beta > 0 and gamma > -1, got {beta}, {gamma}"
            )));
        }
        Ok(Self { beta, gamma })
    }

    pub fn eta(&self, t: usize) -> f64 {
        self.beta / (self.gamma + t as f64)
    }
}

/// `γ = max{8L/μ, E} − 1`.
pub fn schedule_gamma(mu: f64, smoothness: f64, local_iters: usize) -> f64 {
    (8.0 * smoothness / mu).max(local_iters as f64) - 1.0
}

/// Cycles through a client's samples in a freshly shuffled order each epoch.
/// A batch size at least the dataset size yields full-batch gradients.
#[derive(Debug, Clone)]
pub struct BatchStream {
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    rng: StreamRng,
}

impl BatchStream {
    pub fn new(len: usize, batch_size: usize, rng: StreamRng) -> Self {
        let mut s = Self {
            order: (0..len).collect(),
            pos: len,
            batch_size: batch_size.max(1),
            rng,
        };
        if s.batch_size >= len {
            s.pos = 0;
        }
        s
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        let n = self.order.len();
        if self.batch_size >= n {
            return self.order.clone();
        }
        let mut out = Vec::with_capacity(self.batch_size);
        while out.len() < self.batch_size {
            if self.pos == n {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            let take = (self.batch_size - out.len()).min(n - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        out
    }
}

/// `w − η · mean-gradient(batch)`.
pub fn sgd_step(
    model: &dyn ModelFamily,
    w: &ModelVector,
    batch: &[&Sample],
    eta: f64,
) -> Result<ModelVector> {
    if batch.is_empty() {
        return Err(invalid_arg("sgd_step needs a non-empty batch"));
    }
    if !(eta > 0.0) {
        return Err(invalid_arg(format!("step size must be > 0, got {eta}")));
    }
    let g = gradient(model, w, batch);
    if let Some(i) = g.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("gradient entry {i} is {}", g[i])));
    }
    Ok(w.iter().zip(&g).map(|(a, b)| a - eta * b).collect::<Vec<_>>().into())
}

/// `iters` SGD steps using `η_{t0}, …, η_{t0+iters−1}`.
pub fn local_train(
    model: &dyn ModelFamily,
    w: &ModelVector,
    data: &Dataset,
    batches: &mut BatchStream,
    schedule: &LrSchedule,
    t0: usize,
    iters: usize,
) -> Result<ModelVector> {
    if iters == 0 {
        return Err(invalid_arg("local training needs E >= 1"));
    }
    let mut w = w.clone();
    for t in t0..t0 + iters {
        let idx = batches.next_batch();
        let batch: Vec<&Sample> = idx.iter().map(|&i| &data.samples[i]).collect();
        w = sgd_step(model, &w, &batch, schedule.eta(t))?;
    }
    Ok(w)
}

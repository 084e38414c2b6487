//! Trainable model families behind one trait, looked up by name.
//!
//! All families work on a flat parameter vector. Convex families report their
//! smoothness and strong-convexity constants so the learning-rate schedule and
//! the convergence bound can be evaluated without user input.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::sync::Arc;

use rand::RngCore;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::data::{Dataset, Sample};
use super::ModelVector;
use crate::error::{invalid_config, Error, Result};

/// Smoothness `L` and strong convexity `μ` of the per-client objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Curvature {
    pub smoothness: f64,
    pub strong_convexity: f64,
}

pub trait ModelFamily: Send + Sync + Debug {
    fn name(&self) -> &'static str;

    fn dim(&self) -> usize;

    fn init(&self, rng: &mut dyn RngCore) -> ModelVector;

    /// Unregularized loss of one sample.
    fn sample_loss(&self, w: &[f64], sample: &Sample) -> f64;

    /// `out += scale · ∇ sample_loss(w)`.
    fn add_sample_grad(&self, w: &[f64], sample: &Sample, scale: f64, out: &mut [f64]);

    fn predict(&self, w: &[f64], features: &[f64]) -> usize;

    /// L2 penalty coefficient; the objective adds `l2/2 · ‖w‖²`.
    fn l2(&self) -> f64 {
        0.0
    }

    /// `Some` only for strongly convex families.
    fn curvature(&self, data: &Dataset) -> Option<Curvature>;

    fn is_convex(&self) -> bool {
        false
    }

    /// Exact minimizer of `Σ_g weight_g · objective(group_g)` when one is
    /// available in closed form.
    fn exact_minimizer(&self, _groups: &[(&[Sample], f64)]) -> Option<Vec<f64>> {
        None
    }
}

/// Mean regularized loss over `samples`.
pub fn objective(model: &dyn ModelFamily, w: &[f64], samples: &[Sample]) -> f64 {
    let data: f64 = samples.iter().map(|s| model.sample_loss(w, s)).sum::<f64>()
        / samples.len().max(1) as f64;
    data + 0.5 * model.l2() * w.iter().map(|x| x * x).sum::<f64>()
}

/// Mean regularized gradient over `samples`.
pub fn gradient(model: &dyn ModelFamily, w: &[f64], samples: &[&Sample]) -> Vec<f64> {
    let mut g = vec![0.0; w.len()];
    let scale = 1.0 / samples.len().max(1) as f64;
    for s in samples {
        model.add_sample_grad(w, s, scale, &mut g);
    }
    let l2 = model.l2();
    if l2 != 0.0 {
        for (gi, wi) in g.iter_mut().zip(w) {
            *gi += l2 * wi;
        }
    }
    g
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = i;
        }
    }
    best
}

/// Multinomial logistic regression. Parameters are stored per class as
/// `[weights.., bias]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Logistic {
    pub features: usize,
    pub classes: usize,
    pub l2: f64,
}

impl Logistic {
    fn logits(&self, w: &[f64], x: &[f64]) -> Vec<f64> {
        let stride = self.features + 1;
        (0..self.classes)
            .map(|c| {
                let row = &w[c * stride..(c + 1) * stride];
                row[..self.features]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    + row[self.features]
            })
            .collect()
    }
}

impl ModelFamily for Logistic {
    fn name(&self) -> &'static str {
        "logistic"
    }

    fn dim(&self) -> usize {
        self.classes * (self.features + 1)
    }

    fn init(&self, _rng: &mut dyn RngCore) -> ModelVector {
        ModelVector::zeros(self.dim())
    }

    fn sample_loss(&self, w: &[f64], s: &Sample) -> f64 {
        let z = self.logits(w, &s.features);
        log_sum_exp(&z) - z[s.label]
    }

    fn add_sample_grad(&self, w: &[f64], s: &Sample, scale: f64, out: &mut [f64]) {
        let mut p = self.logits(w, &s.features);
        softmax_in_place(&mut p);
        p[s.label] -= 1.0;
        let stride = self.features + 1;
        for (c, &pc) in p.iter().enumerate() {
            let row = &mut out[c * stride..(c + 1) * stride];
            let k = scale * pc;
            for (o, x) in row[..self.features].iter_mut().zip(&s.features) {
                *o += k * x;
            }
            row[self.features] += k;
        }
    }

    fn predict(&self, w: &[f64], x: &[f64]) -> usize {
        argmax(&self.logits(w, x))
    }

    fn l2(&self) -> f64 {
        self.l2
    }

    fn curvature(&self, data: &Dataset) -> Option<Curvature> {
        if self.l2 <= 0.0 {
            return None;
        }
        // softmax Jacobian has spectral norm <= 1/2; the bias adds 1 to ‖x‖²
        Some(Curvature {
            smoothness: 0.5 * (data.max_sq_norm() + 1.0) + self.l2,
            strong_convexity: self.l2,
        })
    }

    fn is_convex(&self) -> bool {
        true
    }
}

/// One hidden layer with tanh activation and a softmax output.
///
/// Layout: `W1 (hidden × features)`, `b1 (hidden)`, `W2 (classes × hidden)`,
/// `b2 (classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub features: usize,
    pub hidden: usize,
    pub classes: usize,
    pub l2: f64,
}

impl Mlp {
    fn offsets(&self) -> (usize, usize, usize) {
        let w1 = self.hidden * self.features;
        let b1 = w1 + self.hidden;
        let w2 = b1 + self.classes * self.hidden;
        (w1, b1, w2)
    }

    fn forward(&self, w: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (o_b1, o_w2, o_b2) = self.offsets();
        let h: Vec<f64> = (0..self.hidden)
            .map(|k| {
                let row = &w[k * self.features..(k + 1) * self.features];
                (row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[o_b1 + k]).tanh()
            })
            .collect();
        let z: Vec<f64> = (0..self.classes)
            .map(|c| {
                let row = &w[o_w2 + c * self.hidden..o_w2 + (c + 1) * self.hidden];
                row.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>() + w[o_b2 + c]
            })
            .collect();
        (h, z)
    }
}

impl ModelFamily for Mlp {
    fn name(&self) -> &'static str {
        "mlp"
    }

    fn dim(&self) -> usize {
        self.hidden * self.features + self.hidden + self.classes * self.hidden + self.classes
    }

    fn init(&self, rng: &mut dyn RngCore) -> ModelVector {
        let (o_b1, o_w2, o_b2) = self.offsets();
        let mut w = vec![0.0; self.dim()];
        let s1 = Normal::new(0.0, (1.0 / self.features as f64).sqrt()).unwrap();
        let s2 = Normal::new(0.0, (1.0 / self.hidden as f64).sqrt()).unwrap();
        for v in &mut w[..o_b1] {
            *v = s1.sample(rng);
        }
        for v in &mut w[o_w2..o_b2] {
            *v = s2.sample(rng);
        }
        ModelVector::new(w)
    }

    fn sample_loss(&self, w: &[f64], s: &Sample) -> f64 {
        let (_, z) = self.forward(w, &s.features);
        log_sum_exp(&z) - z[s.label]
    }

    fn add_sample_grad(&self, w: &[f64], s: &Sample, scale: f64, out: &mut [f64]) {
        let (o_b1, o_w2, o_b2) = self.offsets();
        let (h, mut p) = self.forward(w, &s.features);
        softmax_in_place(&mut p);
        p[s.label] -= 1.0;
        let mut dh = vec![0.0; self.hidden];
        for (c, &pc) in p.iter().enumerate() {
            let k = scale * pc;
            let base = o_w2 + c * self.hidden;
            for j in 0..self.hidden {
                out[base + j] += k * h[j];
                dh[j] += pc * w[base + j];
            }
            out[o_b2 + c] += k;
        }
        for j in 0..self.hidden {
            let da = scale * dh[j] * (1.0 - h[j] * h[j]);
            let row = &mut out[j * self.features..(j + 1) * self.features];
            for (o, x) in row.iter_mut().zip(&s.features) {
                *o += da * x;
            }
            out[o_b1 + j] += da;
        }
    }

    fn predict(&self, w: &[f64], x: &[f64]) -> usize {
        argmax(&self.forward(w, x).1)
    }

    fn l2(&self) -> f64 {
        self.l2
    }

    fn curvature(&self, _data: &Dataset) -> Option<Curvature> {
        None
    }
}

/// `ℓ(w; x) = a/2 · ‖w − x‖²`: each sample's features are a target point.
/// Labels are ignored and prediction always returns label 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub dim: usize,
    pub curvature: f64,
}

impl ModelFamily for Quadratic {
    fn name(&self) -> &'static str {
        "quadratic"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn init(&self, _rng: &mut dyn RngCore) -> ModelVector {
        ModelVector::zeros(self.dim)
    }

    fn sample_loss(&self, w: &[f64], s: &Sample) -> f64 {
        0.5 * self.curvature
            * w.iter()
                .zip(&s.features)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
    }

    fn add_sample_grad(&self, w: &[f64], s: &Sample, scale: f64, out: &mut [f64]) {
        let k = scale * self.curvature;
        for ((o, a), b) in out.iter_mut().zip(w).zip(&s.features) {
            *o += k * (a - b);
        }
    }

    fn predict(&self, _w: &[f64], _features: &[f64]) -> usize {
        0
    }

    fn curvature(&self, _data: &Dataset) -> Option<Curvature> {
        Some(Curvature {
            smoothness: self.curvature,
            strong_convexity: self.curvature,
        })
    }

    fn is_convex(&self) -> bool {
        true
    }

    fn exact_minimizer(&self, groups: &[(&[Sample], f64)]) -> Option<Vec<f64>> {
        let mut w = vec![0.0; self.dim];
        let mut total = 0.0;
        for (samples, weight) in groups {
            if samples.is_empty() {
                continue;
            }
            let k = weight / samples.len() as f64;
            for s in samples.iter() {
                for (o, x) in w.iter_mut().zip(&s.features) {
                    *o += k * x;
                }
            }
            total += weight;
        }
        if !(total > 0.0) {
            return None;
        }
        w.iter_mut().for_each(|v| *v /= total);
        Some(w)
    }
}

/// Model-family selection as it appears in a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default = "ModelSpec::default_family")]
    pub family: String,
    #[serde(default = "ModelSpec::default_hidden")]
    pub hidden: usize,
    #[serde(default = "ModelSpec::default_l2")]
    pub l2: f64,
    /// Curvature `a` of the quadratic family.
    #[serde(default = "ModelSpec::default_curvature")]
    pub curvature: f64,
}

impl ModelSpec {
    fn default_family() -> String {
        "logistic".into()
    }
    fn default_hidden() -> usize {
        32
    }
    fn default_l2() -> f64 {
        1e-2
    }
    fn default_curvature() -> f64 {
        1.0
    }
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            family: Self::default_family(),
            hidden: Self::default_hidden(),
            l2: Self::default_l2(),
            curvature: Self::default_curvature(),
        }
    }
}

type Builder = fn(&ModelSpec, usize, usize) -> Result<Arc<dyn ModelFamily>>;

/// Name → constructor table for model families.
pub struct ModelRegistry {
    builders: BTreeMap<&'static str, Builder>,
}

impl ModelRegistry {
    pub fn empty() -> Self {
        Self {
            builders: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("logistic", |spec, features, labels| {
            if labels < 2 {
                return Err(invalid_config("logistic model needs at least 2 labels"));
            }
            Ok(Arc::new(Logistic {
                features,
                classes: labels,
                l2: spec.l2,
            }))
        });
        r.register("mlp", |spec, features, labels| {
            if spec.hidden == 0 {
                return Err(invalid_config("model.hidden must be >= 1"));
            }
            Ok(Arc::new(Mlp {
                features,
                hidden: spec.hidden,
                classes: labels.max(2),
                l2: spec.l2,
            }))
        });
        r.register("quadratic", |spec, features, _| {
            if !(spec.curvature > 0.0) {
                return Err(invalid_config("model.curvature must be > 0"));
            }
            Ok(Arc::new(Quadratic {
                dim: features,
                curvature: spec.curvature,
            }))
        });
        r
    }

    pub fn register(&mut self, name: &'static str, builder: Builder) {
        self.builders.insert(name, builder);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.builders.keys().copied().collect()
    }

    pub fn build(
        &self,
        spec: &ModelSpec,
        features: usize,
        labels: usize,
    ) -> Result<Arc<dyn ModelFamily>> {
        let builder = self
            .builders
            .get(spec.family.as_str())
            .ok_or_else(|| Error::Unknown {
                kind: "model family",
                name: spec.family.clone(),
                known: self.names().join(", "),
            })?;
        builder(spec, features, labels)
    }
}

impl Default for ModelRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

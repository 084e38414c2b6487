//! Non-IID degree `Γ = F* − (1/M) Σ_i (1/N_i) Σ_j F_j*` for convex families.
//!
//! Minima are found with Nesterov's accelerated gradient using the family's
//! own curvature constants, or in closed form when the family provides one.

use serde::{Deserialize, Serialize};

use super::data::Sample;
use super::model::{gradient, objective, Curvature, ModelFamily};
use super::partition::Partition;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Stop once the gradient norm drops below this.
    pub grad_tol: f64,
    pub max_iters: usize,
    pub use_closed_form: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-9,
            max_iters: 200_000,
            use_closed_form: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaEstimate {
    pub gamma: f64,
    pub global_min: f64,
    pub client_mins: Vec<f64>,
    /// Largest gradient norm left at any solver exit.
    pub worst_grad_norm: f64,
}

fn weighted_objective(model: &dyn ModelFamily, w: &[f64], groups: &[(&[Sample], f64)]) -> f64 {
    groups
        .iter()
        .map(|(s, k)| k * objective(model, w, s))
        .sum()
}

fn weighted_gradient(model: &dyn ModelFamily, w: &[f64], groups: &[(&[Sample], f64)]) -> Vec<f64> {
    let mut g = vec![0.0; w.len()];
    for (samples, k) in groups {
        let refs: Vec<&Sample> = samples.iter().collect();
        for (o, v) in g.iter_mut().zip(gradient(model, w, &refs)) {
            *o += k * v;
        }
    }
    g
}

/// Minimize `Σ weight_g · objective(group_g)`; returns the minimizer and the
/// final gradient norm.
pub fn minimize(
    model: &dyn ModelFamily,
    curvature: Curvature,
    groups: &[(&[Sample], f64)],
    opts: &SolverOptions,
) -> Result<(Vec<f64>, f64)> {
    if opts.use_closed_form {
        if let Some(w) = model.exact_minimizer(groups) {
            return Ok((w, 0.0));
        }
    }
    let l = curvature.smoothness;
    let mu = curvature.strong_convexity;
    let q = (l / mu).sqrt();
    let momentum = (q - 1.0) / (q + 1.0);
    let mut x = vec![0.0; model.dim()];
    let mut y = x.clone();
    let mut norm = f64::INFINITY;
    for _ in 0..opts.max_iters {
        let g = weighted_gradient(model, &y, groups);
        norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::Estimation(format!(
                "gradient diverged (norm {norm}) with L = {l}, mu = {mu}"
            )));
        }
        if norm <= opts.grad_tol {
            return Ok((y, norm));
        }
        let next: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a - b / l).collect();
        y = next
            .iter()
            .zip(&x)
            .map(|(n, p)| n + momentum * (n - p))
            .collect();
        x = next;
    }
    Err(Error::Estimation(format!(
        "no convergence after {} iterations; gradient norm {norm:.3e} > {:.1e}",
        opts.max_iters, opts.grad_tol
    )))
}

pub fn estimate_gamma_noniid(
    model: &dyn ModelFamily,
    partition: &Partition,
    opts: &SolverOptions,
) -> Result<GammaEstimate> {
    if !model.is_convex() {
        return Err(Error::Estimation(format!(
            "model family `{}` is not convex; supply gamma in the config",
            model.name()
        )));
    }
    let all: Vec<Sample> = partition
        .clients
        .iter()
        .flat_map(|c| c.samples.iter().cloned())
        .collect();
    let pooled = super::data::Dataset {
        samples: all,
        num_labels: partition.clients.first().map_or(1, |c| c.num_labels),
    };
    let curvature = model.curvature(&pooled).ok_or_else(|| {
        Error::Estimation(format!(
            "model family `{}` reports no strong convexity (is l2 > 0?)",
            model.name()
        ))
    })?;

    let m = partition.num_areas() as f64;
    let mut global_groups = Vec::with_capacity(partition.clients.len());
    let mut avg_client_min = 0.0;
    let mut client_mins = Vec::with_capacity(partition.clients.len());
    let mut worst = 0.0f64;
    for area in 0..partition.num_areas() {
        let clients = partition.area_clients(area);
        let weight = 1.0 / (m * clients.len() as f64);
        for c in clients {
            global_groups.push((c.samples.as_slice(), weight));
            let groups = [(c.samples.as_slice(), 1.0)];
            let (w, norm) = minimize(model, curvature, &groups, opts)?;
            worst = worst.max(norm);
            let f = objective(model, &w, &c.samples);
            client_mins.push(f);
            avg_client_min += weight * f;
        }
    }
    let (w, norm) = minimize(model, curvature, &global_groups, opts)?;
    worst = worst.max(norm);
    let global_min = weighted_objective(model, &w, &global_groups);
    let raw = global_min - avg_client_min;
    if raw < -1e-8 * global_min.abs().max(1.0) {
        log::warn!("gamma estimate {raw:.3e} is negative beyond solver tolerance");
    }
    Ok(GammaEstimate {
        gamma: raw.max(0.0),
        global_min,
        client_mins,
        worst_grad_norm: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flcore::data::{Dataset, GaussianBlobs};
    use crate::flcore::model::{Logistic, Mlp, Quadratic};
    use crate::flcore::partition::{partition, PartitionScheme, PartitionSpec};
    use crate::rng::SeedStreams;

    fn point(x: f64, y: f64) -> Sample {
        Sample {
            features: vec![x, y],
            label: 0,
        }
    }

    #[test]
    fn quadratic_matches_closed_form() {
        // area 0: clients with targets {(0,0),(2,0)} and {(4,4)}; area 1: {(−2,2)}
        let p = Partition {
            clients: vec![
                Dataset::new(vec![point(0.0, 0.0), point(2.0, 0.0)], 1).unwrap(),
                Dataset::new(vec![point(4.0, 4.0)], 1).unwrap(),
                Dataset::new(vec![point(-2.0, 2.0)], 1).unwrap(),
            ],
            clients_per_area: vec![2, 1],
        };
        let a = 1.5;
        let m = Quadratic {
            dim: 2,
            curvature: a,
        };
        // client means and weights 1/4, 1/4, 1/2
        let means = [(1.0, 0.0), (4.0, 4.0), (-2.0, 2.0)];
        let wts = [0.25, 0.25, 0.5];
        let star = (
            means.iter().zip(&wts).map(|(m, w)| m.0 * w).sum::<f64>(),
            means.iter().zip(&wts).map(|(m, w)| m.1 * w).sum::<f64>(),
        );
        let closed: f64 = means
            .iter()
            .zip(&wts)
            .map(|(m, w)| w * a / 2.0 * ((m.0 - star.0).powi(2) + (m.1 - star.1).powi(2)))
            .sum();
        let exact = estimate_gamma_noniid(&m, &p, &SolverOptions::default()).unwrap();
        assert!((exact.gamma - closed).abs() < 1e-8, "{} vs {closed}", exact.gamma);
        let iterative = estimate_gamma_noniid(
            &m,
            &p,
            &SolverOptions {
                use_closed_form: false,
                ..SolverOptions::default()
            },
        )
        .unwrap();
        assert!((iterative.gamma - closed).abs() < 1e-8);
    }

    #[test]
    fn shared_dataset_gives_zero() {
        let g = GaussianBlobs {
            num_labels: 3,
            features: 2,
            center_spread: 2.0,
            noise_std: 1.0,
        };
        let mut r = SeedStreams::new(4).stream("d", 0);
        let c = g.centers(&mut r).unwrap();
        let d = g.sample(&c, 60, &mut r).unwrap();
        let p = Partition {
            clients: vec![d.clone(), d.clone(), d],
            clients_per_area: vec![2, 1],
        };
        let m = Logistic {
            features: 2,
            classes: 3,
            l2: 0.1,
        };
        let est = estimate_gamma_noniid(&m, &p, &SolverOptions::default()).unwrap();
        assert!(est.gamma < 1e-10, "{}", est.gamma);
    }

    #[test]
    fn disjoint_labels_give_positive_gamma() {
        let g = GaussianBlobs {
            num_labels: 2,
            features: 2,
            center_spread: 2.0,
            noise_std: 0.5,
        };
        let mut r = SeedStreams::new(4).stream("d", 0);
        let c = g.centers(&mut r).unwrap();
        let d = g.sample(&c, 80, &mut r).unwrap();
        let spec = PartitionSpec {
            labels_per_cluster: 1,
            labels_per_client: 1,
            ..PartitionSpec::uniform(PartitionScheme::NoniidClusters, 2, 1, 0)
        };
        let p = partition(&d, &spec).unwrap();
        let m = Logistic {
            features: 2,
            classes: 2,
            l2: 0.05,
        };
        let est = estimate_gamma_noniid(&m, &p, &SolverOptions::default()).unwrap();
        assert!(est.gamma > 1e-3, "{}", est.gamma);
    }

    #[test]
    fn non_convex_family_is_rejected() {
        let m = Mlp {
            features: 2,
            hidden: 3,
            classes: 2,
            l2: 0.0,
        };
        let p = Partition {
            clients: vec![Dataset::new(vec![point(0.0, 0.0)], 2).unwrap()],
            clients_per_area: vec![1],
        };
        assert!(matches!(
            estimate_gamma_noniid(&m, &p, &SolverOptions::default()),
            Err(Error::Estimation(_))
        ));
    }

    #[test]
    fn iteration_cap_reports_estimation_error() {
        let m = Logistic {
            features: 2,
            classes: 2,
            l2: 1e-3,
        };
        let d = Dataset::new(
            vec![
                Sample {
                    features: vec![1.0, 0.0],
                    label: 0,
                },
                Sample {
                    features: vec![-1.0, 0.5],
                    label: 1,
                },
            ],
            2,
        )
        .unwrap();
        let opts = SolverOptions {
            max_iters: 3,
            ..SolverOptions::default()
        };
        let curv = m.curvature(&d).unwrap();
        let err = minimize(&m, curv, &[(d.samples.as_slice(), 1.0)], &opts).unwrap_err();
        assert!(err.to_string().contains("no convergence"));
    }
}

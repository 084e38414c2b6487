//! Weighted averaging and uniform client sampling.

use rand::Rng;

use super::ModelVector;
use crate::error::{invalid_arg, Result};

const WEIGHT_TOL: f64 = 1e-9;

/// `Σ weightᵢ · modelᵢ`; weights must be non-negative and sum to 1.
pub fn fedavg(models: &[&ModelVector], weights: &[f64]) -> Result<ModelVector> {
    if models.is_empty() {
        return Err(invalid_arg("fedavg needs at least one model"));
    }
    if models.len() != weights.len() {
        return Err(invalid_arg(format!(
            "fedavg got {} models and {} weights",
            models.len(),
            weights.len()
        )));
    }
    let dim = models[0].dim();
    if let Some(m) = models.iter().find(|m| m.dim() != dim) {
        return Err(invalid_arg(format!(
            "fedavg dimension mismatch: {} vs {dim}",
            m.dim()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(invalid_arg("fedavg weights must be non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > WEIGHT_TOL {
        return Err(invalid_arg(format!("fedavg weights sum to {total}, not 1")));
    }
    let mut out = vec![0.0; dim];
    for (m, &w) in models.iter().zip(weights) {
        for (o, v) in out.iter_mut().zip(m.iter()) {
            *o += w * v;
        }
    }
    Ok(out.into())
}

/// Elementwise arithmetic mean.
pub fn fedavg_uniform(models: &[&ModelVector]) -> Result<ModelVector> {
    let w = vec![1.0 / models.len().max(1) as f64; models.len()];
    fedavg(models, &w)
}

/// `count` distinct indices from `0..population`, uniformly without
/// replacement, returned in ascending order.
pub fn select_clients<R: Rng + ?Sized>(
    population: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if count == 0 || count > population {
        return Err(invalid_arg(format!(
            "cannot select {count} of {population} clients"
        )));
    }
    if count == population {
        return Ok((0..population).collect());
    }
    let mut picked = rand::seq::index::sample(rng, population, count).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStreams;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn simple_averages() {
        let a: ModelVector = vec![0.0, 0.0].into();
        let b: ModelVector = vec![2.0, 2.0].into();
        assert_eq!(fedavg_uniform(&[&a, &b]).unwrap().as_slice(), &[1.0, 1.0]);
        assert_eq!(fedavg_uniform(&[&b, &b, &b]).unwrap(), b);
    }

    #[test]
    fn rejects_bad_weights_and_dims() {
        let a: ModelVector = vec![0.0, 0.0].into();
        let c: ModelVector = vec![0.0].into();
        assert!(fedavg(&[&a, &c], &[0.5, 0.5]).is_err());
        assert!(fedavg(&[&a, &a], &[0.5, 0.6]).is_err());
        assert!(fedavg(&[&a, &a], &[1.5, -0.5]).is_err());
        assert!(fedavg(&[], &[]).is_err());
    }

    #[test]
    fn five_model_mean_matches_brute_force() {
        let mut r = SeedStreams::new(3).stream("t", 0);
        let models: Vec<ModelVector> = (0..5)
            .map(|_| (0..7).map(|_| r.random_range(-10.0..10.0)).collect::<Vec<_>>().into())
            .collect();
        let refs: Vec<&ModelVector> = models.iter().collect();
        let avg = fedavg_uniform(&refs).unwrap();
        for k in 0..7 {
            let brute = models.iter().map(|m| m[k]).sum::<f64>() / 5.0;
            assert!((avg[k] - brute).abs() < 1e-12);
        }
    }

    #[test]
    fn selection_is_uniform() {
        let mut r = SeedStreams::new(11).stream("sel", 0);
        let n = 10;
        let trials = 100_000;
        let mut counts = vec![0usize; n];
        for _ in 0..trials {
            counts[select_clients(n, 1, &mut r).unwrap()[0]] += 1;
        }
        let p = 1.0 / n as f64;
        let sd = (trials as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - trials as f64 * p).abs() <= 3.0 * sd + 1.0, "{c}");
        }
    }

    #[test]
    fn selection_edges() {
        let mut r = SeedStreams::new(1).stream("sel", 0);
        assert_eq!(select_clients(4, 4, &mut r).unwrap(), vec![0, 1, 2, 3]);
        assert!(select_clients(4, 0, &mut r).is_err());
        assert!(select_clients(4, 5, &mut r).is_err());
        let a = select_clients(20, 5, &mut SeedStreams::new(2).stream("s", 1)).unwrap();
        let b = select_clients(20, 5, &mut SeedStreams::new(2).stream("s", 1)).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn fedavg_permutation_invariant(vals in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 4), 1..8), seed in any::<u64>()) {
            let models: Vec<ModelVector> = vals.into_iter().map(Into::into).collect();
            let refs: Vec<&ModelVector> = models.iter().collect();
            let mut shuffled = refs.clone();
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut SeedStreams::new(seed).stream("p", 0));
            let a = fedavg_uniform(&refs).unwrap();
            let b = fedavg_uniform(&shuffled).unwrap();
            for k in 0..4 {
                prop_assert!((a[k] - b[k]).abs() <= 1e-12 * (1.0 + a[k].abs()));
            }
        }
    }
}

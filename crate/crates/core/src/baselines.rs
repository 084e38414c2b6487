//! Reference schemes built from the same per-area FedAvg rounds as FedMeld,
//! differing only in how (and how often) area models meet:
//!
//! * `hfl`: global average through ground stations every `K + δ` rounds;
//! * `pfl`: neighbour averaging over inter-satellite links;
//! * `ring`: ring allreduce over inter-satellite links;
//! * `local`: areas never meet.
//!
//! Also the per-round traffic and link-count accounting used to compare them.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Error, Result};
use crate::flcore::federation::{average_models, train_round};
use crate::flcore::{fedavg_uniform, ModelVector};
use crate::scheme::{Recorder, RunOutput, Scheme, SimContext};

/// Relative cost of one user-to-satellite, satellite-to-ground and
/// inter-satellite link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkWeights {
    pub u2s: u64,
    pub s2g: u64,
    pub isl: u64,
}

impl Default for LinkWeights {
    fn default() -> Self {
        Self {
            u2s: 1,
            s2g: 1,
            isl: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub scheme: String,
    /// Bits moved in one global round.
    pub traffic_bits: u128,
    /// Weighted links per round when every needed ISL exists.
    pub link_count_min: u64,
    /// Weighted links per round when no two serving satellites see each
    /// other and everything goes through the ground.
    pub link_count_max: u64,
    pub rounds: u64,
    pub cumulative_traffic_bits: u128,
    pub cumulative_links_min: u64,
    pub cumulative_links_max: u64,
}

impl CostReport {
    pub fn cumulative(mut self, rounds: u64) -> Self {
        self.rounds = rounds;
        self.cumulative_traffic_bits = self.traffic_bits * rounds as u128;
        self.cumulative_links_min = self.link_count_min * rounds;
        self.cumulative_links_max = self.link_count_max * rounds;
        self
    }
}

pub const COST_SCHEMES: [&str; 5] = ["fedmeld", "hfl", "pfl", "ring", "local"];

/// Per-round traffic and link counts for `u` participating clients in `m`
/// areas with `q`-bit models.
pub fn comm_cost(scheme: &str, u: usize, m: usize, q: u64, w: &LinkWeights) -> Result<CostReport> {
    if m == 0 {
        return Err(invalid_arg("comm_cost needs at least one area"));
    }
    let (u, m, q) = (u as u64, m as u64, q as u128);
    let users = u * w.u2s;
    let (traffic_units, min, max) = match scheme {
        "fedmeld" | "local" => (2 * u, 2 * users, 2 * users),
        "hfl" => {
            let l = 2 * (users + m * w.s2g);
            (2 * (u + m), l, l)
        }
        "pfl" => (
            2 * (u + 2 * m),
            2 * (users + 2 * m * w.isl),
            2 * (users + 4 * m * w.s2g),
        ),
        "ring" => (
            2 * (u + m - 1),
            2 * (users + m * (m - 1) * w.isl),
            2 * (users + 2 * m * (m - 1) * w.s2g),
        ),
        other => {
            return Err(Error::Unknown {
                kind: "cost scheme",
                name: other.to_string(),
                known: COST_SCHEMES.join(", "),
            })
        }
    };
    Ok(CostReport {
        scheme: scheme.to_string(),
        traffic_bits: traffic_units as u128 * q,
        link_count_min: min,
        link_count_max: max,
        rounds: 0,
        cumulative_traffic_bits: 0,
        cumulative_links_min: 0,
        cumulative_links_max: 0,
    })
}

fn check_same_dim(models: &[ModelVector]) -> Result<usize> {
    let first = models
        .first()
        .ok_or_else(|| invalid_arg("collective needs at least one model"))?;
    let d = first.dim();
    if models.iter().any(|m| m.dim() != d) {
        return Err(invalid_arg("collective inputs differ in dimension"));
    }
    Ok(d)
}

/// Chunked ring allreduce: a reduce-scatter pass followed by an allgather
/// pass, `M − 1` neighbour hops each, leaving every node with the mean.
///
/// `chunks` must be a multiple of `M`; the vector is zero-padded to a
/// multiple of `chunks` and the padding is dropped on output.
pub fn ring_allreduce_exchange(models: &[ModelVector], chunks: usize) -> Result<Vec<ModelVector>> {
    let d = check_same_dim(models)?;
    let m = models.len();
    if m == 1 {
        return Ok(models.to_vec());
    }
    if chunks == 0 || !chunks.is_multiple_of(m) {
        return Err(invalid_arg(format!(
            "ring allreduce needs a chunk count divisible by {m}, got {chunks}"
        )));
    }
    let chunk_len = d.div_ceil(chunks).max(1);
    let seg = chunk_len * (chunks / m);
    let padded = seg * m;
    let mut buf: Vec<Vec<f64>> = models
        .iter()
        .map(|w| {
            let mut v = w.as_slice().to_vec();
            v.resize(padded, 0.0);
            v
        })
        .collect();
    let range = |s: usize| s * seg..(s + 1) * seg;

    for p in 0..m - 1 {
        let sends: Vec<(usize, usize, Vec<f64>)> = (0..m)
            .map(|i| {
                let s = (i + m - p % m) % m;
                ((i + 1) % m, s, buf[i][range(s)].to_vec())
            })
            .collect();
        for (dst, s, data) in sends {
            for (o, v) in buf[dst][range(s)].iter_mut().zip(data) {
                *o += v;
            }
        }
    }
    for p in 0..m - 1 {
        let sends: Vec<(usize, usize, Vec<f64>)> = (0..m)
            .map(|i| {
                let s = (i + 1 + m - p % m) % m;
                ((i + 1) % m, s, buf[i][range(s)].to_vec())
            })
            .collect();
        for (dst, s, data) in sends {
            buf[dst][range(s)].copy_from_slice(&data);
        }
    }
    let inv = m as f64;
    Ok(buf
        .into_iter()
        .map(|mut v| {
            v.truncate(d);
            v.iter_mut().for_each(|x| *x /= inv);
            v.into()
        })
        .collect())
}

/// Each area averages with its ring neighbours: self and both neighbours
/// uniformly for `M ≥ 3`, a pairwise average for `M = 2`, nothing for one
/// area.
pub fn pfl_exchange(models: &[ModelVector]) -> Result<Vec<ModelVector>> {
    check_same_dim(models)?;
    let m = models.len();
    match m {
        1 => Ok(models.to_vec()),
        2 => {
            let avg = fedavg_uniform(&[&models[0], &models[1]])?;
            Ok(vec![avg.clone(), avg])
        }
        _ => (0..m)
            .map(|i| fedavg_uniform(&[&models[(i + m - 1) % m], &models[i], &models[(i + 1) % m]]))
            .collect(),
    }
}

/// Ground-station global aggregation: every area receives the mean.
pub fn hfl_aggregate(models: &[ModelVector]) -> Result<Vec<ModelVector>> {
    check_same_dim(models)?;
    if models.len() == 1 {
        return Ok(models.to_vec());
    }
    let avg = average_models(models)?;
    Ok(vec![avg; models.len()])
}

/// Per-area FedAvg rounds with an exchange every `K + δ` rounds that costs
/// `extra_s` of simulated time.
fn run_periodic(
    ctx: &SimContext,
    scheme: &dyn Scheme,
    extra_s: f64,
    event: Option<&'static str>,
    exchange: &dyn Fn(&[ModelVector]) -> Result<Vec<ModelVector>>,
) -> Result<RunOutput> {
    ctx.validate()?;
    let fed = ctx.fed;
    let m = fed.num_areas();
    let cost = scheme.cost(
        fed.total_participants(),
        m,
        ctx.options.model_bits,
        &ctx.options.link_weights,
    );
    let period = ctx.period_rounds();
    let mut models = vec![fed.init.clone(); m];
    let mut runners = fed.runners();
    let mut rec = Recorder::new(fed, &ctx.options, &cost, &models)?;
    let mut t = 0.0;
    for k in 1..=ctx.total_rounds() {
        let meet = event.is_some() && k % period == 0;
        let t_end = t + ctx.timing.round_latency_s + if meet { extra_s } else { 0.0 };
        if !rec.fits(t_end) {
            break;
        }
        let v = train_round(fed, &mut runners, &models, k)?;
        models = if meet { exchange(&v)? } else { v };
        let events: &[&'static str] = match event {
            Some(e) if meet => &[e],
            _ => &[],
        };
        rec.complete(k, t_end, &models, events)?;
        t = t_end;
    }
    let (records, rounds_completed) = rec.finish(&models)?;
    let final_model = average_models(&models)?;
    final_model.check_finite("final model")?;
    Ok(RunOutput {
        scheme: scheme.name().to_string(),
        records,
        area_models: models,
        final_model,
        rounds_completed,
        cost: cost.cumulative(rounds_completed as u64),
        trace: None,
    })
}

/// Areas train independently; the reference for FedMeld with `α = 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LocalOnly;

impl Scheme for LocalOnly {
    fn name(&self) -> &str {
        "local"
    }

    fn cost(&self, u: usize, m: usize, q: u64, w: &LinkWeights) -> CostReport {
        comm_cost("local", u, m, q, w).expect("builtin scheme")
    }

    fn run(&self, ctx: &SimContext) -> Result<RunOutput> {
        run_periodic(ctx, self, 0.0, None, &|v| Ok(v.to_vec()))
    }
}

/// Hierarchical FL through ground stations.
#[derive(Debug, Clone, PartialEq)]
pub struct Hfl {
    /// Station angles along the ground track, radians.
    pub ground_stations: Vec<f64>,
}

impl Hfl {
    /// Stall of one global aggregation: the slowest serving satellite's
    /// travel to its next station pass, plus the slowest return from a
    /// station pass back over an area. Synchronous, so the maxima add.
    pub fn contact_delay(&self, ctx: &SimContext) -> Result<f64> {
        let Some(geo) = &ctx.timing.geometry else {
            return Ok(0.0);
        };
        if self.ground_stations.is_empty() {
            return Err(invalid_arg("hfl needs at least one ground station"));
        }
        let mut up = 0.0f64;
        let mut down = 0.0f64;
        for &a in &geo.area_angles {
            let mut best_up = f64::INFINITY;
            let mut best_down = f64::INFINITY;
            for &s in &self.ground_stations {
                best_up = best_up.min(geo.travel_time(a, s)?);
                best_down = best_down.min(geo.travel_time(s, a)?);
            }
            up = up.max(best_up);
            down = down.max(best_down);
        }
        Ok(up + down)
    }
}

impl Scheme for Hfl {
    fn name(&self) -> &str {
        "hfl"
    }

    fn cost(&self, u: usize, m: usize, q: u64, w: &LinkWeights) -> CostReport {
        comm_cost("hfl", u, m, q, w).expect("builtin scheme")
    }

    fn run(&self, ctx: &SimContext) -> Result<RunOutput> {
        let delay = self.contact_delay(ctx)?;
        run_periodic(ctx, self, delay, Some("global_agg"), &hfl_aggregate)
    }
}

/// Parallel FL with neighbour exchange over inter-satellite links.
#[derive(Debug, Clone, Copy, Default)]
pub struct Pfl;

impl Scheme for Pfl {
    fn name(&self) -> &str {
        "pfl"
    }

    fn cost(&self, u: usize, m: usize, q: u64, w: &LinkWeights) -> CostReport {
        comm_cost("pfl", u, m, q, w).expect("builtin scheme")
    }

    fn run(&self, ctx: &SimContext) -> Result<RunOutput> {
        // both neighbours are served in parallel on separate terminals
        let extra = ctx.options.model_bits as f64 / ctx.timing.isl_rate_bps;
        run_periodic(ctx, self, extra, Some("exchange"), &pfl_exchange)
    }
}

/// Ring allreduce over inter-satellite links.
#[derive(Debug, Clone, Copy, Default)]
pub struct RingAllreduce;

impl RingAllreduce {
    /// `2(M − 1)` hops of `q/M` bits.
    pub fn exchange_time(m: usize, q: u64, isl_rate_bps: f64) -> f64 {
        if m < 2 {
            return 0.0;
        }
        2.0 * (m - 1) as f64 * (q as f64 / m as f64) / isl_rate_bps
    }
}

impl Scheme for RingAllreduce {
    fn name(&self) -> &str {
        "ring"
    }

    fn cost(&self, u: usize, m: usize, q: u64, w: &LinkWeights) -> CostReport {
        comm_cost("ring", u, m, q, w).expect("builtin scheme")
    }

    fn run(&self, ctx: &SimContext) -> Result<RunOutput> {
        let m = ctx.fed.num_areas();
        let extra = Self::exchange_time(m, ctx.options.model_bits, ctx.timing.isl_rate_bps);
        run_periodic(ctx, self, extra, Some("exchange"), &|v| {
            ring_allreduce_exchange(v, m)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispersal::run_fedmeld;
    use crate::flcore::federation::tests::toy_federation;
    use crate::geometry::ConstellationGeometry;
    use crate::rng::SeedStreams;
    use crate::scheme::{RunOptions, Timing};
    use proptest::prelude::*;
    use rand::Rng;

    fn random_models(m: usize, d: usize, seed: u64) -> Vec<ModelVector> {
        let mut r = SeedStreams::new(seed).stream("models", 0);
        (0..m)
            .map(|_| {
                (0..d)
                    .map(|_| r.random_range(-5.0..5.0))
                    .collect::<Vec<f64>>()
                    .into()
            })
            .collect()
    }

    #[test]
    fn traffic_examples() {
        let w = LinkWeights::default();
        assert_eq!(comm_cost("fedmeld", 32, 8, 1_000_000, &w).unwrap().traffic_bits, 64_000_000);
        assert_eq!(comm_cost("hfl", 32, 8, 1_000_000, &w).unwrap().traffic_bits, 80_000_000);
        assert_eq!(comm_cost("pfl", 32, 8, 1_000_000, &w).unwrap().traffic_bits, 96_000_000);
        assert_eq!(comm_cost("ring", 32, 8, 1_000_000, &w).unwrap().traffic_bits, 78_000_000);
        for s in COST_SCHEMES {
            assert_eq!(comm_cost(s, 32, 8, 0, &w).unwrap().traffic_bits, 0);
        }
        assert!(comm_cost("gossip", 1, 1, 1, &w).is_err());
    }

    #[test]
    fn link_counts() {
        let w = LinkWeights {
            u2s: 2,
            s2g: 3,
            isl: 5,
        };
        let (u, m) = (10, 4);
        let hfl = comm_cost("hfl", u, m, 1, &w).unwrap();
        assert_eq!((hfl.link_count_min, hfl.link_count_max), (2 * (20 + 12), 2 * (20 + 12)));
        let pfl = comm_cost("pfl", u, m, 1, &w).unwrap();
        assert_eq!((pfl.link_count_min, pfl.link_count_max), (2 * (20 + 40), 2 * (20 + 48)));
        let ring = comm_cost("ring", u, m, 1, &w).unwrap();
        assert_eq!((ring.link_count_min, ring.link_count_max), (2 * (20 + 60), 2 * (20 + 72)));
        let ours = comm_cost("fedmeld", u, m, 1, &w).unwrap().cumulative(7);
        assert_eq!(ours.link_count_min, 40);
        assert_eq!(ours.cumulative_links_max, 280);
        assert_eq!(ours.cumulative_traffic_bits, 140);
    }

    #[test]
    fn ring_allreduce_examples() {
        let same = vec![ModelVector::from(vec![1.5, -2.0, 3.0]); 4];
        assert_eq!(ring_allreduce_exchange(&same, 4).unwrap(), same);
        let three = random_models(3, 7, 1);
        let out = ring_allreduce_exchange(&three, 3).unwrap();
        let mean = average_models(&three).unwrap();
        for o in &out {
            for k in 0..7 {
                assert!((o[k] - mean[k]).abs() < 1e-12);
            }
        }
        let two = random_models(2, 5, 2);
        let r = ring_allreduce_exchange(&two, 4).unwrap();
        let p = pfl_exchange(&two).unwrap();
        for k in 0..5 {
            assert!((r[0][k] - p[0][k]).abs() < 1e-15);
        }
        assert!(ring_allreduce_exchange(&three, 4).is_err());
    }

    #[test]
    fn pfl_examples() {
        let four: Vec<ModelVector> = [0.0, 4.0, 8.0, 12.0].iter().map(|&v| vec![v].into()).collect();
        let out = pfl_exchange(&four).unwrap();
        let expect = [(12.0 + 0.0 + 4.0) / 3.0, 4.0, 8.0, (8.0 + 12.0 + 0.0) / 3.0];
        for (o, e) in out.iter().zip(expect) {
            assert!((o[0] - e).abs() < 1e-12);
        }
        let two = random_models(2, 3, 4);
        let p = pfl_exchange(&two).unwrap();
        assert_eq!(p[0], p[1]);
        let one = random_models(1, 3, 4);
        assert_eq!(pfl_exchange(&one).unwrap(), one);
    }

    #[test]
    fn hfl_mean_matches_brute_force() {
        let fed = toy_federation(2, 2, 2, 1);
        let timing = Timing::uniform(1.0, 2, 1);
        let ctx = SimContext {
            fed: &fed,
            timing: &timing,
            rounds_per_serve: 1,
            delta: 1,
            alpha: 0.0,
            total_steps: 8,
            options: RunOptions::default(),
        };
        let out = Hfl {
            ground_stations: vec![0.0],
        }
        .run(&ctx)
        .unwrap();
        // last round (4) is an aggregation round
        assert_eq!(out.area_models[0], out.area_models[1]);
        let models = random_models(2, 3, 9);
        let agg = hfl_aggregate(&models).unwrap();
        for k in 0..3 {
            assert!((agg[0][k] - (models[0][k] + models[1][k]) / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn hfl_contact_delay_from_geometry() {
        let fed = toy_federation(4, 1, 1, 1);
        let geo = ConstellationGeometry::evenly_spaced(550e3, 66, 4);
        let period = geo.orbital_period().unwrap();
        let mut timing = Timing::uniform(1.0, 4, 1);
        timing.geometry = Some(geo);
        let ctx = SimContext {
            fed: &fed,
            timing: &timing,
            rounds_per_serve: 1,
            delta: 1,
            alpha: 0.0,
            total_steps: 4,
            options: RunOptions::default(),
        };
        let h = Hfl {
            ground_stations: vec![0.0, std::f64::consts::PI],
        };
        // areas at 0, π/2, π, 3π/2: worst wait is a quarter orbit each way
        let d = h.contact_delay(&ctx).unwrap();
        assert!((d - period / 2.0).abs() < 1e-9 * period);
    }

    #[test]
    fn degenerate_runs_coincide() {
        let fed = toy_federation(1, 4, 3, 2);
        let timing = Timing::uniform(1.0, 1, 2);
        let ctx = SimContext {
            fed: &fed,
            timing: &timing,
            rounds_per_serve: 2,
            delta: 2,
            alpha: 0.0,
            total_steps: 24,
            options: RunOptions::default(),
        };
        let base = LocalOnly.run(&ctx).unwrap();
        let runs = [
            run_fedmeld(&ctx).unwrap(),
            Hfl {
                ground_stations: vec![0.0],
            }
            .run(&ctx)
            .unwrap(),
            Pfl.run(&ctx).unwrap(),
            RingAllreduce.run(&ctx).unwrap(),
        ];
        for r in runs {
            assert_eq!(r.area_models, base.area_models, "{}", r.scheme);
            let a: Vec<f64> = r.records.iter().map(|x| x.loss_global).collect();
            let b: Vec<f64> = base.records.iter().map(|x| x.loss_global).collect();
            assert_eq!(a, b, "{}", r.scheme);
        }
    }

    #[test]
    fn cumulative_traffic_matches_records() {
        let fed = toy_federation(3, 2, 2, 3);
        let timing = Timing::uniform(1.0, 3, 1);
        let ctx = SimContext {
            fed: &fed,
            timing: &timing,
            rounds_per_serve: 2,
            delta: 1,
            alpha: 0.2,
            total_steps: 18,
            options: RunOptions {
                model_bits: 1000,
                ..RunOptions::default()
            },
        };
        for out in [Pfl.run(&ctx).unwrap(), RingAllreduce.run(&ctx).unwrap()] {
            assert_eq!(out.records.last().unwrap().traffic_bits, out.cost.cumulative_traffic_bits);
            assert!(out.records.windows(2).all(|w| w[1].traffic_bits >= w[0].traffic_bits));
            assert!(out.records.windows(2).all(|w| w[1].t_sim_s > w[0].t_sim_s));
        }
    }

    #[test]
    fn time_budget_stops_early() {
        let fed = toy_federation(2, 2, 2, 3);
        let timing = Timing::uniform(1.0, 2, 1);
        let ctx = SimContext {
            fed: &fed,
            timing: &timing,
            rounds_per_serve: 1,
            delta: 1,
            alpha: 0.2,
            total_steps: 40,
            options: RunOptions {
                time_budget_s: Some(5.5),
                ..RunOptions::default()
            },
        };
        let out = LocalOnly.run(&ctx).unwrap();
        assert_eq!(out.rounds_completed, 5);
        assert_eq!(out.records.last().unwrap().t_sim_s, 5.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn ring_matches_mean(m in 2usize..=16, d in 1usize..40, mult in 1usize..3, seed in any::<u64>()) {
            let models = random_models(m, d, seed);
            let out = ring_allreduce_exchange(&models, m * mult).unwrap();
            let mean = average_models(&models).unwrap();
            for o in &out {
                prop_assert_eq!(o, &out[0]);
                for k in 0..d {
                    prop_assert!((o[k] - mean[k]).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn traffic_ordering(u in 1usize..500, m in 2usize..64, q in 1u64..1_000_000_000) {
            let w = LinkWeights::default();
            let t = |s| comm_cost(s, u, m, q, &w).unwrap().traffic_bits;
            prop_assert!(t("fedmeld") < t("ring"));
            prop_assert!(t("ring") < t("hfl"));
            prop_assert!(t("hfl") < t("pfl"));
            prop_assert_eq!(t("ring"), 2 * (u as u128 + m as u128 - 1) * q as u128);
        }
    }
}

//! The FedMeld protocol engine.
//!
//! Each area runs FedAvg rounds under whichever satellite is overhead. A mix
//! cycle is `K` rounds served by the store-carry-forward (SCF) satellite,
//! `δ − 1` rounds served by other satellites, and one mixing round in which
//! the SCF satellite arriving from area `i − 1` blends the model it carried
//! (now `δE` steps old) into the fresh aggregate:
//!
//! `w̄_{t,i} = (1 − α A_t) v̄_{t,i} + α A_t w̄_{t−δE, i−1}`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::baselines::{comm_cost, CostReport, LinkWeights};
use crate::error::{invalid_arg, invalid_config, Error, Result};
use crate::flcore::federation::{average_models, train_round};
use crate::flcore::ModelVector;
use crate::scheme::{DispersalTrace, Recorder, RunOutput, Scheme, SimContext, Timing};

/// Sync steps and mixing flags of a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixSchedule {
    pub local_iters: usize,
    pub rounds_per_serve: usize,
    pub delta: usize,
    pub total_steps: usize,
    pub num_areas: usize,
    /// `(K + δ)E`.
    pub cycle_len_steps: usize,
    /// `𝓘_E = {E, 2E, …}` up to `R`.
    pub sync_steps: Vec<usize>,
    /// `A_t` for each entry of `sync_steps`.
    pub mix_flags: Vec<bool>,
    /// Per area, the sync steps at which an SCF satellite mixes. Every area
    /// mixes at the same steps.
    pub scf_assignments: Vec<Vec<usize>>,
}

impl MixSchedule {
    pub fn rounds(&self) -> usize {
        self.sync_steps.len()
    }

    pub fn period_rounds(&self) -> usize {
        self.rounds_per_serve + self.delta
    }

    pub fn is_sync(&self, t: usize) -> bool {
        t > 0 && t <= self.total_steps && t.is_multiple_of(self.local_iters)
    }

    /// `A_t`; always false off the sync grid.
    pub fn a_t(&self, t: usize) -> bool {
        self.is_sync(t) && self.mix_flags[t / self.local_iters - 1]
    }

    /// 1-based position of global round `k` inside its cycle.
    pub fn position(&self, k: usize) -> usize {
        (k - 1) % self.period_rounds() + 1
    }

    /// The SCF satellite leaves at the end of the cycle's `K`-th round.
    pub fn is_handover(&self, k: usize) -> bool {
        self.position(k) == self.rounds_per_serve
    }

    pub fn mix_steps(&self) -> Vec<usize> {
        self.sync_steps
            .iter()
            .zip(&self.mix_flags)
            .filter(|(_, &f)| f)
            .map(|(&t, _)| t)
            .collect()
    }
}

pub fn build_schedule(e: usize, k: usize, delta: usize, r: usize, m: usize) -> Result<MixSchedule> {
    if e == 0 || k == 0 || delta == 0 || m == 0 {
        return Err(invalid_config(format!(
            "schedule needs E, K, delta, M >= 1 (got E={e}, K={k}, delta={delta}, M={m})"
        )));
    }
    let cycle = (k + delta) * e;
    if r < cycle {
        return Err(invalid_config(format!(
            "R = {r} steps does not cover one mix cycle of (K+delta)E = {cycle} steps"
        )));
    }
    let rounds = r / e;
    let sync_steps: Vec<usize> = (1..=rounds).map(|j| j * e).collect();
    let mix_flags: Vec<bool> = (1..=rounds).map(|j| j % (k + delta) == 0).collect();
    let mixes: Vec<usize> = sync_steps
        .iter()
        .zip(&mix_flags)
        .filter(|(_, &f)| f)
        .map(|(&t, _)| t)
        .collect();
    Ok(MixSchedule {
        local_iters: e,
        rounds_per_serve: k,
        delta,
        total_steps: r,
        num_areas: m,
        cycle_len_steps: cycle,
        sync_steps,
        mix_flags,
        scf_assignments: vec![mixes; m],
    })
}

/// `(1 − α a_t) v̄ + α a_t w_hist`.
pub fn mix_models(
    v_bar: &ModelVector,
    w_hist_prev: &ModelVector,
    alpha: f64,
    a_t: bool,
) -> Result<ModelVector> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(invalid_arg(format!("mixing ratio must be in [0, 1), got {alpha}")));
    }
    if v_bar.dim() != w_hist_prev.dim() {
        return Err(invalid_arg(format!(
            "mixing operands differ in dimension: {} vs {}",
            v_bar.dim(),
            w_hist_prev.dim()
        )));
    }
    if !a_t || alpha == 0.0 {
        return Ok(v_bar.clone());
    }
    Ok(v_bar
        .iter()
        .zip(w_hist_prev.iter())
        .map(|(v, h)| (1.0 - alpha) * v + alpha * h)
        .collect::<Vec<_>>()
        .into())
}

/// One area's aggregate and the recent aggregates the SCF satellite may
/// carry to the next area.
#[derive(Debug, Clone)]
pub struct AreaState {
    pub area: usize,
    pub aggregate: ModelVector,
    history: VecDeque<(usize, ModelVector)>,
}

impl AreaState {
    pub fn new(area: usize, init: ModelVector) -> Self {
        Self {
            area,
            history: VecDeque::from([(0, init.clone())]),
            aggregate: init,
        }
    }

    /// Store the post-round aggregate at step `t`, keeping `depth` steps.
    pub fn record(&mut self, t: usize, model: ModelVector, depth: usize) {
        self.history.push_back((t, model.clone()));
        self.aggregate = model;
        while let Some(&(s, _)) = self.history.front() {
            if s + depth < t {
                self.history.pop_front();
            } else {
                break;
            }
        }
    }

    /// The aggregate stamped exactly `step`, if still held.
    pub fn at(&self, step: usize) -> Option<(usize, &ModelVector)> {
        self.history
            .iter()
            .find(|(s, _)| *s == step)
            .map(|(s, m)| (*s, m))
    }

    pub fn oldest_step(&self) -> Option<usize> {
        self.history.front().map(|(s, _)| *s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixEvent {
    pub step: usize,
    pub area: usize,
    pub source_area: usize,
    /// Step stamp of the carried aggregate.
    pub operand_step: usize,
    pub alpha: f64,
}

/// Idle plus `δ` round latencies must equal the flight into the area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClockCheck {
    pub step: usize,
    pub area: usize,
    pub idle_s: f64,
    pub rounds_s: f64,
    pub fly_s: f64,
}

impl ClockCheck {
    pub fn residual(&self) -> f64 {
        self.idle_s + self.rounds_s - self.fly_s
    }
}

/// Simulated clock of the protocol. One cycle lasts `K` rounds plus the
/// longest flight; areas with shorter flights wait at the cycle barrier.
#[derive(Debug, Clone, PartialEq)]
pub struct FedMeldClock {
    pub round_s: f64,
    pub rounds_per_serve: usize,
    pub delta: usize,
    pub fly_s: Vec<f64>,
    pub idle_s: Vec<f64>,
    pub cycle_s: f64,
}

impl FedMeldClock {
    pub fn new(timing: &Timing, rounds_per_serve: usize, delta: usize) -> Result<Self> {
        let t = timing.round_latency_s;
        let busy = delta as f64 * t;
        let mut idle_s = Vec::with_capacity(timing.fly_into_s.len());
        for (i, &fly) in timing.fly_into_s.iter().enumerate() {
            let idle = fly - busy;
            if idle < -1e-9 * fly.max(1.0) {
                return Err(Error::InfeasibleSchedule(format!(
                    "area {i}: flight of {fly:.6} s cannot fit delta = {delta} rounds of {t:.6} s ({busy:.6} s)"
                )));
            }
            idle_s.push(idle.max(0.0));
        }
        Ok(Self {
            round_s: t,
            rounds_per_serve,
            delta,
            fly_s: timing.fly_into_s.clone(),
            idle_s,
            cycle_s: rounds_per_serve as f64 * t + timing.max_fly(),
        })
    }

    /// Simulated time at the end of global round `k`.
    pub fn round_end(&self, k: usize) -> f64 {
        let period = self.rounds_per_serve + self.delta;
        let c = (k - 1) / period;
        let p = (k - 1) % period + 1;
        let start = c as f64 * self.cycle_s;
        if p < period {
            start + p as f64 * self.round_s
        } else {
            start + self.cycle_s
        }
    }

    fn check(&self, step: usize, area: usize) -> ClockCheck {
        ClockCheck {
            step,
            area,
            idle_s: self.idle_s[area],
            rounds_s: self.delta as f64 * self.round_s,
            fly_s: self.fly_s[area],
        }
    }
}

pub fn run_fedmeld(ctx: &SimContext) -> Result<RunOutput> {
    ctx.validate()?;
    let fed = ctx.fed;
    let m = fed.num_areas();
    let e = fed.local_iters;
    let schedule = build_schedule(e, ctx.rounds_per_serve, ctx.delta, ctx.total_steps, m)?;
    let clock = FedMeldClock::new(ctx.timing, ctx.rounds_per_serve, ctx.delta)?;
    let cost = comm_cost(
        "fedmeld",
        fed.total_participants(),
        m,
        ctx.options.model_bits,
        &ctx.options.link_weights,
    )?;
    let depth = ctx.delta * e;

    let mut areas: Vec<AreaState> = (0..m).map(|i| AreaState::new(i, fed.init.clone())).collect();
    let mut models = vec![fed.init.clone(); m];
    let mut runners = fed.runners();
    let mut rec = Recorder::new(fed, &ctx.options, &cost, &models)?;
    let mut trace = DispersalTrace {
        idle_s: clock.idle_s.clone(),
        ..DispersalTrace::default()
    };

    for k in 1..=schedule.rounds() {
        let t_end = clock.round_end(k);
        if !rec.fits(t_end) {
            break;
        }
        let v = train_round(fed, &mut runners, &models, k)?;
        let t = k * e;
        let mut events = Vec::new();
        if schedule.is_handover(k) {
            events.push("handover");
        }
        if schedule.a_t(t) {
            let operand_step = t - depth;
            let mut mixed = Vec::with_capacity(m);
            for (i, local) in v.iter().enumerate() {
                let src = (i + m - 1) % m;
                let (stamp, carried) = areas[src].at(operand_step).ok_or_else(|| {
                    Error::InfeasibleSchedule(format!(
                        "area {src} holds no aggregate for step {operand_step}"
                    ))
                })?;
                mixed.push(mix_models(local, carried, ctx.alpha, true)?);
                trace.mix_log.push(MixEvent {
                    step: t,
                    area: i,
                    source_area: src,
                    operand_step: stamp,
                    alpha: ctx.alpha,
                });
                trace.clock_checks.push(clock.check(t, i));
            }
            models = mixed;
            events.push("mix");
        } else {
            models = v;
        }
        for (a, w) in areas.iter_mut().zip(&models) {
            a.record(t, w.clone(), depth);
        }
        rec.complete(k, t_end, &models, &events)?;
    }

    let (records, rounds_completed) = rec.finish(&models)?;
    let final_model = average_models(&models)?;
    final_model.check_finite("final model")?;
    Ok(RunOutput {
        scheme: "fedmeld".into(),
        records,
        area_models: models,
        final_model,
        rounds_completed,
        cost: cost.cumulative(rounds_completed as u64),
        trace: Some(trace),
    })
}

/// Row `i` gives the weights of every area's initial aggregate in area `i`'s
/// aggregate after `steps` steps, with training switched off.
pub fn influence_matrix(schedule: &MixSchedule, alpha: f64, steps: usize) -> Result<Vec<Vec<f64>>> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(invalid_arg(format!("mixing ratio must be in [0, 1), got {alpha}")));
    }
    let m = schedule.num_areas;
    let identity: Vec<Vec<f64>> = (0..m)
        .map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    // snapshots after each of the last δ + 1 rounds; the back is round k − 1
    let mut past: VecDeque<Vec<Vec<f64>>> = VecDeque::from([identity.clone()]);
    let mut cur = identity;
    let rounds = (steps / schedule.local_iters).min(schedule.rounds());
    for k in 1..=rounds {
        if schedule.a_t(k * schedule.local_iters) {
            let carried = &past[past.len() - schedule.delta];
            cur = (0..m)
                .map(|i| {
                    let src = &carried[(i + m - 1) % m];
                    cur[i]
                        .iter()
                        .zip(src)
                        .map(|(a, b)| (1.0 - alpha) * a + alpha * b)
                        .collect()
                })
                .collect();
        }
        past.push_back(cur.clone());
        if past.len() > schedule.delta + 1 {
            past.pop_front();
        }
    }
    Ok(cur)
}

/// The FedMeld scheme, registered as `fedmeld`.
#[derive(Debug, Clone, Copy, Default)]
pub struct FedMeld;

impl Scheme for FedMeld {
    fn name(&self) -> &str {
        "fedmeld"
    }

    fn cost(&self, participants: usize, areas: usize, model_bits: u64, w: &LinkWeights) -> CostReport {
        comm_cost("fedmeld", participants, areas, model_bits, w).expect("builtin scheme")
    }

    fn run(&self, ctx: &SimContext) -> Result<RunOutput> {
        run_fedmeld(ctx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::LocalOnly;
    use crate::flcore::federation::tests::toy_federation;
    use crate::flcore::model::objective;
    use crate::flcore::{Dataset, Sample};
    use crate::scheme::RunOptions;
    use proptest::prelude::*;

    fn ctx<'a>(
        fed: &'a crate::flcore::federation::Federation,
        timing: &'a Timing,
        k: usize,
        delta: usize,
        alpha: f64,
        steps: usize,
    ) -> SimContext<'a> {
        SimContext {
            fed,
            timing,
            rounds_per_serve: k,
            delta,
            alpha,
            total_steps: steps,
            options: RunOptions::default(),
        }
    }

    #[test]
    fn schedule_example() {
        let s = build_schedule(5, 3, 2, 50, 4).unwrap();
        assert_eq!(s.mix_steps(), vec![25, 50]);
        assert_eq!(s.scf_assignments.len(), 4);
        assert!(s.scf_assignments.iter().all(|a| a == &vec![25, 50]));
        assert_eq!(s.cycle_len_steps, 25);
        assert!(!s.a_t(24) && !s.a_t(26) && s.a_t(25));
        assert_eq!(s, build_schedule(5, 3, 2, 50, 4).unwrap());
        let d1 = build_schedule(1, 3, 1, 12, 2).unwrap();
        assert_eq!(d1.mix_steps(), vec![4, 8, 12]);
        assert!(build_schedule(5, 3, 2, 24, 4).is_err());
        assert!(build_schedule(5, 0, 2, 50, 4).is_err());
    }

    #[test]
    fn handover_follows_scf_rounds() {
        let s = build_schedule(1, 3, 2, 10, 2).unwrap();
        let h: Vec<usize> = (1..=10).filter(|&k| s.is_handover(k)).collect();
        assert_eq!(h, vec![3, 8]);
    }

    #[test]
    fn mixing_rule() {
        let v: ModelVector = vec![1.0, 0.0].into();
        let h: ModelVector = vec![0.0, 1.0].into();
        let out = mix_models(&v, &h, 0.3, true).unwrap();
        assert!((out[0] - 0.7).abs() < 1e-15 && (out[1] - 0.3).abs() < 1e-15);
        assert_eq!(mix_models(&v, &h, 0.3, false).unwrap(), v);
        assert_eq!(mix_models(&v, &h, 0.0, true).unwrap(), v);
        assert!(mix_models(&v, &h, 1.0, true).is_err());
        assert!(mix_models(&v, &vec![0.0].into(), 0.3, true).is_err());
    }

    #[test]
    fn history_keeps_delta_e_steps() {
        let mut a = AreaState::new(0, vec![0.0].into());
        for t in (2..=20).step_by(2) {
            a.record(t, vec![t as f64].into(), 6);
        }
        assert_eq!(a.oldest_step(), Some(14));
        assert_eq!(a.at(14).unwrap().1[0], 14.0);
        assert!(a.at(12).is_none());
    }

    #[test]
    fn influence_matrix_examples() {
        let s = build_schedule(1, 2, 1, 60, 4).unwrap();
        let i0 = influence_matrix(&s, 0.3, 2).unwrap();
        for (i, row) in i0.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert_eq!(*v, if i == j { 1.0 } else { 0.0 });
            }
        }
        let i1 = influence_matrix(&s, 0.3, 3).unwrap();
        assert!((i1[2][2] - 0.7).abs() < 1e-15 && (i1[2][1] - 0.3).abs() < 1e-15);
        assert_eq!(i1[2][0], 0.0);
        let full = influence_matrix(&s, 0.3, 9).unwrap();
        assert!(full.iter().flatten().all(|v| *v > 0.0));
        let almost = influence_matrix(&s, 0.3, 8).unwrap();
        assert!(almost.iter().flatten().any(|v| *v == 0.0));
    }

    #[test]
    fn infeasible_flight_is_rejected() {
        let fed = toy_federation(2, 2, 2, 0);
        let timing = Timing::uniform(1.0, 2, 1);
        let err = run_fedmeld(&ctx(&fed, &timing, 2, 2, 0.3, 8)).unwrap_err();
        assert!(matches!(err, Error::InfeasibleSchedule(_)), "{err}");
    }

    #[test]
    fn clock_and_staleness_bookkeeping() {
        let fed = toy_federation(3, 2, 1, 7);
        let mut timing = Timing::uniform(2.0, 3, 2);
        timing.fly_into_s = vec![5.0, 7.5, 4.0];
        let out = run_fedmeld(&ctx(&fed, &timing, 2, 2, 0.4, 24)).unwrap();
        let tr = out.trace.unwrap();
        assert_eq!(tr.mix_log.len(), 9);
        for ev in &tr.mix_log {
            assert_eq!(ev.step - ev.operand_step, 2 * 2);
            assert_eq!(ev.source_area, (ev.area + 2) % 3);
        }
        for c in &tr.clock_checks {
            assert!(c.residual().abs() < 1e-9);
        }
        assert_eq!(tr.idle_s, vec![1.0, 3.5, 0.0]);
        let times: Vec<f64> = out.records.iter().map(|r| r.t_sim_s).collect();
        assert!(times.windows(2).all(|w| w[1] > w[0]));
        // cycle = K·T + max fly = 4 + 7.5
        assert_eq!(out.records[4].t_sim_s, 11.5);
        assert_eq!(out.records[4].event, "mix");
        assert_eq!(out.records[2].event, "handover");
        assert_eq!(out.records.last().unwrap().t_sim_s, 34.5);
    }

    #[test]
    fn zero_gradients_conserve_models() {
        let mut fed = toy_federation(3, 2, 2, 1);
        let anchor = Dataset::new(
            vec![Sample {
                features: vec![5.0],
                label: 0,
            }],
            1,
        )
        .unwrap();
        for c in &mut fed.partition.clients {
            *c = anchor.clone();
        }
        let timing = Timing::uniform(1.0, 3, 2);
        let out = run_fedmeld(&ctx(&fed, &timing, 1, 2, 0.4, 30)).unwrap();
        assert!(out.area_models.iter().all(|w| w == &fed.init));
        assert_eq!(out.final_model, fed.init);
    }

    #[test]
    fn alpha_zero_equals_local_fedavg() {
        let fed = toy_federation(3, 3, 2, 5);
        let timing = Timing::uniform(1.0, 3, 2);
        let c = ctx(&fed, &timing, 2, 2, 0.0, 24);
        let a = run_fedmeld(&c).unwrap();
        let b = LocalOnly.run(&c).unwrap();
        assert_eq!(a.area_models, b.area_models);
        let la: Vec<f64> = a.records.iter().map(|r| r.loss_global).collect();
        let lb: Vec<f64> = b.records.iter().map(|r| r.loss_global).collect();
        assert_eq!(la, lb);
    }

    #[test]
    fn seed_determinism() {
        let timing = Timing::uniform(1.0, 2, 1);
        let f1 = toy_federation(2, 3, 2, 9);
        let f2 = toy_federation(2, 3, 2, 9);
        let a = run_fedmeld(&ctx(&f1, &timing, 1, 1, 0.3, 20)).unwrap();
        let b = run_fedmeld(&ctx(&f2, &timing, 1, 1, 0.3, 20)).unwrap();
        assert_eq!(a.records, b.records);
        let f3 = toy_federation(2, 3, 2, 10);
        let c = run_fedmeld(&ctx(&f3, &timing, 1, 1, 0.3, 20)).unwrap();
        assert_ne!(a.area_models, c.area_models);
    }

    #[test]
    fn matches_scalar_resimulation() {
        // full batch, full participation: each client step is deterministic
        let mut fed = toy_federation(2, 2, 2, 3);
        fed.batch_size = 2;
        let (k, delta, alpha, steps, e) = (2, 1, 0.35, 24, fed.local_iters);
        let timing = Timing::uniform(1.0, 2, delta);
        let out = run_fedmeld(&ctx(&fed, &timing, k, delta, alpha, steps)).unwrap();

        let means: Vec<Vec<f64>> = (0..2)
            .map(|i| {
                fed.partition
                    .area_clients(i)
                    .iter()
                    .map(|c| c.samples.iter().map(|s| s.features[0]).sum::<f64>() / c.len() as f64)
                    .collect()
            })
            .collect();
        let mut w = [fed.init[0]; 2];
        let mut hist: Vec<[f64; 2]> = vec![w];
        for r in 1..=steps / e {
            let mut v = [0.0; 2];
            for i in 0..2 {
                let mut acc = 0.0;
                for &x in &means[i] {
                    let mut y = w[i];
                    for t in (r - 1) * e + 1..=r * e {
                        y -= fed.schedule.eta(t) * (y - x);
                    }
                    acc += y;
                }
                v[i] = acc / means[i].len() as f64;
            }
            if r % (k + delta) == 0 {
                let old = hist[r - delta];
                w = [
                    (1.0 - alpha) * v[0] + alpha * old[1],
                    (1.0 - alpha) * v[1] + alpha * old[0],
                ];
            } else {
                w = v;
            }
            hist.push(w);
        }
        let oracle = (w[0] + w[1]) / 2.0;
        let all: Vec<Sample> = fed.partition.clients.iter().flat_map(|c| c.samples.clone()).collect();
        let f = |x: f64| objective(fed.model.as_ref(), &[x], &all);
        assert!((out.final_model[0] - oracle).abs() < 1e-12);
        assert!((f(out.final_model[0]) - f(oracle)).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn influence_rows_are_stochastic(m in 2usize..7, k in 1usize..4, delta in 1usize..4, alpha in 0.01f64..0.99, cycles in 1usize..10) {
            let s = build_schedule(1, k, delta, (k + delta) * cycles, m).unwrap();
            let mat = influence_matrix(&s, alpha, s.total_steps).unwrap();
            for row in &mat {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|v| *v >= 0.0));
            }
            if cycles >= m - 1 {
                prop_assert!(mat.iter().flatten().all(|v| *v > 0.0));
            }
        }

        #[test]
        fn a_t_once_per_cycle(e in 1usize..6, k in 1usize..6, delta in 1usize..6, cycles in 1usize..6) {
            let s = build_schedule(e, k, delta, (k + delta) * e * cycles, 3).unwrap();
            prop_assert_eq!(s.mix_steps().len(), cycles);
            for t in 0..=s.total_steps {
                if s.a_t(t) {
                    prop_assert_eq!(t % s.cycle_len_steps, 0);
                }
            }
        }
    }
}

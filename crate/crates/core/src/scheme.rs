//! Scheme registry and the run loop plumbing shared by FedMeld and the
//! baselines: simulated timing, stopping rules and metrics recording.

use std::collections::BTreeMap;
use std::fmt::Debug;

use serde::{Deserialize, Serialize};

use crate::baselines::{self, CostReport, LinkWeights};
use crate::dispersal::{self, ClockCheck, MixEvent};
use crate::error::{invalid_config, Error, Result};
use crate::flcore::federation::{average_models, Federation, MetricsRecord};
use crate::flcore::ModelVector;
use crate::geometry::ConstellationGeometry;

/// Simulated-time inputs common to every scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Steady-state latency of one global round (slowest area).
    pub round_latency_s: f64,
    /// Flight time of the store-carry-forward satellite into each area from
    /// its ring predecessor.
    pub fly_into_s: Vec<f64>,
    /// Inter-satellite link rate used by the ISL baselines.
    pub isl_rate_bps: f64,
    /// Needed for ground-station pass timing; `None` means contacts are
    /// instantaneous.
    pub geometry: Option<ConstellationGeometry>,
}

impl Timing {
    /// Timing for unit tests and degenerate runs: every flight exactly fits
    /// `delta` rounds.
    pub fn uniform(round_latency_s: f64, areas: usize, delta: usize) -> Self {
        Self {
            round_latency_s,
            fly_into_s: vec![round_latency_s * delta as f64; areas],
            isl_rate_bps: 1e9,
            geometry: None,
        }
    }

    pub fn validate(&self, areas: usize) -> Result<()> {
        if !(self.round_latency_s > 0.0) || !self.round_latency_s.is_finite() {
            return Err(invalid_config(format!(
                "round latency must be positive, got {}",
                self.round_latency_s
            )));
        }
        if self.fly_into_s.len() != areas {
            return Err(invalid_config(format!(
                "{} fly times for {areas} areas",
                self.fly_into_s.len()
            )));
        }
        if self.fly_into_s.iter().any(|f| !(*f > 0.0)) {
            return Err(invalid_config("fly times must be positive"));
        }
        if !(self.isl_rate_bps > 0.0) {
            return Err(invalid_config("isl_rate_bps must be positive"));
        }
        Ok(())
    }

    pub fn max_fly(&self) -> f64 {
        self.fly_into_s.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunOptions {
    /// Emit a metrics row every this many global rounds (the last round is
    /// always emitted).
    pub eval_every: usize,
    /// Stop before any round that would end after this simulated time.
    pub time_budget_s: Option<f64>,
    /// `q`: size of one model transfer in bits.
    pub model_bits: u64,
    pub link_weights: LinkWeights,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            eval_every: 1,
            time_budget_s: None,
            model_bits: 1_000_000,
            link_weights: LinkWeights::default(),
        }
    }
}

/// Everything a scheme needs to execute one run.
#[derive(Debug, Clone)]
pub struct SimContext<'a> {
    pub fed: &'a Federation,
    pub timing: &'a Timing,
    /// `K`: rounds per satellite visit.
    pub rounds_per_serve: usize,
    /// `δ`: also sets the exchange period `K + δ` of the baselines.
    pub delta: usize,
    pub alpha: f64,
    /// `R`, in local steps.
    pub total_steps: usize,
    pub options: RunOptions,
}

impl SimContext<'_> {
    pub fn period_rounds(&self) -> usize {
        self.rounds_per_serve + self.delta
    }

    pub fn total_rounds(&self) -> usize {
        self.total_steps / self.fed.local_iters
    }

    pub fn validate(&self) -> Result<()> {
        self.fed.validate()?;
        self.timing.validate(self.fed.num_areas())?;
        if self.rounds_per_serve == 0 || self.delta == 0 {
            return Err(invalid_config("K and delta must be >= 1"));
        }
        if self.options.eval_every == 0 {
            return Err(invalid_config("eval_every must be >= 1"));
        }
        if !self.total_steps.is_multiple_of(self.fed.local_iters) {
            return Err(invalid_config(format!(
                "total steps {} is not a multiple of E = {}",
                self.total_steps, self.fed.local_iters
            )));
        }
        if self.total_rounds() == 0 {
            return Err(invalid_config("total steps must cover at least one round"));
        }
        Ok(())
    }
}

/// Extra trace kept by the FedMeld engine.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DispersalTrace {
    pub mix_log: Vec<MixEvent>,
    pub clock_checks: Vec<ClockCheck>,
    /// Idle wait of each area per cycle.
    pub idle_s: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub scheme: String,
    pub records: Vec<MetricsRecord>,
    pub area_models: Vec<ModelVector>,
    /// Cross-area average after the last completed round.
    pub final_model: ModelVector,
    pub rounds_completed: usize,
    pub cost: CostReport,
    pub trace: Option<DispersalTrace>,
}

/// Collects metrics rows while a scheme runs.
pub(crate) struct Recorder<'a> {
    fed: &'a Federation,
    opts: &'a RunOptions,
    per_round_bits: u128,
    records: Vec<MetricsRecord>,
    pending: Vec<&'static str>,
    last_round: usize,
    last_time: f64,
    emitted_round: usize,
}

impl<'a> Recorder<'a> {
    pub(crate) fn new(
        fed: &'a Federation,
        opts: &'a RunOptions,
        cost: &CostReport,
        init: &[ModelVector],
    ) -> Result<Self> {
        let mut r = Self {
            fed,
            opts,
            per_round_bits: cost.traffic_bits,
            records: Vec::new(),
            pending: Vec::new(),
            last_round: 0,
            last_time: 0.0,
            emitted_round: 0,
        };
        r.emit(init)?;
        Ok(r)
    }

    /// Whether a round ending at `t_end` stays within the time budget.
    pub(crate) fn fits(&self, t_end: f64) -> bool {
        self.opts
            .time_budget_s
            .is_none_or(|b| t_end <= b * (1.0 + 1e-12))
    }

    pub(crate) fn complete(
        &mut self,
        k: usize,
        t_end: f64,
        models: &[ModelVector],
        events: &[&'static str],
    ) -> Result<()> {
        self.pending.extend_from_slice(events);
        self.last_round = k;
        self.last_time = t_end;
        if k.is_multiple_of(self.opts.eval_every) {
            self.emit(models)?;
        }
        Ok(())
    }

    fn emit(&mut self, models: &[ModelVector]) -> Result<()> {
        let global = average_models(models)?;
        let (loss_global, acc_test) = self.fed.evaluate(&global);
        if !loss_global.is_finite() {
            return Err(Error::Numeric(format!(
                "global loss is {loss_global} at round {}",
                self.last_round
            )));
        }
        let area_loss = models
            .iter()
            .map(|w| crate::flcore::global_loss(self.fed.model.as_ref(), w, &self.fed.partition))
            .collect();
        self.records.push(MetricsRecord {
            k: self.last_round,
            t_sim_s: self.last_time,
            loss_global,
            acc_test,
            traffic_bits: self.per_round_bits * self.last_round as u128,
            event: self.pending.join(";"),
            area_loss,
        });
        self.pending.clear();
        self.emitted_round = self.last_round;
        Ok(())
    }

    pub(crate) fn finish(mut self, models: &[ModelVector]) -> Result<(Vec<MetricsRecord>, usize)> {
        if self.emitted_round != self.last_round {
            self.emit(models)?;
        }
        Ok((self.records, self.last_round))
    }
}

/// A runnable FL scheme selected by name.
pub trait Scheme: Send + Sync + Debug {
    fn name(&self) -> &str;
    /// Per-round communication cost at the given population and model size.
    fn cost(&self, participants: usize, areas: usize, model_bits: u64, w: &LinkWeights) -> CostReport;
    fn run(&self, ctx: &SimContext) -> Result<RunOutput>;
}

/// Scheme-specific settings read from the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchemeSettings {
    /// Ground-station angles along the track, radians.
    pub ground_stations: Vec<f64>,
}

impl Default for SchemeSettings {
    fn default() -> Self {
        Self {
            ground_stations: vec![0.0, std::f64::consts::PI],
        }
    }
}

pub type SchemeFactory = fn(&SchemeSettings) -> Result<Box<dyn Scheme>>;

#[derive(Debug, Clone)]
pub struct SchemeRegistry {
    factories: BTreeMap<String, SchemeFactory>,
}

impl SchemeRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("fedmeld", |_| Ok(Box::new(dispersal::FedMeld)));
        r.register("local", |_| Ok(Box::new(baselines::LocalOnly)));
        r.register("hfl", |s| {
            Ok(Box::new(baselines::Hfl {
                ground_stations: s.ground_stations.clone(),
            }))
        });
        r.register("pfl", |_| Ok(Box::new(baselines::Pfl)));
        r.register("ring", |_| Ok(Box::new(baselines::RingAllreduce)));
        r
    }

    pub fn register(&mut self, name: &str, factory: SchemeFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> Vec<String> {
        self.factories.keys().cloned().collect()
    }

    pub fn build(&self, name: &str, settings: &SchemeSettings) -> Result<Box<dyn Scheme>> {
        let f = self.factories.get(name).ok_or_else(|| Error::Unknown {
            kind: "scheme",
            name: name.to_string(),
            known: self.names().join(", "),
        })?;
        f(settings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_lists_builtins_and_rejects_unknown() {
        let r = SchemeRegistry::with_builtins();
        assert_eq!(r.names(), vec!["fedmeld", "hfl", "local", "pfl", "ring"]);
        for n in r.names() {
            assert_eq!(r.build(&n, &SchemeSettings::default()).unwrap().name(), n);
        }
        let err = r.build("gossip", &SchemeSettings::default()).unwrap_err();
        assert!(err.to_string().contains("gossip"));
    }

    #[test]
    fn timing_validation() {
        let t = Timing::uniform(2.0, 3, 2);
        t.validate(3).unwrap();
        assert_eq!(t.max_fly(), 4.0);
        assert!(t.validate(2).is_err());
        let bad = Timing {
            round_latency_s: 0.0,
            ..t
        };
        assert!(bad.validate(3).is_err());
    }
}

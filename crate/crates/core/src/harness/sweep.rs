//! One-axis parameter sweeps over a base config. Independent points run in
//! parallel; each owns its own clock and output files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::experiment::{decide, prepare, run_experiment};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    SatsPerOrbit,
    /// Areas along the track; fewer areas lengthen every flight.
    NumAreas,
    TMax,
    Seed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub serve_duration_s: f64,
    pub rounds_per_serve: usize,
    pub max_fly_s: f64,
    pub delta: usize,
    pub alpha: f64,
    /// Present when the point was actually run.
    pub final_acc_test: Option<f64>,
    pub final_t_sim_s: Option<f64>,
}

pub fn apply(base: &RunConfig, axis: SweepAxis, value: f64) -> RunConfig {
    let mut cfg = base.clone();
    match axis {
        SweepAxis::SatsPerOrbit => cfg.geometry.sats_per_orbit = value as usize,
        SweepAxis::NumAreas => cfg.geometry.num_areas = value as usize,
        SweepAxis::TMax => cfg.t_max_s = Some(value),
        SweepAxis::Seed => cfg.seed = value as u64,
    }
    let stem = cfg.stem();
    let tag = match axis {
        SweepAxis::SatsPerOrbit => "sats",
        SweepAxis::NumAreas => "areas",
        SweepAxis::TMax => "tmax",
        SweepAxis::Seed => "seed",
    };
    cfg.output.stem = Some(format!("{stem}_{tag}{value}"));
    cfg
}

fn point(cfg: &RunConfig, value: f64, out_dir: Option<&Path>) -> Result<SweepRow> {
    let p = prepare(cfg)?;
    let d = decide(&p)?;
    let mut row = SweepRow {
        value,
        serve_duration_s: p.serve_plan.serve_duration_s,
        rounds_per_serve: p.rounds_per_serve,
        max_fly_s: p.timing.max_fly(),
        delta: d.delta,
        alpha: d.alpha,
        final_acc_test: None,
        final_t_sim_s: None,
    };
    if let Some(dir) = out_dir {
        let res = run_experiment(cfg, Some(dir))?;
        row.final_acc_test = Some(res.summary.final_acc_test);
        row.final_t_sim_s = Some(res.summary.final_t_sim_s);
    }
    Ok(row)
}

/// Evaluate `base` at each value of `axis`. With `out_dir`, every point is
/// also run and its files written there; otherwise only timing and the
/// solved `(δ, α)` are reported.
pub fn sweep(base: &RunConfig, axis: SweepAxis, values: &[f64], out_dir: Option<&Path>) -> Result<Vec<SweepRow>> {
    let configs: Vec<RunConfig> = values.iter().map(|&v| apply(base, axis, v)).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .iter()
            .zip(values)
            .map(|(c, &v)| s.spawn(move || point(c, v, out_dir)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    })
}

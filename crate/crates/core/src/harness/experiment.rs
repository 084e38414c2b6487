//! Config → data, federation, timing → solved `(δ, α)` → scheme run → files.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{DataKind, RunConfig};
use super::report::write_metrics_csv;
use crate::baselines::CostReport;
use crate::error::{Error, Result};
use crate::flcore::{
    estimate_gamma_noniid, partition, Curvature, Dataset, Federation, GaussianBlobs, LrSchedule,
    ModelFamily, ModelRegistry, SolverOptions,
};
use crate::geometry::{ConstellationGeometry, ServePlan};
use crate::linkmodel::round_latency;
use crate::rng::SeedStreams;
use crate::scheme::{RunOptions, RunOutput, SchemeRegistry, SimContext, Timing};
use crate::scmr::{optimal_alpha, optimal_delta, solve_scmr, AlphaSolution, BoundParams, LatencyEnvelope, SolverReport};

/// A config resolved into runnable pieces.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: RunConfig,
    pub fed: Federation,
    pub geometry: ConstellationGeometry,
    pub serve_plan: ServePlan,
    pub timing: Timing,
    /// `K` in use (possibly overridden).
    pub rounds_per_serve: usize,
    pub curvature: Option<Curvature>,
}

pub fn load_data(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let d = &cfg.data;
    match d.kind {
        DataKind::Blobs => {
            let seeds = SeedStreams::new(cfg.seed);
            let blobs = GaussianBlobs {
                num_labels: d.num_labels,
                features: d.features,
                center_spread: d.center_spread,
                noise_std: d.noise_std,
            };
            let mut r = seeds.stream("data", 0);
            let centers = blobs.centers(&mut r)?;
            let train = blobs.sample(&centers, d.train_samples, &mut r)?;
            let test = blobs.sample(&centers, d.test_samples, &mut seeds.stream("data", 1))?;
            Ok((train, test))
        }
        DataKind::Csv => {
            let missing = || Error::InvalidConfig("data: csv data needs train_path and test_path".into());
            let train = Dataset::from_csv(d.train_path.as_ref().ok_or_else(missing)?, None)?;
            let test = Dataset::from_csv(d.test_path.as_ref().ok_or_else(missing)?, Some(train.num_labels))?;
            Ok((train, test))
        }
    }
}

fn schedule_for(cfg: &RunConfig, curvature: Option<Curvature>) -> Result<LrSchedule> {
    if let (Some(b), Some(g)) = (cfg.training.lr_beta, cfg.training.lr_gamma) {
        return LrSchedule::explicit(b, g);
    }
    let (l, mu) = smoothness_and_mu(cfg, curvature)?;
    LrSchedule::strongly_convex(mu, l, cfg.compute.local_iters)
}

fn smoothness_and_mu(cfg: &RunConfig, curvature: Option<Curvature>) -> Result<(f64, f64)> {
    let l = cfg.scmr.smoothness.or(curvature.map(|c| c.smoothness));
    let mu = cfg.scmr.strong_convexity.or(curvature.map(|c| c.strong_convexity));
    match (l, mu) {
        (Some(l), Some(mu)) => Ok((l, mu)),
        _ => Err(Error::InvalidConfig(format!(
            "model family `{}` has no analytic curvature; set scmr.smoothness and scmr.strong_convexity or training.lr_beta/lr_gamma",
            cfg.model.family
        ))),
    }
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let violations = cfg.violations();
    if !violations.is_empty() {
        return Err(Error::Violations(violations));
    }
    let seeds = SeedStreams::new(cfg.seed);
    let (train, test) = load_data(cfg)?;
    let spec = cfg.partition_spec();
    spec.validate(train.num_labels)?;
    let parts = partition(&train, &spec)?;
    let model: Arc<dyn ModelFamily> =
        ModelRegistry::with_builtins().build(&cfg.model, train.feature_dim(), train.num_labels)?;
    let curvature = model.curvature(&train);
    let schedule = schedule_for(cfg, curvature)?;
    let init = model.init(&mut seeds.stream("init", 0));

    let geometry = cfg.geometry.build();
    geometry.validate()?;
    let n_total = spec.num_clients();
    let round_s = match cfg.timing.round_latency_s {
        Some(t) => t,
        None => {
            let slant = cfg.timing.slant_range_m.unwrap_or(geometry.altitude_m);
            let clients: Vec<usize> = (0..n_total).collect();
            round_latency(
                &cfg.compute,
                &cfg.link,
                &clients,
                &vec![slant; n_total],
                cfg.timing.model_bits as f64,
            )?
        }
    };
    let serve_plan = geometry.serve_plan(round_s)?;
    let k = cfg.timing.rounds_per_serve.unwrap_or(serve_plan.rounds_per_serve);
    let timing = Timing {
        round_latency_s: round_s,
        fly_into_s: (0..geometry.num_areas()).map(|i| serve_plan.fly_into(i)).collect(),
        isl_rate_bps: cfg.timing.isl_rate_bps,
        geometry: Some(geometry.clone()),
    };
    let fed = Federation {
        model,
        partition: parts,
        test,
        schedule,
        local_iters: cfg.compute.local_iters,
        batch_size: cfg.compute.batch_size,
        participants_per_area: cfg.participants_per_area(),
        init,
        seeds,
    };
    fed.validate()?;
    Ok(Prepared {
        config: cfg.clone(),
        fed,
        geometry,
        serve_plan,
        timing,
        rounds_per_serve: k,
        curvature,
    })
}

/// Bound constants from the config, filling `L`, `μ`, `Γ` from the model and
/// data where omitted.
pub fn bound_params(p: &Prepared) -> Result<BoundParams> {
    let cfg = &p.config;
    let s = &cfg.scmr;
    let (l, mu) = smoothness_and_mu(cfg, p.curvature)?;
    let need = |name: &str| Error::InvalidConfig(format!("scmr.{name} is required to evaluate the bound"));
    let gamma_noniid = match s.gamma_noniid {
        Some(g) => g,
        None => estimate_gamma_noniid(p.fed.model.as_ref(), &p.fed.partition, &SolverOptions::default())?.gamma,
    };
    let params = BoundParams {
        smoothness: l,
        strong_convexity: mu,
        grad_bound: s.grad_bound.ok_or_else(|| need("grad_bound"))?,
        sigma: s.sigma.clone().ok_or_else(|| need("sigma"))?,
        gamma_noniid,
        local_iters: cfg.compute.local_iters,
        rounds_per_serve: p.rounds_per_serve,
        total_steps: cfg.total_steps,
        rho: s.rho,
        clients_per_area: cfg.clients_per_area(),
        participants_per_area: cfg.participants_per_area(),
        init_gap: s.init_gap.ok_or_else(|| need("init_gap"))?,
    };
    params.validate()?;
    Ok(params)
}

pub fn envelope(p: &Prepared) -> Result<LatencyEnvelope> {
    let t_max_s = p
        .config
        .t_max_s
        .ok_or_else(|| Error::InvalidConfig("t_max_s is required to solve delta".into()))?;
    Ok(LatencyEnvelope {
        t_max_s,
        max_fly_s: p.timing.max_fly(),
    })
}

/// The `(δ, α)` a run uses and how they were obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub delta: usize,
    pub alpha: f64,
    pub solver: Option<SolverReport>,
    pub alpha_solution: Option<AlphaSolution>,
    pub gamma_noniid: Option<f64>,
}

pub fn decide(p: &Prepared) -> Result<Decision> {
    let cfg = &p.config;
    let e = cfg.compute.local_iters;
    if cfg.solves_alpha() {
        let params = bound_params(p)?;
        let gamma_noniid = Some(params.gamma_noniid);
        return match cfg.fedmeld.delta {
            None => {
                let report = solve_scmr(&params, &envelope(p)?)?;
                Ok(Decision {
                    delta: report.delta_star,
                    alpha: report.alpha_star,
                    solver: Some(report),
                    alpha_solution: None,
                    gamma_noniid,
                })
            }
            Some(delta) => {
                let sol = optimal_alpha(delta, &params)?;
                Ok(Decision {
                    delta,
                    alpha: sol.alpha_star,
                    solver: None,
                    alpha_solution: Some(sol),
                    gamma_noniid,
                })
            }
        };
    }
    let delta = match (cfg.fedmeld.delta, cfg.t_max_s) {
        (Some(d), _) => d,
        (None, Some(t_max)) => optimal_delta(cfg.total_steps, e, t_max, p.timing.max_fly(), p.rounds_per_serve)?,
        (None, None) => 1,
    };
    Ok(Decision {
        delta,
        alpha: if cfg.scheme == "fedmeld" { cfg.fedmeld.alpha.unwrap_or(0.0) } else { 0.0 },
        solver: None,
        alpha_solution: None,
        gamma_noniid: cfg.scmr.gamma_noniid,
    })
}

/// Solve `(δ*, α*)` for a config regardless of its scheme.
pub fn solve(cfg: &RunConfig) -> Result<SolverReport> {
    let p = prepare(cfg)?;
    let params = bound_params(&p)?;
    solve_scmr(&params, &envelope(&p)?)
}

pub fn run_options(cfg: &RunConfig) -> RunOptions {
    RunOptions {
        eval_every: cfg.training.eval_every,
        time_budget_s: cfg.training.time_budget_s,
        model_bits: cfg.timing.model_bits,
        link_weights: cfg.cost,
    }
}

pub fn run_prepared(p: &Prepared, d: &Decision) -> Result<RunOutput> {
    let scheme = SchemeRegistry::with_builtins().build(&p.config.scheme, &p.config.schemes)?;
    let ctx = SimContext {
        fed: &p.fed,
        timing: &p.timing,
        rounds_per_serve: p.rounds_per_serve,
        delta: d.delta,
        alpha: d.alpha,
        total_steps: p.config.total_steps,
        options: run_options(&p.config),
    };
    scheme.run(&ctx)
}

/// The JSON written next to each metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scheme: String,
    pub seed: u64,
    pub total_steps: usize,
    pub local_iters: usize,
    pub rounds_per_serve: usize,
    pub delta: usize,
    pub alpha: f64,
    pub round_latency_s: f64,
    pub serve_duration_s: f64,
    pub fly_time_s: Vec<f64>,
    pub idle_s: Option<Vec<f64>>,
    pub rounds_completed: usize,
    pub final_t_sim_s: f64,
    pub final_loss_global: f64,
    pub final_acc_test: f64,
    pub mix_events: usize,
    pub cost: CostReport,
    pub gamma_noniid: Option<f64>,
    pub solver: Option<SolverReport>,
    pub alpha_solution: Option<AlphaSolution>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub summary: RunSummary,
    pub csv_path: PathBuf,
    pub json_path: PathBuf,
    pub output: RunOutput,
}

pub fn summarize(p: &Prepared, d: &Decision, out: &RunOutput) -> RunSummary {
    let last = out.records.last();
    RunSummary {
        scheme: out.scheme.clone(),
        seed: p.config.seed,
        total_steps: p.config.total_steps,
        local_iters: p.config.compute.local_iters,
        rounds_per_serve: p.rounds_per_serve,
        delta: d.delta,
        alpha: d.alpha,
        round_latency_s: p.timing.round_latency_s,
        serve_duration_s: p.serve_plan.serve_duration_s,
        fly_time_s: p.serve_plan.fly_time_s.clone(),
        idle_s: out.trace.as_ref().map(|t| t.idle_s.clone()),
        rounds_completed: out.rounds_completed,
        final_t_sim_s: last.map_or(0.0, |r| r.t_sim_s),
        final_loss_global: last.map_or(f64::NAN, |r| r.loss_global),
        final_acc_test: last.map_or(f64::NAN, |r| r.acc_test),
        mix_events: out.trace.as_ref().map_or(0, |t| t.mix_log.len()),
        cost: out.cost.clone(),
        gamma_noniid: d.gamma_noniid,
        solver: d.solver.clone(),
        alpha_solution: d.alpha_solution.clone(),
    }
}

/// Run the configured scheme and write `<stem>.csv` and `<stem>.json` into
/// `out_dir` (the config's output directory when `None`).
pub fn run_experiment(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<ExperimentResult> {
    let p = prepare(cfg)?;
    let d = decide(&p)?;
    let output = run_prepared(&p, &d)?;
    let summary = summarize(&p, &d, &output);
    let dir = out_dir.map_or_else(|| cfg.output.dir.clone(), Path::to_path_buf);
    std::fs::create_dir_all(&dir)?;
    let stem = cfg.stem();
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    write_metrics_csv(&csv_path, &output.records)?;
    std::fs::write(&json_path, serde_json::to_string_pretty(&summary)?)?;
    log::info!(
        "{}: {} rounds, final accuracy {:.4}, wrote {}",
        summary.scheme,
        summary.rounds_completed,
        summary.final_acc_test,
        csv_path.display()
    );
    Ok(ExperimentResult {
        summary,
        csv_path,
        json_path,
        output,
    })
}

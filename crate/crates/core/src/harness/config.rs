//! The run configuration: one TOML file, strict schema, SI units in every
//! physical field name.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::LinkWeights;
use crate::error::{Error, Result};
use crate::flcore::{ModelRegistry, ModelSpec, PartitionScheme, PartitionSpec};
use crate::geometry::{ConstellationGeometry, EARTH_MU, EARTH_RADIUS_M};
use crate::linkmodel::{ComputeProfile, LinkBudget};
use crate::scheme::{SchemeRegistry, SchemeSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_scheme")]
    pub scheme: String,
    #[serde(default)]
    pub seed: u64,
    /// `R`, total local steps; a multiple of `compute.local_iters`.
    pub total_steps: usize,
    /// Latency envelope `T_max` for choosing `δ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max_s: Option<f64>,
    #[serde(default)]
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub link: LinkBudget,
    #[serde(default)]
    pub compute: ComputeProfile,
    #[serde(default)]
    pub timing: TimingConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub partition: PartitionConfig,
    #[serde(default)]
    pub participation: ParticipationConfig,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub fedmeld: FedMeldConfig,
    #[serde(default)]
    pub scmr: ScmrConfig,
    #[serde(default)]
    pub schemes: SchemeSettings,
    #[serde(default)]
    pub cost: LinkWeights,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_scheme() -> String {
    "fedmeld".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub altitude_m: f64,
    pub sats_per_orbit: usize,
    pub num_areas: usize,
    /// Area positions along the track; evenly spaced from 0 when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub area_angles_rad: Option<Vec<f64>>,
    pub earth_radius_m: f64,
    pub gravitational_parameter_m3_s2: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            altitude_m: 550e3,
            sats_per_orbit: 66,
            num_areas: 8,
            area_angles_rad: None,
            earth_radius_m: EARTH_RADIUS_M,
            gravitational_parameter_m3_s2: EARTH_MU,
        }
    }
}

impl GeometryConfig {
    pub fn build(&self) -> ConstellationGeometry {
        let mut g = ConstellationGeometry::evenly_spaced(self.altitude_m, self.sats_per_orbit, self.num_areas);
        if let Some(a) = &self.area_angles_rad {
            g.area_angles = a.clone();
        }
        g.earth_radius_m = self.earth_radius_m;
        g.gravitational_parameter = self.gravitational_parameter_m3_s2;
        g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConfig {
    /// `q`: transferred model size. The default matches an 11.7M-parameter
    /// network in 32-bit floats, independent of the desk-scale model trained.
    pub model_bits: u64,
    pub isl_rate_bps: f64,
    /// Client-to-satellite distance; the orbit altitude when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slant_range_m: Option<f64>,
    /// Overrides the link-model round latency.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub round_latency_s: Option<f64>,
    /// Overrides `K` from the serving window.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rounds_per_serve: Option<usize>,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            model_bits: 374_000_000,
            isl_rate_bps: 1e9,
            slant_range_m: None,
            round_latency_s: None,
            rounds_per_serve: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Blobs,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub kind: DataKind,
    pub num_labels: usize,
    pub features: usize,
    pub center_spread: f64,
    pub noise_std: f64,
    pub train_samples: usize,
    pub test_samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_path: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kind: DataKind::Blobs,
            num_labels: 10,
            features: 2,
            center_spread: 3.0,
            noise_std: 1.0,
            train_samples: 4000,
            test_samples: 1000,
            train_path: None,
            test_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    pub scheme: PartitionScheme,
    /// `N_i` per area; a single entry applies to every area.
    pub clients_per_area: Vec<usize>,
    pub labels_per_cluster: usize,
    pub labels_per_client: usize,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            scheme: PartitionScheme::NoniidClusters,
            clients_per_area: vec![5],
            labels_per_cluster: 3,
            labels_per_client: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParticipationConfig {
    /// Share of each area's clients selected per round.
    pub fraction: f64,
    /// Explicit `U_i`, overriding `fraction`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub participants_per_area: Option<Vec<usize>>,
}

impl Default for ParticipationConfig {
    fn default() -> Self {
        Self {
            fraction: 0.8,
            participants_per_area: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Explicit `η_t = β/(γ + t)`; when both are omitted the strongly convex
    /// schedule is derived from `μ` and `L`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_gamma: Option<f64>,
    pub eval_every: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_budget_s: Option<f64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lr_beta: None,
            lr_gamma: None,
            eval_every: 1,
            time_budget_s: None,
        }
    }
}

/// `None` means "solve it".
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedMeldConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

/// Constants of the convergence bound. `L`, `μ` and `Γ` are derived from the
/// model and data when omitted (convex families only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScmrConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub smoothness: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strong_convexity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_noniid: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_gap: Option<f64>,
    pub rho: f64,
}

impl Default for ScmrConfig {
    fn default() -> Self {
        Self {
            smoothness: None,
            strong_convexity: None,
            grad_bound: None,
            sigma: None,
            gamma_noniid: None,
            init_gap: None,
            rho: crate::scmr::default_rho(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// File stem for the metrics CSV and run JSON; `<scheme>_seed<seed>`
    /// when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stem: Option<String>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("results"),
            stem: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let violations = cfg.violations();
        if violations.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Violations(violations))
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn stem(&self) -> String {
        self.output
            .stem
            .clone()
            .unwrap_or_else(|| format!("{}_seed{}", self.scheme, self.seed))
    }

    /// `N_i` for every area.
    pub fn clients_per_area(&self) -> Vec<usize> {
        match self.partition.clients_per_area.as_slice() {
            [n] => vec![*n; self.geometry.num_areas],
            many => many.to_vec(),
        }
    }

    /// `U_i` for every area.
    pub fn participants_per_area(&self) -> Vec<usize> {
        if let Some(u) = &self.participation.participants_per_area {
            return match u.as_slice() {
                [one] => vec![*one; self.geometry.num_areas],
                many => many.to_vec(),
            };
        }
        self.clients_per_area()
            .iter()
            .map(|&n| ((self.participation.fraction * n as f64).round() as usize).clamp(1, n.max(1)))
            .collect()
    }

    pub fn partition_spec(&self) -> PartitionSpec {
        PartitionSpec {
            scheme: self.partition.scheme,
            clients_per_area: self.clients_per_area(),
            labels_per_cluster: self.partition.labels_per_cluster,
            labels_per_client: self.partition.labels_per_client,
            seed: self.seed,
        }
    }

    pub fn solves_delta(&self) -> bool {
        self.fedmeld.delta.is_none()
    }

    pub fn solves_alpha(&self) -> bool {
        self.scheme == "fedmeld" && self.fedmeld.alpha.is_none()
    }

    /// Every schema violation, each naming its field.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut push = |r: Result<()>| {
            if let Err(e) = r {
                v.push(match e {
                    Error::InvalidConfig(m) => m,
                    other => other.to_string(),
                });
            }
        };
        let schemes = SchemeRegistry::with_builtins();
        if !schemes.names().contains(&self.scheme) {
            push(Err(Error::InvalidConfig(format!(
                "scheme: unknown scheme `{}` (known: {})",
                self.scheme,
                schemes.names().join(", ")
            ))));
        }
        if !ModelRegistry::with_builtins().names().contains(&self.model.family.as_str()) {
            push(Err(Error::InvalidConfig(format!(
                "model.family: unknown family `{}`",
                self.model.family
            ))));
        }
        let e = self.compute.local_iters;
        if e == 0 {
            push(Err(Error::InvalidConfig("compute.local_iters must be >= 1".into())));
        } else if self.total_steps == 0 || !self.total_steps.is_multiple_of(e) {
            push(Err(Error::InvalidConfig(format!(
                "total_steps: {} must be a positive multiple of compute.local_iters = {e}",
                self.total_steps
            ))));
        }
        if let Some(t) = self.t_max_s {
            if !(t > 0.0) {
                push(Err(Error::InvalidConfig(format!("t_max_s must be > 0, got {t}"))));
            }
        }
        push(self.geometry.build().validate());
        push(self.link.validate());
        push(self.compute.validate());
        let t = &self.timing;
        if !(t.isl_rate_bps > 0.0) {
            push(Err(Error::InvalidConfig(format!(
                "timing.isl_rate_bps must be > 0, got {}",
                t.isl_rate_bps
            ))));
        }
        for (name, val) in [("slant_range_m", t.slant_range_m), ("round_latency_s", t.round_latency_s)] {
            if let Some(x) = val {
                if !(x > 0.0) {
                    push(Err(Error::InvalidConfig(format!("timing.{name} must be > 0, got {x}"))));
                }
            }
        }
        if t.rounds_per_serve == Some(0) {
            push(Err(Error::InvalidConfig("timing.rounds_per_serve must be >= 1".into())));
        }

        let d = &self.data;
        match d.kind {
            DataKind::Blobs => {
                if d.num_labels < 2 || d.features == 0 {
                    push(Err(Error::InvalidConfig(
                        "data: blobs need num_labels >= 2 and features >= 1".into(),
                    )));
                }
                if !(d.center_spread > 0.0) || !(d.noise_std >= 0.0) {
                    push(Err(Error::InvalidConfig(
                        "data: center_spread must be > 0 and noise_std >= 0".into(),
                    )));
                }
                if d.train_samples == 0 || d.test_samples == 0 {
                    push(Err(Error::InvalidConfig(
                        "data: train_samples and test_samples must be >= 1".into(),
                    )));
                }
            }
            DataKind::Csv => {
                if d.train_path.is_none() || d.test_path.is_none() {
                    push(Err(Error::InvalidConfig(
                        "data: csv data needs train_path and test_path".into(),
                    )));
                }
            }
        }

        let n = self.clients_per_area();
        if n.len() != self.geometry.num_areas {
            push(Err(Error::InvalidConfig(format!(
                "partition.clients_per_area has {} entries for geometry.num_areas = {}",
                n.len(),
                self.geometry.num_areas
            ))));
        }
        if d.kind == DataKind::Blobs {
            push(self.partition_spec().validate(d.num_labels));
        }
        let p = &self.participation;
        if !(p.fraction > 0.0 && p.fraction <= 1.0) {
            push(Err(Error::InvalidConfig(format!(
                "participation.fraction must be in (0, 1], got {}",
                p.fraction
            ))));
        }
        let u = self.participants_per_area();
        if u.len() != n.len() || u.iter().zip(&n).any(|(&u, &n)| u == 0 || u > n) {
            push(Err(Error::InvalidConfig(
                "participation.participants_per_area must give 1 <= U_i <= N_i for every area".into(),
            )));
        }

        let tr = &self.training;
        if tr.eval_every == 0 {
            push(Err(Error::InvalidConfig("training.eval_every must be >= 1".into())));
        }
        if tr.lr_beta.is_some() != tr.lr_gamma.is_some() {
            push(Err(Error::InvalidConfig(
                "training: lr_beta and lr_gamma must be given together".into(),
            )));
        }
        if let Some(b) = tr.time_budget_s {
            if !(b > 0.0) {
                push(Err(Error::InvalidConfig(format!(
                    "training.time_budget_s must be > 0, got {b}"
                ))));
            }
        }

        if let Some(a) = self.fedmeld.alpha {
            if !(0.0..1.0).contains(&a) {
                push(Err(Error::InvalidConfig(format!("fedmeld.alpha must be in [0, 1), got {a}"))));
            }
        }
        if self.fedmeld.delta == Some(0) {
            push(Err(Error::InvalidConfig("fedmeld.delta must be >= 1".into())));
        }
        if self.solves_delta() && self.scheme != "local" && self.t_max_s.is_none() {
            push(Err(Error::InvalidConfig(
                "t_max_s is required when fedmeld.delta is solved".into(),
            )));
        }
        let s = &self.scmr;
        if self.solves_alpha() {
            if s.grad_bound.is_none() {
                push(Err(Error::InvalidConfig(
                    "scmr.grad_bound is required when fedmeld.alpha is solved".into(),
                )));
            }
            if s.sigma.is_none() {
                push(Err(Error::InvalidConfig(
                    "scmr.sigma is required when fedmeld.alpha is solved".into(),
                )));
            }
            if s.init_gap.is_none() {
                push(Err(Error::InvalidConfig(
                    "scmr.init_gap is required when fedmeld.alpha is solved".into(),
                )));
            }
        }
        if !(s.rho > 1.0) {
            push(Err(Error::InvalidConfig(format!("scmr.rho must be > 1, got {}", s.rho))));
        }
        for (name, val) in [
            ("smoothness", s.smoothness),
            ("strong_convexity", s.strong_convexity),
            ("grad_bound", s.grad_bound),
            ("init_gap", s.init_gap),
        ] {
            if let Some(x) = val {
                if !(x >= 0.0) || !x.is_finite() {
                    push(Err(Error::InvalidConfig(format!("scmr.{name} must be finite and >= 0"))));
                }
            }
        }
        if let Some(g) = s.gamma_noniid {
            if !(g >= 0.0) {
                push(Err(Error::InvalidConfig("scmr.gamma_noniid must be >= 0".into())));
            }
        }
        if self.schemes.ground_stations.is_empty() {
            push(Err(Error::InvalidConfig(
                "schemes.ground_stations needs at least one station".into(),
            )));
        }
        if self.output.dir.as_os_str().is_empty() {
            push(Err(Error::InvalidConfig("output.dir must not be empty".into())));
        }
        v
    }
}

/// Read and validate a config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    let mut cfg = RunConfig::from_toml(&text)?;
    // relative data paths resolve against the config file
    if let Some(dir) = path.parent() {
        for p in [&mut cfg.data.train_path, &mut cfg.data.test_path].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "total_steps = 50\nt_max_s = 3600.0\n[fedmeld]\nalpha = 0.3\n";

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.scheme, "fedmeld");
        assert_eq!(cfg.link, LinkBudget::default());
        assert_eq!(cfg.clients_per_area(), vec![5; 8]);
        assert_eq!(cfg.participants_per_area(), vec![4; 8]);
        assert_eq!(cfg.stem(), "fedmeld_seed0");
    }

    #[test]
    fn negative_bandwidth_names_the_field() {
        let err = RunConfig::from_toml(&format!("{MINIMAL}[link]\nw_up_hz = -5.0\n")).unwrap_err();
        match err {
            Error::Violations(v) => {
                assert_eq!(v.len(), 1, "{v:?}");
                assert!(v[0].contains("link.w_up_hz"), "{}", v[0]);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn duplicate_and_unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("total_steps = 50\ntotal_steps = 60\n").is_err());
        let err = RunConfig::from_toml(&format!("{MINIMAL}[link]\nbandwidth = 1.0\n")).unwrap_err();
        assert!(err.to_string().contains("bandwidth"), "{err}");
    }

    #[test]
    fn all_violations_are_listed() {
        let text = "total_steps = 7\nscheme = \"gossip\"\n[compute]\nlocal_iters = 5\n[participation]\nfraction = 1.5\n";
        match RunConfig::from_toml(text).unwrap_err() {
            Error::Violations(v) => {
                let joined = v.join("\n");
                for needle in ["scheme", "total_steps", "participation.fraction", "t_max_s"] {
                    assert!(joined.contains(needle), "missing {needle} in {joined}");
                }
            }
            other => panic!("{other}"),
        }
        match RunConfig::from_toml("total_steps = 50\n[compute]\nlocal_iters = 5\n").unwrap_err() {
            Error::Violations(v) => {
                let joined = v.join("\n");
                for needle in ["t_max_s", "scmr.grad_bound", "scmr.sigma", "scmr.init_gap"] {
                    assert!(joined.contains(needle), "missing {needle} in {joined}");
                }
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::from_toml(MINIMAL).unwrap();
        cfg.scmr.sigma = Some(vec![0.5, 0.25]);
        cfg.timing.round_latency_s = Some(12.5);
        cfg.geometry.area_angles_rad = Some(vec![0.0, 0.7, 1.9, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }
}

//! Convergence-bound calculator and the staleness-control / mixing-ratio
//! (SC-MR) optimizer.
//!
//! Notation: `P = ρ^{(K+δ)/(K+1)}`, `r = ρ^{1/(K+1)}`, `b = r − 1`.

mod solver;

pub use solver::{
    alpha_for_m, alpha_tilde, bisect, f_prime, g1, g2, optimal_alpha, optimal_delta,
    optimal_delta_real, solve_scmr, staleness_feasible, staleness_feasible_exhaustive,
    valid_alpha_interval, AlphaBranch, AlphaSolution, BisectOptions, LatencyEnvelope,
    SolverReport,
};

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Error, Result};
use crate::flcore::train::schedule_gamma;

/// `m(α) = 4(1−α)(2α²−α+1) / (α(2α²−3α+3))`; `+∞` at `α = 0`.
pub fn m_alpha(alpha: f64) -> Result<f64> {
    if alpha == 0.0 {
        return Ok(f64::INFINITY);
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid_arg(format!("m(α) needs α in (0, 1], got {alpha}")));
    }
    Ok(m_alpha_unchecked(alpha))
}

pub(crate) fn m_alpha_unchecked(a: f64) -> f64 {
    4.0 * (1.0 - a) * (2.0 * a * a - a + 1.0) / (a * (2.0 * a * a - 3.0 * a + 3.0))
}

/// Drift-recursion constants for one `(α, δ)` choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kappas {
    pub kappa1: f64,
    pub kappa2: f64,
    /// `P = ρ^{(K+δ)/(K+1)}`.
    pub p: f64,
    /// `r = ρ^{1/(K+1)}`.
    pub r: f64,
    pub d1: f64,
    pub d2: f64,
}

/// `κ₁ = P(1−α)² + ρα²`, `κ₂ = D₁κ₁ + D₂(1−α)²` with
/// `D₁ = 4(E−1)²G² r/(r−1)²`, `D₂ = 4(E−1)²G² r/(r−1)`.
///
/// Requires `δ < K + 2`. `κ₁ < 1` is not checked here; see [`bound`].
pub fn kappas(alpha: f64, delta: usize, k: usize, e: usize, g: f64, rho: f64) -> Result<Kappas> {
    if k == 0 {
        return Err(invalid_arg("K must be >= 1"));
    }
    if delta >= k + 2 {
        return Err(Error::BoundValidity(format!(
            "delta = {delta} must be < K + 2 = {}",
            k + 2
        )));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(invalid_arg(format!("α must be in [0, 1), got {alpha}")));
    }
    if !(rho > 1.0) {
        return Err(invalid_arg(format!("ρ must be > 1, got {rho}")));
    }
    Ok(kappas_unchecked(alpha, delta, k, e, g, rho))
}

pub(crate) fn kappas_unchecked(alpha: f64, delta: usize, k: usize, e: usize, g: f64, rho: f64) -> Kappas {
    let kp1 = (k + 1) as f64;
    let p = rho.powf((k + delta) as f64 / kp1);
    let r = rho.powf(1.0 / kp1);
    let c = 4.0 * ((e as f64) - 1.0).powi(2) * g * g;
    let d1 = c * r / ((r - 1.0) * (r - 1.0));
    let d2 = c * r / (r - 1.0);
    let one_m = (1.0 - alpha) * (1.0 - alpha);
    let kappa1 = p * one_m + rho * alpha * alpha;
    let kappa2 = d1 * kappa1 + d2 * one_m;
    Kappas {
        kappa1,
        kappa2,
        p,
        r,
        d1,
        d2,
    }
}

/// Problem constants feeding the bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundParams {
    /// `L`.
    pub smoothness: f64,
    /// `μ`.
    pub strong_convexity: f64,
    /// `G`, bound on stochastic gradient norms.
    pub grad_bound: f64,
    /// `σ_j` for every client in area order; a single entry applies to all.
    pub sigma: Vec<f64>,
    /// `Γ`.
    pub gamma_noniid: f64,
    /// `E`.
    pub local_iters: usize,
    /// `K`.
    pub rounds_per_serve: usize,
    /// `R`, total local steps.
    pub total_steps: usize,
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// `N_i`.
    pub clients_per_area: Vec<usize>,
    /// `U_i`.
    pub participants_per_area: Vec<usize>,
    /// `𝔼‖w̄₁ − w*‖²`.
    pub init_gap: f64,
}

pub fn default_rho() -> f64 {
    1.5
}

/// `ζ₁, ζ₂, ζ₃` of the partial-participation bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Zetas {
    pub zeta1: f64,
    pub zeta2: f64,
    pub zeta3: f64,
}

impl BoundParams {
    pub fn num_areas(&self) -> usize {
        self.clients_per_area.len()
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if !(self.strong_convexity > 0.0) {
            v.push(format!("strong_convexity must be > 0, got {}", self.strong_convexity));
        }
        if !(self.smoothness >= self.strong_convexity) {
            v.push(format!(
                "smoothness must be >= strong_convexity, got {}",
                self.smoothness
            ));
        }
        if !(self.grad_bound >= 0.0) {
            v.push("grad_bound must be >= 0".into());
        }
        if !(self.gamma_noniid >= 0.0) {
            v.push("gamma_noniid must be >= 0".into());
        }
        if !(self.init_gap >= 0.0) {
            v.push("init_gap must be >= 0".into());
        }
        if self.local_iters == 0 {
            v.push("local_iters must be >= 1".into());
        }
        if self.rounds_per_serve == 0 {
            v.push("rounds_per_serve must be >= 1".into());
        }
        if self.total_steps == 0 {
            v.push("total_steps must be >= 1".into());
        }
        if !(self.rho > 1.0) {
            v.push(format!("rho must be > 1, got {}", self.rho));
        }
        if self.clients_per_area.is_empty() {
            v.push("clients_per_area must not be empty".into());
        }
        if self.participants_per_area.len() != self.clients_per_area.len() {
            v.push("participants_per_area must have one entry per area".into());
        }
        for (i, (&n, &u)) in self
            .clients_per_area
            .iter()
            .zip(&self.participants_per_area)
            .enumerate()
        {
            if n == 0 || u == 0 || u > n {
                v.push(format!("area {i}: need 1 <= U_i <= N_i, got U = {u}, N = {n}"));
            }
        }
        let total: usize = self.clients_per_area.iter().sum();
        if self.sigma.len() != 1 && self.sigma.len() != total {
            v.push(format!(
                "sigma needs 1 or {total} entries, got {}",
                self.sigma.len()
            ));
        }
        if self.sigma.iter().any(|s| !(*s >= 0.0)) {
            v.push("sigma entries must be >= 0".into());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Violations(v))
        }
    }

    /// `γ = max{8L/μ, E} − 1`.
    pub fn gamma(&self) -> f64 {
        schedule_gamma(self.strong_convexity, self.smoothness, self.local_iters)
    }

    /// `η_t = 5/(μ(γ+t))`.
    pub fn eta(&self, t: usize) -> f64 {
        5.0 / (self.strong_convexity * (self.gamma() + t as f64))
    }

    fn sigma_of(&self, client: usize) -> f64 {
        if self.sigma.len() == 1 {
            self.sigma[0]
        } else {
            self.sigma[client]
        }
    }

    /// `B = Σ_i Σ_{j∈N_i} σ_j²/(M N_i)² + 6LΓ`.
    pub fn b_constant(&self) -> f64 {
        let m = self.num_areas() as f64;
        let mut client = 0;
        let mut sum = 0.0;
        for &n in &self.clients_per_area {
            let denom = (m * n as f64).powi(2);
            for _ in 0..n {
                sum += self.sigma_of(client).powi(2) / denom;
                client += 1;
            }
        }
        sum + 6.0 * self.smoothness * self.gamma_noniid
    }

    /// `max_i (N_i − U_i) / (M U_i (N_i − 1))`; zero under full participation.
    pub fn sampling_term(&self) -> f64 {
        let m = self.num_areas() as f64;
        self.clients_per_area
            .iter()
            .zip(&self.participants_per_area)
            .map(|(&n, &u)| {
                if u >= n {
                    0.0
                } else {
                    (n - u) as f64 / (m * u as f64 * (n - 1) as f64)
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn full_participation(&self) -> bool {
        self.clients_per_area == self.participants_per_area
    }

    /// `b = ρ^{1/(K+1)} − 1`.
    pub fn b(&self) -> f64 {
        self.rho.powf(1.0 / (self.rounds_per_serve + 1) as f64) - 1.0
    }

    pub fn kappas(&self, delta: usize, alpha: f64) -> Result<Kappas> {
        kappas(
            alpha,
            delta,
            self.rounds_per_serve,
            self.local_iters,
            self.grad_bound,
            self.rho,
        )
    }

    /// `η_R` taken from the realized schedule.
    pub fn eta_final(&self) -> f64 {
        self.eta(self.total_steps)
    }
}

/// `ζ₁ = L/(μ(R+γ)) [25B/(8μ) + μ(γ+1)/2 · init_gap]`,
/// `ζ₂ = L[(1+b)/2 · samp + 1]`,
/// `ζ₃ = 2L(1+1/b)(E−1)²G² η_R² · samp`.
pub fn zetas(params: &BoundParams, eta_r: f64) -> Result<Zetas> {
    params.validate()?;
    let l = params.smoothness;
    let mu = params.strong_convexity;
    let gamma = params.gamma();
    let r = params.total_steps as f64;
    let b = params.b();
    let samp = params.sampling_term();
    let e1 = params.local_iters as f64 - 1.0;
    let zeta1 = l / (mu * (r + gamma))
        * (25.0 * params.b_constant() / (8.0 * mu) + mu * (gamma + 1.0) / 2.0 * params.init_gap);
    let zeta2 = l * ((1.0 + b) / 2.0 * samp + 1.0);
    let zeta3 = 2.0 * l * (1.0 + 1.0 / b) * e1 * e1 * params.grad_bound.powi(2) * eta_r * eta_r * samp;
    Ok(Zetas {
        zeta1,
        zeta2,
        zeta3,
    })
}

/// `1/(1−α) − α + 1/2`.
pub fn alpha_factor(alpha: f64) -> f64 {
    1.0 / (1.0 - alpha) - alpha + 0.5
}

fn checked_kappas(delta: usize, alpha: f64, params: &BoundParams) -> Result<Kappas> {
    let k = params.kappas(delta, alpha)?;
    if !(k.kappa1 < 1.0) {
        return Err(Error::BoundValidity(format!(
            "kappa1 = {:.6} >= 1 at delta = {delta}, alpha = {alpha}",
            k.kappa1
        )));
    }
    Ok(k)
}

/// Partial-participation bound
/// `f(δ, α) = ζ₁(1/(1−α) − α + 1/2) + ζ₂ κ₂/(1−κ₁) + ζ₃`.
pub fn bound(delta: usize, alpha: f64, params: &BoundParams) -> Result<f64> {
    let z = zetas(params, params.eta_final())?;
    let k = checked_kappas(delta, alpha, params)?;
    Ok(z.zeta1 * alpha_factor(alpha) + z.zeta2 * k.kappa2 / (1.0 - k.kappa1) + z.zeta3)
}

/// Full-participation bound
/// `ζ₁(1/(1−α) − α + 1/2) + L η_E² κ₂/(1−κ₁)`, with the drift term
/// `Q_{R−1} ≤ η_E² κ₂/(1−κ₁)`.
pub fn full_participation_bound(delta: usize, alpha: f64, params: &BoundParams) -> Result<f64> {
    let z = zetas(params, params.eta_final())?;
    let k = checked_kappas(delta, alpha, params)?;
    let eta_e = params.eta(params.local_iters);
    Ok(z.zeta1 * alpha_factor(alpha)
        + params.smoothness * eta_e * eta_e * k.kappa2 / (1.0 - k.kappa1))
}

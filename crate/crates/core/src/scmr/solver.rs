//! SC-MR solution: `δ*` from the latency envelope, `α̃` from the staleness
//! constraint, `α̇` from the first-order condition, `α* = min{α̇, α̃}`.

use serde::{Deserialize, Serialize};

use super::{
    alpha_factor, bound, kappas_unchecked, m_alpha_unchecked, zetas, BoundParams, Kappas, Zetas,
};
use crate::error::{invalid_arg, Error, Result};

/// Total training-time envelope and the slowest inter-area flight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyEnvelope {
    pub t_max_s: f64,
    pub max_fly_s: f64,
}

/// `(R−1)·max_fly/(E·T_max) − K`, before rounding.
pub fn optimal_delta_real(r: usize, e: usize, t_max: f64, max_fly: f64, k: usize) -> f64 {
    (r as f64 - 1.0) / (e as f64 * t_max) * max_fly - k as f64
}

/// Smallest integer `δ ≥ 1` meeting the latency envelope.
pub fn optimal_delta(r: usize, e: usize, t_max: f64, max_fly: f64, k: usize) -> Result<usize> {
    if e == 0 || r == 0 || !(t_max > 0.0) || !(max_fly > 0.0) {
        return Err(invalid_arg(format!(
            "optimal_delta needs positive inputs (R = {r}, E = {e}, T_max = {t_max}, max_fly = {max_fly})"
        )));
    }
    let v = optimal_delta_real(r, e, t_max, max_fly, k);
    // absorb rounding noise when the real value is an integer
    let nearest = v.round();
    let v = if (v - nearest).abs() <= 1e-9 * nearest.abs().max(1.0) {
        nearest
    } else {
        v
    };
    Ok(v.ceil().max(1.0) as usize)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BisectOptions {
    /// Stop once the bracket is no wider than this (0 runs to machine precision).
    pub width_tol: f64,
    /// Stop once `|f| ≤ value_tol`.
    pub value_tol: f64,
    pub max_iter: usize,
}

impl Default for BisectOptions {
    fn default() -> Self {
        Self {
            width_tol: 0.0,
            value_tol: 0.0,
            max_iter: 2000,
        }
    }
}

/// Root of `f` on `[lo, hi]`; `f(lo)` and `f(hi)` must not share a strict sign.
/// Returns the evaluated point with the smallest `|f|`.
pub fn bisect(
    mut f: impl FnMut(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    opts: &BisectOptions,
) -> Result<f64> {
    if !(lo <= hi) {
        return Err(invalid_arg(format!("bisection bracket [{lo}, {hi}] is empty")));
    }
    let f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::Numeric(format!(
            "no sign change on [{lo}, {hi}]: f = {f_lo:e}, {f_hi:e}"
        )));
    }
    let lo_sign = f_lo.signum();
    let (mut best, mut best_v) = if f_lo.abs() <= f_hi.abs() {
        (lo, f_lo.abs())
    } else {
        (hi, f_hi.abs())
    };
    for _ in 0..opts.max_iter {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = f(mid);
        if v.abs() < best_v || v.is_nan() && best_v.is_nan() {
            best = mid;
            best_v = v.abs();
        }
        if v.abs() <= opts.value_tol {
            return Ok(mid);
        }
        if v.signum() == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= opts.width_tol {
            break;
        }
    }
    Ok(best)
}

/// Unique `α ∈ (0, 1)` with `m(α) = target`, to machine precision.
pub fn alpha_for_m(target: f64) -> Result<f64> {
    if !(target > 0.0) || !target.is_finite() {
        return Err(Error::Infeasible(format!(
            "m(α) = {target} has no solution in (0, 1)"
        )));
    }
    let opts = BisectOptions {
        width_tol: 0.0,
        ..BisectOptions::default()
    };
    let a = bisect(
        |a| {
            if a == 0.0 {
                f64::INFINITY
            } else {
                m_alpha_unchecked(a) - target
            }
        },
        0.0,
        1.0,
        &opts,
    )?;
    Ok(a)
}

/// `α̃` solving `m(α̃) = δE(X−1)² / (X(KE+γ))`, `X = (K+δ)E + γ`, moved
/// down by a few ulps if needed so that [`staleness_feasible`] accepts it.
pub fn alpha_tilde(delta: usize, e: usize, k: usize, gamma: f64) -> Result<f64> {
    if delta == 0 || e == 0 {
        return Err(invalid_arg("alpha_tilde needs delta >= 1 and E >= 1"));
    }
    let x = ((k + delta) * e) as f64 + gamma;
    let rhs = (delta * e) as f64 * (x - 1.0).powi(2) / (x * ((k * e) as f64 + gamma));
    let mut a = alpha_for_m(rhs)?;
    let t0 = first_mix_index(delta, e, k);
    for _ in 0..64 {
        if a <= 0.0 || staleness_holds(delta, m_alpha_unchecked(a), e, gamma, t0) {
            break;
        }
        a = a.next_down();
    }
    Ok(a)
}

fn staleness_holds(delta: usize, m: f64, e: usize, gamma: f64, t: usize) -> bool {
    let s = t as f64 + gamma;
    let lhs = (delta * e) as f64;
    if m.is_infinite() {
        return true;
    }
    lhs <= m * (s + 1.0).powi(2) / (s * s + m * (s + 1.0))
}

fn first_mix_index(delta: usize, e: usize, k: usize) -> usize {
    ((k + delta) * e).saturating_sub(1)
}

/// Whether `δE ≤ m(α)(t+γ+1)²/((t+γ)² + m(α)(t+γ+1))` holds for every `t`
/// from the first mix event `(K+δ)E − 1` up to `R`. For `α ≤ 1/2` the
/// right-hand side is non-decreasing in `t`, so only the first index is
/// checked.
pub fn staleness_feasible(
    delta: usize,
    alpha: f64,
    e: usize,
    k: usize,
    gamma: f64,
    r: usize,
) -> bool {
    if delta == 0 || alpha <= 0.0 {
        return true;
    }
    let t0 = first_mix_index(delta, e, k);
    if t0 > r {
        return true;
    }
    let m = m_alpha_unchecked(alpha.min(1.0));
    if alpha <= 0.5 {
        staleness_holds(delta, m, e, gamma, t0)
    } else {
        (t0..=r).all(|t| staleness_holds(delta, m, e, gamma, t))
    }
}

/// Same as [`staleness_feasible`] but always checks every `t`.
pub fn staleness_feasible_exhaustive(
    delta: usize,
    alpha: f64,
    e: usize,
    k: usize,
    gamma: f64,
    r: usize,
) -> bool {
    if delta == 0 || alpha <= 0.0 {
        return true;
    }
    let m = m_alpha_unchecked(alpha.min(1.0));
    (first_mix_index(delta, e, k)..=r).all(|t| staleness_holds(delta, m, e, gamma, t))
}

/// `g₁(α) = −ρD₂α² + [(P+ρ)D₁ + (ρ+1)D₂]α − (PD₁ + D₂)`.
pub fn g1(alpha: f64, k: &Kappas, rho: f64) -> f64 {
    -rho * k.d2 * alpha * alpha + ((k.p + rho) * k.d1 + (rho + 1.0) * k.d2) * alpha
        - (k.p * k.d1 + k.d2)
}

/// `g₂(α) = (P+ρ)α² − 2Pα + P − 1`, equal to `κ₁ − 1`.
pub fn g2(alpha: f64, k: &Kappas, rho: f64) -> f64 {
    (k.p + rho) * alpha * alpha - 2.0 * k.p * alpha + k.p - 1.0
}

fn kappas_for(delta: usize, alpha: f64, params: &BoundParams) -> Kappas {
    kappas_unchecked(
        alpha,
        delta,
        params.rounds_per_serve,
        params.local_iters,
        params.grad_bound,
        params.rho,
    )
}

/// `∂f/∂α = ζ₁[1/(1−α)² − 1] + 2ζ₂ g₁(α)/g₂(α)²`.
pub fn f_prime(alpha: f64, delta: usize, params: &BoundParams) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid_arg(format!("f' needs α in (0, 1), got {alpha}")));
    }
    let z = zetas(params, params.eta_final())?;
    Ok(f_prime_with(alpha, delta, params, &z))
}

fn f_prime_with(alpha: f64, delta: usize, params: &BoundParams, z: &Zetas) -> f64 {
    let k = kappas_for(delta, alpha, params);
    let g2v = g2(alpha, &k, params.rho);
    z.zeta1 * (1.0 / ((1.0 - alpha) * (1.0 - alpha)) - 1.0)
        + 2.0 * z.zeta2 * g1(alpha, &k, params.rho) / (g2v * g2v)
}

/// Open interval of `α` on which `κ₁ < 1`, or `None` if it is empty.
pub fn valid_alpha_interval(delta: usize, params: &BoundParams) -> Option<(f64, f64)> {
    let k = kappas_for(delta, 0.0, params);
    let rho = params.rho;
    let disc = k.p * (1.0 - rho) + rho;
    if disc <= 0.0 {
        return None;
    }
    let s = disc.sqrt();
    Some(((k.p - s) / (k.p + rho), (k.p + s) / (k.p + rho)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaBranch {
    /// `f′` changes sign on the search interval; `α̇` is its root.
    Bisection,
    /// `f′(1/2) ≤ 0`, so `α̇ = 1/2`.
    Half,
    /// `f′` is negative up to the upper end of the `κ₁ < 1` region below 1/2.
    ValidEdge,
    /// No `α` satisfies both `κ₁ < 1` and the staleness limit; `α* = 0`.
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSolution {
    pub alpha_star: f64,
    pub alpha_dot: Option<f64>,
    pub alpha_tilde: f64,
    pub valid_interval: Option<(f64, f64)>,
    pub branch: AlphaBranch,
    pub f_prime_at_alpha_dot: Option<f64>,
    pub diagnostic: Option<String>,
}

impl AlphaSolution {
    fn infeasible(alpha_tilde: f64, valid_interval: Option<(f64, f64)>, why: String) -> Self {
        Self {
            alpha_star: 0.0,
            alpha_dot: None,
            alpha_tilde,
            valid_interval,
            branch: AlphaBranch::Infeasible,
            f_prime_at_alpha_dot: None,
            diagnostic: Some(why),
        }
    }
}

/// `α* = min{α̇, α̃}` for a fixed `δ`.
///
/// The search for `α̇` is restricted to the part of `(0, 1/2]` where `κ₁ < 1`;
/// `f′ → −∞` at the lower edge of that region.
pub fn optimal_alpha(delta: usize, params: &BoundParams) -> Result<AlphaSolution> {
    params.validate()?;
    let k = params.rounds_per_serve;
    let e = params.local_iters;
    let at = alpha_tilde(delta, e, k, params.gamma())?;
    if delta >= k + 2 {
        return Ok(AlphaSolution::infeasible(
            at,
            None,
            format!("delta = {delta} >= K + 2 = {}; the bound is not valid", k + 2),
        ));
    }
    let interval = valid_alpha_interval(delta, params);
    let (lo, hi) = match interval {
        Some(iv) => iv,
        None => {
            return Ok(AlphaSolution::infeasible(
                at,
                None,
                format!("kappa1 >= 1 for every alpha at delta = {delta}"),
            ))
        }
    };
    let upper = hi.min(0.5);
    if lo >= upper {
        return Ok(AlphaSolution::infeasible(
            at,
            interval,
            format!("kappa1 < 1 only for alpha in ({lo:.6}, {hi:.6}), above 1/2"),
        ));
    }
    if at <= lo {
        return Ok(AlphaSolution::infeasible(
            at,
            interval,
            format!(
                "staleness limit alpha_tilde = {at:.6} is at or below {lo:.6}, where kappa1 reaches 1"
            ),
        ));
    }
    let z = zetas(params, params.eta_final())?;
    let fp = |a: f64| f_prime_with(a, delta, params, &z);
    let fp_upper = fp(upper);
    let (alpha_dot, branch) = if fp_upper > 0.0 {
        let opts = BisectOptions {
            value_tol: 1e-10,
            ..BisectOptions::default()
        };
        let root = bisect(
            |a| if a <= lo { f64::NEG_INFINITY } else { fp(a) },
            lo,
            upper,
            &opts,
        )?;
        (root, AlphaBranch::Bisection)
    } else if upper == 0.5 {
        (0.5, AlphaBranch::Half)
    } else {
        (upper, AlphaBranch::ValidEdge)
    };
    Ok(AlphaSolution {
        alpha_star: alpha_dot.min(at),
        alpha_dot: Some(alpha_dot),
        alpha_tilde: at,
        valid_interval: interval,
        branch,
        f_prime_at_alpha_dot: Some(fp(alpha_dot)),
        diagnostic: None,
    })
}

/// Everything the solver derives for one parameter set, serialized as the
/// JSON solver report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub delta_star: usize,
    pub delta_star_real: f64,
    pub alpha_tilde: f64,
    pub alpha_dot: Option<f64>,
    pub alpha_star: f64,
    pub branch: AlphaBranch,
    pub valid_alpha_interval: Option<(f64, f64)>,
    pub f_prime_at_alpha_dot: Option<f64>,
    pub bound: Option<f64>,
    pub alpha_factor: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub zetas: Zetas,
    pub schedule_gamma: f64,
    pub b_constant: f64,
    pub staleness_feasible: bool,
    pub bound_valid: bool,
    pub rho: f64,
    /// `ρ ≤ min{1/α*, 1/(1−α*)}`.
    pub rho_admissible: bool,
    pub latency: LatencyEnvelope,
    pub diagnostics: Vec<String>,
}

pub fn solve_scmr(params: &BoundParams, envelope: &LatencyEnvelope) -> Result<SolverReport> {
    params.validate()?;
    let k = params.rounds_per_serve;
    let e = params.local_iters;
    let r = params.total_steps;
    let delta_star_real = optimal_delta_real(r, e, envelope.t_max_s, envelope.max_fly_s, k);
    let delta_star = optimal_delta(r, e, envelope.t_max_s, envelope.max_fly_s, k)?;
    let sol = optimal_alpha(delta_star, params)?;
    let alpha = sol.alpha_star;
    let mut diagnostics: Vec<String> = sol.diagnostic.iter().cloned().collect();
    let kap = kappas_for(delta_star, alpha, params);
    let z = zetas(params, params.eta_final())?;
    let bound_value = match bound(delta_star, alpha, params) {
        Ok(f) => Some(f),
        Err(err) => {
            diagnostics.push(err.to_string());
            None
        }
    };
    let gamma = params.gamma();
    let feasible = staleness_feasible(delta_star, alpha, e, k, gamma, r);
    if !feasible {
        diagnostics.push(format!(
            "staleness constraint violated at delta = {delta_star}, alpha = {alpha}"
        ));
    }
    let rho_admissible = alpha > 0.0 && params.rho <= (1.0 / alpha).min(1.0 / (1.0 - alpha));
    if !rho_admissible {
        diagnostics.push(format!(
            "rho = {} exceeds min(1/alpha, 1/(1-alpha)) at alpha = {alpha}",
            params.rho
        ));
    }
    if let (AlphaBranch::Bisection, Some(fp)) = (sol.branch, sol.f_prime_at_alpha_dot) {
        if fp.abs() > 1e-10 {
            diagnostics.push(format!(
                "|f'(alpha_dot)| = {:.3e} after bisection to machine precision",
                fp.abs()
            ));
        }
    }
    Ok(SolverReport {
        delta_star,
        delta_star_real,
        alpha_tilde: sol.alpha_tilde,
        alpha_dot: sol.alpha_dot,
        alpha_star: alpha,
        branch: sol.branch,
        valid_alpha_interval: sol.valid_interval,
        f_prime_at_alpha_dot: sol.f_prime_at_alpha_dot,
        bound: bound_value,
        alpha_factor: alpha_factor(alpha),
        kappa1: kap.kappa1,
        kappa2: kap.kappa2,
        zetas: z,
        schedule_gamma: gamma,
        b_constant: params.b_constant(),
        staleness_feasible: feasible,
        bound_valid: bound_value.is_some(),
        rho: params.rho,
        rho_admissible,
        latency: *envelope,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStreams;
    use crate::scmr::m_alpha;
    use crate::scmr::tests::reference_params;
    use rand::Rng;

    #[test]
    fn delta_star_examples() {
        assert_eq!(optimal_delta(101, 5, 10.0, 5.0, 3).unwrap(), 7);
        // real value exactly K → clamp to 1
        assert_eq!(optimal_delta(101, 5, 10.0, 1.5, 3).unwrap(), 1);
        // negative real value also clamps
        assert_eq!(optimal_delta(101, 5, 1000.0, 1.0, 3).unwrap(), 1);
        // rounding noise at an integer does not bump the ceiling
        assert_eq!(optimal_delta_real(8, 1, 0.3, 0.3, 1), 6.000000000000001);
        assert_eq!(optimal_delta(8, 1, 0.3, 0.3, 1).unwrap(), 6);
        assert!(optimal_delta(101, 5, 0.0, 1.0, 3).is_err());
    }

    #[test]
    fn delta_star_monotone() {
        let mut last = usize::MAX;
        for i in 1..200 {
            let t_max = i as f64;
            let d = optimal_delta(10_001, 5, t_max, 700.0, 3).unwrap();
            assert!(d <= last);
            last = d;
        }
        let mut last = 0;
        for i in 1..200 {
            let d = optimal_delta(10_001, 5, 5000.0, i as f64 * 10.0, 3).unwrap();
            assert!(d >= last);
            last = d;
        }
    }

    #[test]
    fn alpha_for_m_inverts() {
        assert_eq!(alpha_for_m(2.0).unwrap(), 0.5);
        let a = alpha_for_m(m_alpha(0.25).unwrap()).unwrap();
        assert!((a - 0.25).abs() < 1e-10);
        assert!(alpha_for_m(1e12).unwrap() < 1e-11);
        assert!(alpha_for_m(0.0).is_err());
    }

    #[test]
    fn alpha_tilde_matches_constraint_equality() {
        let at = alpha_tilde(2, 5, 3, 31.0).unwrap();
        let x = 25.0 + 31.0;
        let rhs = 10.0 * (x - 1.0) * (x - 1.0) / (x * 46.0);
        assert!((m_alpha(at).unwrap() - rhs).abs() < 1e-9);
    }

    #[test]
    fn f_prime_matches_central_differences() {
        let p = reference_params();
        for delta in 1..=3 {
            let (lo, _) = valid_alpha_interval(delta, &p).unwrap();
            let mut a = (lo + 0.01).max(0.05);
            while a < 0.45 {
                let h = 1e-6;
                let fd = (bound(delta, a + h, &p).unwrap() - bound(delta, a - h, &p).unwrap())
                    / (2.0 * h);
                let an = f_prime(a, delta, &p).unwrap();
                assert!(
                    (fd - an).abs() <= 1e-6 * an.abs().max(1.0),
                    "δ={delta} α={a}: {fd} vs {an}"
                );
                a += 1e-3;
            }
        }
    }

    #[test]
    fn g1_negative_at_zero_and_g2_is_kappa1_minus_one() {
        let p = reference_params();
        for delta in 1..=4 {
            let k0 = kappas_for(delta, 0.0, &p);
            assert!(g1(0.0, &k0, p.rho) < 0.0);
            for i in 1..10 {
                let a = i as f64 / 10.0;
                let k = kappas_for(delta, a, &p);
                assert!((g2(a, &k, p.rho) - (k.kappa1 - 1.0)).abs() < 1e-12);
            }
        }
    }

    fn grid_min(delta: usize, upper: f64, p: &BoundParams) -> Option<f64> {
        let mut best: Option<f64> = None;
        let n = (upper / 1e-4).floor() as usize;
        for i in 1..=n {
            if let Ok(f) = bound(delta, i as f64 * 1e-4, p) {
                best = Some(best.map_or(f, |b: f64| b.min(f)));
            }
        }
        best
    }

    #[test]
    fn optimal_alpha_beats_grid() {
        let mut p = reference_params();
        p.participants_per_area = vec![5, 5];
        for delta in 1..=2 {
            let sol = optimal_alpha(delta, &p).unwrap();
            if sol.branch == AlphaBranch::Infeasible {
                continue;
            }
            let f = bound(delta, sol.alpha_star, &p).unwrap();
            let g = grid_min(delta, sol.alpha_tilde.min(0.5), &p).unwrap();
            assert!(f <= g + 1e-6 * f.abs(), "{f} vs {g}");
        }
    }

    #[test]
    fn bisection_branch_reaches_tolerance() {
        // strong heterogeneity makes ζ₁ dominate and pushes α̇ inside (0, 1/2)
        let mut p = reference_params();
        p.gamma_noniid = 10.0;
        p.grad_bound = 0.1;
        p.participants_per_area = vec![5, 5];
        p.total_steps = 50;
        p.local_iters = 2;
        p.rounds_per_serve = 1;
        let sol = optimal_alpha(1, &p).unwrap();
        assert_eq!(sol.branch, AlphaBranch::Bisection, "{sol:?}");
        assert!(sol.f_prime_at_alpha_dot.unwrap().abs() <= 1e-10);
        assert!((sol.alpha_dot.unwrap() - 0.390432600155002).abs() < 1e-9);
    }

    #[test]
    fn half_branch_when_derivative_negative() {
        let mut p = reference_params();
        p.gamma_noniid = 0.0;
        p.sigma = vec![0.0];
        p.init_gap = 0.0;
        p.participants_per_area = vec![5, 5];
        let sol = optimal_alpha(1, &p).unwrap();
        if sol.alpha_tilde > 0.5 {
            assert_eq!(sol.branch, AlphaBranch::Half);
            assert_eq!(sol.alpha_star, 0.5);
        }
        // f′ < 0 everywhere means α̇ = 1/2 and α* follows the staleness limit
        assert!(sol.alpha_star == sol.alpha_tilde.min(0.5));
    }

    #[test]
    fn infeasible_reports_zero() {
        let mut p = reference_params();
        p.local_iters = 10;
        p.total_steps = 100;
        let sol = optimal_alpha(3, &p).unwrap();
        assert_eq!(sol.branch, AlphaBranch::Infeasible);
        assert_eq!(sol.alpha_star, 0.0);
        assert!(sol.diagnostic.is_some());
    }

    #[test]
    fn staleness_reduction_matches_exhaustive() {
        let mut rng = SeedStreams::new(99).stream("staleness", 0);
        for _ in 0..100 {
            let delta = rng.random_range(1..6);
            let e = rng.random_range(1..6);
            let k = rng.random_range(1..6);
            let gamma = rng.random_range(1.0..60.0f64).floor();
            let r = rng.random_range(50..600);
            let alpha = rng.random_range(0.001..0.5);
            assert_eq!(
                staleness_feasible(delta, alpha, e, k, gamma, r),
                staleness_feasible_exhaustive(delta, alpha, e, k, gamma, r),
                "δ={delta} E={e} K={k} γ={gamma} R={r} α={alpha}"
            );
        }
    }

    #[test]
    fn staleness_at_alpha_tilde_is_the_boundary() {
        let (delta, e, k, gamma) = (1, 2, 3, 15.0);
        let at = alpha_tilde(delta, e, k, gamma).unwrap();
        assert!(staleness_feasible(delta, at, e, k, gamma, 1000));
        assert!(staleness_feasible(delta, at - 1e-6, e, k, gamma, 1000));
        assert!(!staleness_feasible(delta, at + 1e-6, e, k, gamma, 1000));
        assert!(staleness_feasible(0, 0.5, e, k, gamma, 1000));

        let mut rng = SeedStreams::new(7).stream("alpha_tilde", 0);
        for _ in 0..500 {
            let delta = rng.random_range(1..8);
            let e = rng.random_range(1..11);
            let k = rng.random_range(1..11);
            let gamma = rng.random_range(1.0..1e5f64);
            let at = alpha_tilde(delta, e, k, gamma).unwrap().min(0.5);
            assert!(staleness_feasible(delta, at, e, k, gamma, 10_000), "δ={delta} E={e} K={k} γ={gamma}");
        }
    }

    #[test]
    fn report_serializes() {
        let p = reference_params();
        let env = LatencyEnvelope {
            t_max_s: 1e5,
            max_fly_s: 700.0,
        };
        let rep = solve_scmr(&p, &env).unwrap();
        let json = serde_json::to_string(&rep).unwrap();
        let back: SolverReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rep);
        assert_eq!(rep.delta_star, 1);
    }

    #[test]
    fn bisect_generic() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, &BisectOptions::default()).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-15);
        assert!(bisect(|x| x * x + 1.0, 0.0, 2.0, &BisectOptions::default()).is_err());
    }
}

//! Compute and radio latency of one global round.
//!
//! Free-space path loss with a fixed additional attenuation, parabolic
//! aperture gains on both ends, and a Shannon rate per dedicated sub-channel.
//! Small-scale fading is not modeled.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, invalid_config, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Uplink,
    Downlink,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkBudget {
    pub p_ue_w: f64,
    pub p_sat_w: f64,
    pub uplink_wavelength_m: f64,
    pub downlink_wavelength_m: f64,
    pub w_up_hz: f64,
    pub w_down_hz: f64,
    pub additional_loss_db: f64,
    pub noise_psd_w_per_hz: f64,
    pub sat_antenna_radius_m: f64,
    pub ue_antenna_radius_m: f64,
    pub aperture_efficiency: f64,
}

impl Default for LinkBudget {
    /// Ku-band defaults: 14 GHz up, 12 GHz down, 1 W / 5 W, 5 dB extra loss,
    /// 5 MHz per client.
    fn default() -> Self {
        Self {
            p_ue_w: 1.0,
            p_sat_w: 5.0,
            uplink_wavelength_m: SPEED_OF_LIGHT / 14e9,
            downlink_wavelength_m: SPEED_OF_LIGHT / 12e9,
            w_up_hz: 5e6,
            w_down_hz: 5e6,
            additional_loss_db: 5.0,
            noise_psd_w_per_hz: 1.38e-21,
            sat_antenna_radius_m: 0.48,
            ue_antenna_radius_m: 0.5,
            aperture_efficiency: 0.65,
        }
    }
}

impl LinkBudget {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("p_ue_w", self.p_ue_w),
            ("p_sat_w", self.p_sat_w),
            ("uplink_wavelength_m", self.uplink_wavelength_m),
            ("downlink_wavelength_m", self.downlink_wavelength_m),
            ("w_up_hz", self.w_up_hz),
            ("w_down_hz", self.w_down_hz),
            ("noise_psd_w_per_hz", self.noise_psd_w_per_hz),
            ("sat_antenna_radius_m", self.sat_antenna_radius_m),
            ("ue_antenna_radius_m", self.ue_antenna_radius_m),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid_config(format!("link.{name} must be > 0, got {v}")));
            }
        }
        if !(self.aperture_efficiency > 0.0 && self.aperture_efficiency <= 1.0) {
            return Err(invalid_config(format!(
                "link.aperture_efficiency must be in (0, 1], got {}",
                self.aperture_efficiency
            )));
        }
        if !self.additional_loss_db.is_finite() {
            return Err(invalid_config("link.additional_loss_db must be finite"));
        }
        Ok(())
    }

    /// Linear power attenuation from the additional-loss figure.
    pub fn additional_loss(&self) -> f64 {
        10f64.powf(-self.additional_loss_db / 10.0)
    }

    fn params(&self, direction: Direction) -> (f64, f64, f64) {
        match direction {
            Direction::Uplink => (self.p_ue_w, self.uplink_wavelength_m, self.w_up_hz),
            Direction::Downlink => (self.p_sat_w, self.downlink_wavelength_m, self.w_down_hz),
        }
    }

    /// Received signal-to-noise ratio (linear) at the given slant range.
    pub fn snr(&self, direction: Direction, distance_m: f64) -> Result<f64> {
        let (power, wavelength, bandwidth) = self.params(direction);
        let g_ue = antenna_gain(self.ue_antenna_radius_m, wavelength, self.aperture_efficiency)?;
        let g_sat = antenna_gain(self.sat_antenna_radius_m, wavelength, self.aperture_efficiency)?;
        let pl = path_loss(wavelength, distance_m)?;
        Ok(power * g_ue * g_sat * pl * self.additional_loss()
            / (self.noise_psd_w_per_hz * bandwidth))
    }
}

/// Free-space path loss `(λ / 4πd)²` as a power ratio.
pub fn path_loss(wavelength: f64, distance: f64) -> Result<f64> {
    if !(wavelength > 0.0) || !(distance > 0.0) {
        return Err(invalid_arg(format!(
            "path loss needs positive wavelength and distance, got {wavelength}, {distance}"
        )));
    }
    let r = wavelength / (4.0 * PI * distance);
    Ok(r * r)
}

/// Parabolic aperture gain `η (π D / λ)²` with `D = 2 · radius`.
pub fn antenna_gain(radius: f64, wavelength: f64, efficiency: f64) -> Result<f64> {
    if !(radius > 0.0) || !(wavelength > 0.0) || !(efficiency > 0.0) {
        return Err(invalid_arg(format!(
            "antenna gain needs positive radius, wavelength and efficiency, got {radius}, {wavelength}, {efficiency}"
        )));
    }
    let x = PI * 2.0 * radius / wavelength;
    Ok(efficiency * x * x)
}

/// Shannon rate in bit/s on one dedicated sub-channel.
pub fn link_rate(budget: &LinkBudget, direction: Direction, distance_m: f64) -> Result<f64> {
    let (power, _, bandwidth) = budget.params(direction);
    if !(power >= 0.0) || !(bandwidth > 0.0) || !(budget.noise_psd_w_per_hz > 0.0) {
        return Err(invalid_arg("link rate needs power >= 0, bandwidth > 0, noise > 0"));
    }
    let snr = budget.snr(direction, distance_m)?;
    Ok(bandwidth * (1.0 + snr).log2())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComputeProfile {
    /// Local iterations per round (`E`).
    pub local_iters: usize,
    pub batch_size: usize,
    /// Floating point work of one sample in one local iteration.
    pub flops_per_sample: f64,
    /// Per-client compute capability, FLOP/s. A single entry applies to all
    /// clients.
    pub client_flops: Vec<f64>,
    pub t_agg_s: f64,
}

impl Default for ComputeProfile {
    fn default() -> Self {
        Self {
            local_iters: 5,
            batch_size: 64,
            flops_per_sample: 1e9,
            client_flops: vec![15.11e12],
            t_agg_s: 0.0,
        }
    }
}

impl ComputeProfile {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid_config("compute.batch_size must be >= 1"));
        }
        if !(self.flops_per_sample > 0.0) {
            return Err(invalid_config("compute.flops_per_sample must be > 0"));
        }
        if self.client_flops.is_empty() {
            return Err(invalid_config("compute.client_flops must not be empty"));
        }
        if !(self.t_agg_s >= 0.0) {
            return Err(invalid_config("compute.t_agg_s must be >= 0"));
        }
        Ok(())
    }

    pub fn client_capability(&self, client: usize) -> f64 {
        if self.client_flops.len() == 1 {
            self.client_flops[0]
        } else {
            self.client_flops[client % self.client_flops.len()]
        }
    }
}

/// Time for `E` local iterations on one client.
pub fn local_compute_latency(profile: &ComputeProfile, client: usize) -> Result<f64> {
    let cap = profile.client_capability(client);
    if !(cap > 0.0) {
        return Err(invalid_config(format!(
            "client {client} has non-positive compute capability {cap}"
        )));
    }
    Ok(profile.local_iters as f64 * profile.batch_size as f64 * profile.flops_per_sample / cap)
}

/// Latency of one global round in one area: the slowest participant's
/// compute, upload and download, plus the satellite aggregation time.
///
/// `participants` and `distances_m` are parallel slices.
pub fn round_latency(
    profile: &ComputeProfile,
    budget: &LinkBudget,
    participants: &[usize],
    distances_m: &[f64],
    model_bits: f64,
) -> Result<f64> {
    if participants.is_empty() {
        return Err(invalid_arg("round latency needs at least one participant"));
    }
    if participants.len() != distances_m.len() {
        return Err(invalid_arg("participants and distances differ in length"));
    }
    let mut worst = 0.0f64;
    for (&client, &d) in participants.iter().zip(distances_m) {
        let up = link_rate(budget, Direction::Uplink, d)?;
        let down = link_rate(budget, Direction::Downlink, d)?;
        let t = local_compute_latency(profile, client)? + model_bits / up + model_bits / down;
        worst = worst.max(t);
    }
    Ok(worst + profile.t_agg_s)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LAMBDA_UP: f64 = SPEED_OF_LIGHT / 14e9;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn path_loss_at_550_km() {
        let pl = path_loss(LAMBDA_UP, 550e3).unwrap();
        assert!(rel(pl, 9.599314651953872e-18) < 1e-12, "{pl}");
        assert!((10.0 * pl.log10() + 170.177_597_725_333).abs() < 1e-9);
    }

    #[test]
    fn path_loss_inverse_square_and_fixed_point() {
        let a = path_loss(LAMBDA_UP, 1e5).unwrap();
        let b = path_loss(LAMBDA_UP, 2e5).unwrap();
        assert!(rel(b, a / 4.0) < 1e-14);
        let d = LAMBDA_UP / (4.0 * PI);
        assert!((path_loss(LAMBDA_UP, d).unwrap() - 1.0).abs() < 1e-15);
        assert!(path_loss(0.0, 1.0).is_err());
        assert!(path_loss(1.0, -1.0).is_err());
    }

    #[test]
    fn antenna_gain_examples() {
        let g = antenna_gain(0.5, LAMBDA_UP, 0.65).unwrap();
        assert!(rel(g, 13_990.323_843_986_27) < 1e-12);
        let g = antenna_gain(0.48, LAMBDA_UP, 0.65).unwrap();
        assert!(rel(g, 12893.482454617748) < 1e-12);
        let lam = 0.03;
        let g = antenna_gain(lam / PI / 2.0, lam, 1.0).unwrap();
        assert!((g - 1.0).abs() < 1e-14);
        assert!(antenna_gain(0.0, lam, 1.0).is_err());
    }

    #[test]
    fn uplink_rate_with_default_budget() {
        let r = link_rate(&LinkBudget::default(), Direction::Uplink, 550e3).unwrap();
        assert!(rel(r, 81380504.95016374) < 1e-10, "{r}");
        let d = link_rate(&LinkBudget::default(), Direction::Downlink, 550e3).unwrap();
        assert!(rel(d, 90766155.05805773) < 1e-10, "{d}");
    }

    #[test]
    fn rate_vanishes_with_power() {
        let mut b = LinkBudget {
            p_ue_w: 1e-30,
            ..Default::default()
        };
        let r = link_rate(&b, Direction::Uplink, 550e3).unwrap();
        assert!(r < 1e-10);
        b.p_ue_w = 0.0;
        assert_eq!(link_rate(&b, Direction::Uplink, 550e3).unwrap(), 0.0);
    }

    #[test]
    fn doubling_bandwidth_less_than_doubles_rate() {
        let b = LinkBudget::default();
        let r1 = link_rate(&b, Direction::Uplink, 550e3).unwrap();
        let mut b2 = b.clone();
        b2.w_up_hz *= 2.0;
        let r2 = link_rate(&b2, Direction::Uplink, 550e3).unwrap();
        assert!(r2 > r1 && r2 < 2.0 * r1);
    }

    #[test]
    fn rate_monotone_in_distance_and_power() {
        let b = LinkBudget::default();
        let mut last = f64::INFINITY;
        for km in (300..3000).step_by(50) {
            let r = link_rate(&b, Direction::Uplink, km as f64 * 1e3).unwrap();
            assert!(r < last);
            last = r;
        }
        let mut last = 0.0;
        for p in [0.1, 0.5, 1.0, 2.0, 10.0] {
            let mut b = b.clone();
            b.p_ue_w = p;
            let r = link_rate(&b, Direction::Uplink, 550e3).unwrap();
            assert!(r > last);
            last = r;
        }
    }

    #[test]
    fn snr_in_decibels_matches_linear_scale() {
        let b = LinkBudget::default();
        let d = 550e3;
        let lam = b.uplink_wavelength_m;
        let db = |x: f64| 10.0 * x.log10();
        let total_db = db(b.p_ue_w)
            + db(antenna_gain(b.ue_antenna_radius_m, lam, b.aperture_efficiency).unwrap())
            + db(antenna_gain(b.sat_antenna_radius_m, lam, b.aperture_efficiency).unwrap())
            + db(path_loss(lam, d).unwrap())
            - b.additional_loss_db
            - db(b.noise_psd_w_per_hz)
            - db(b.w_up_hz);
        let linear = b.snr(Direction::Uplink, d).unwrap();
        assert!(rel(10f64.powf(total_db / 10.0), linear) < 1e-9);
        assert!(rel(linear, 79357.71198109633) < 1e-10);
    }

    #[test]
    fn local_latency_examples() {
        let p = ComputeProfile::default();
        let t = local_compute_latency(&p, 0).unwrap();
        assert!(rel(t, 0.02117802779616148) < 1e-12);
        let mut zero = p.clone();
        zero.local_iters = 0;
        assert_eq!(local_compute_latency(&zero, 0).unwrap(), 0.0);
        let mut fast = p.clone();
        fast.client_flops = vec![2.0 * 15.11e12];
        assert!(rel(local_compute_latency(&fast, 0).unwrap(), t / 2.0) < 1e-14);
        let mut broken = p.clone();
        broken.client_flops = vec![0.0];
        assert!(local_compute_latency(&broken, 0).is_err());
    }

    #[test]
    fn round_latency_composition() {
        let p = ComputeProfile::default();
        let b = LinkBudget::default();
        let q = 8e7;
        let one = round_latency(&p, &b, &[0], &[550e3], q).unwrap();
        let up = link_rate(&b, Direction::Uplink, 550e3).unwrap();
        let down = link_rate(&b, Direction::Downlink, 550e3).unwrap();
        let local = local_compute_latency(&p, 0).unwrap();
        assert_eq!(one, local + q / up + q / down + p.t_agg_s);
        let two = round_latency(&p, &b, &[0, 1], &[550e3, 550e3], q).unwrap();
        assert_eq!(one, two);
        let four = round_latency(&p, &b, &[0, 1, 2, 3], &[550e3; 4], q).unwrap();
        assert!(rel(four, 1.8856002427181423) < 1e-10, "{four}");
        assert!(round_latency(&p, &b, &[], &[], q).is_err());
    }

    #[test]
    fn round_latency_grows_with_any_distance() {
        let p = ComputeProfile::default();
        let b = LinkBudget::default();
        let base = round_latency(&p, &b, &[0, 1, 2], &[550e3, 600e3, 700e3], 1e7).unwrap();
        for i in 0..3 {
            let mut d = vec![550e3, 600e3, 700e3];
            d[i] += 500e3;
            let t = round_latency(&p, &b, &[0, 1, 2], &d, 1e7).unwrap();
            assert!(t >= base);
        }
    }

    #[test]
    fn budget_validation() {
        let mut b = LinkBudget::default();
        assert!(b.validate().is_ok());
        b.w_up_hz = -5.0;
        assert!(b.validate().is_err());
        let b = LinkBudget {
            aperture_efficiency: 1.5,
            ..Default::default()
        };
        assert!(b.validate().is_err());
    }
}

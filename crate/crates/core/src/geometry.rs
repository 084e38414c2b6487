//! Constellation kinematics for a single circular orbit.
//!
//! Areas sit on the ground track of one orbit. Satellites are evenly spaced,
//! so every satellite serves an area for the same window (nearest
//! association), and the store-carry-forward satellite needs a fixed flight
//! time between consecutive areas. Earth rotation is ignored.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, invalid_config, Result};

pub const EARTH_RADIUS_M: f64 = 6_371e3;
pub const EARTH_MU: f64 = 3.986e14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstellationGeometry {
    pub altitude_m: f64,
    pub sats_per_orbit: usize,
    /// Angular positions (radians) of the areas along the ground track,
    /// strictly increasing in `[0, 2π)`.
    pub area_angles: Vec<f64>,
    pub earth_radius_m: f64,
    pub gravitational_parameter: f64,
}

impl ConstellationGeometry {
    /// `num_areas` areas equally spaced around the orbit, starting at angle 0.
    pub fn evenly_spaced(altitude_m: f64, sats_per_orbit: usize, num_areas: usize) -> Self {
        let area_angles = (0..num_areas)
            .map(|i| TAU * i as f64 / num_areas as f64)
            .collect();
        Self {
            altitude_m,
            sats_per_orbit,
            area_angles,
            earth_radius_m: EARTH_RADIUS_M,
            gravitational_parameter: EARTH_MU,
        }
    }

    pub fn num_areas(&self) -> usize {
        self.area_angles.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.altitude_m > 0.0) {
            return Err(invalid_config(format!(
                "geometry.altitude_m must be > 0, got {}",
                self.altitude_m
            )));
        }
        if !(self.earth_radius_m > 0.0) || !(self.gravitational_parameter > 0.0) {
            return Err(invalid_config(
                "geometry.earth_radius_m and gravitational_parameter must be > 0",
            ));
        }
        if self.sats_per_orbit == 0 {
            return Err(invalid_config("geometry.sats_per_orbit must be >= 1"));
        }
        let m = self.num_areas();
        if m < 2 {
            return Err(invalid_config(format!(
                "geometry needs at least 2 areas, got {m}"
            )));
        }
        if m > self.sats_per_orbit {
            return Err(invalid_config(format!(
                "geometry has {m} areas but only {} satellites per orbit",
                self.sats_per_orbit
            )));
        }
        for (i, &a) in self.area_angles.iter().enumerate() {
            if !(0.0..TAU).contains(&a) {
                return Err(invalid_config(format!(
                    "geometry.area_angles[{i}] = {a} outside [0, 2π)"
                )));
            }
        }
        if self.area_angles.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid_config(
                "geometry.area_angles must be strictly increasing",
            ));
        }
        Ok(())
    }

    /// Kepler period of the circular orbit in seconds.
    pub fn orbital_period(&self) -> Result<f64> {
        orbital_period(
            self.altitude_m,
            self.earth_radius_m,
            self.gravitational_parameter,
        )
    }

    /// Serving window of one satellite over one area.
    pub fn serve_duration(&self) -> Result<f64> {
        if self.sats_per_orbit == 0 {
            return Err(invalid_config("geometry.sats_per_orbit must be >= 1"));
        }
        Ok(self.orbital_period()? / self.sats_per_orbit as f64)
    }

    /// Flight time from area `i` to area `i + 1` (0-based, wrapping at the last
    /// area back to the first).
    pub fn fly_time(&self, i: usize) -> Result<f64> {
        let m = self.num_areas();
        if i >= m {
            return Err(invalid_arg(format!(
                "area index {i} out of range for {m} areas"
            )));
        }
        let gap = self.angular_gap(i);
        Ok(gap / TAU * self.orbital_period()?)
    }

    /// Angular gap between area `i` and its successor on the ring.
    fn angular_gap(&self, i: usize) -> f64 {
        let m = self.num_areas();
        let from = self.area_angles[i];
        let to = self.area_angles[(i + 1) % m];
        let gap = to - from;
        if gap > 0.0 {
            gap
        } else {
            gap + TAU
        }
    }

    /// Flight times for every ring edge, in area order.
    pub fn fly_times(&self) -> Result<Vec<f64>> {
        (0..self.num_areas()).map(|i| self.fly_time(i)).collect()
    }

    /// Time for a satellite to travel forward along the track from angle
    /// `from` to angle `to`.
    pub fn travel_time(&self, from: f64, to: f64) -> Result<f64> {
        let gap = (to - from).rem_euclid(TAU);
        Ok(gap / TAU * self.orbital_period()?)
    }

    pub fn serve_plan(&self, round_latency: f64) -> Result<ServePlan> {
        self.validate()?;
        let serve_duration_s = self.serve_duration()?;
        Ok(ServePlan {
            serve_duration_s,
            fly_time_s: self.fly_times()?,
            rounds_per_serve: rounds_per_serve(serve_duration_s, round_latency)?,
        })
    }
}

/// Serving windows and flight times derived from a geometry and a steady-state
/// round latency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServePlan {
    pub serve_duration_s: f64,
    /// Entry `i` is the flight time from area `i` to area `i + 1`.
    pub fly_time_s: Vec<f64>,
    /// `K`: global rounds one satellite completes per area visit.
    pub rounds_per_serve: usize,
}

impl ServePlan {
    pub fn max_fly(&self) -> f64 {
        self.fly_time_s.iter().copied().fold(0.0, f64::max)
    }

    /// Flight time into area `i` from its ring predecessor.
    pub fn fly_into(&self, i: usize) -> f64 {
        let m = self.fly_time_s.len();
        self.fly_time_s[(i + m - 1) % m]
    }
}

pub fn orbital_period(altitude_m: f64, earth_radius_m: f64, mu: f64) -> Result<f64> {
    if !(altitude_m >= 0.0) {
        return Err(invalid_config(format!(
            "altitude must be non-negative, got {altitude_m}"
        )));
    }
    let a = earth_radius_m + altitude_m;
    Ok(TAU * (a * a * a / mu).sqrt())
}

/// Number of whole rounds that fit in one serving window, clamped to at least
/// one so every visit performs an aggregation.
pub fn rounds_per_serve(serve_duration: f64, round_latency: f64) -> Result<usize> {
    if !(round_latency > 0.0) {
        return Err(invalid_config(format!(
            "round latency must be > 0, got {round_latency}"
        )));
    }
    let k = (serve_duration / round_latency).floor();
    if k < 1.0 {
        log::warn!(
            "serving window {serve_duration:.3} s shorter than one round ({round_latency:.3} s); clamping K to 1"
        );
        return Ok(1);
    }
    Ok(k as usize)
}

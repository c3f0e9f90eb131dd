use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Scalar distribution used throughout the fleet configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dist {
    Fixed { value: f64 },
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, std: f64 },
}

impl Dist {
    pub fn fixed(value: f64) -> Self {
        Dist::Fixed { value }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Dist::Fixed { value } => value,
            Dist::Uniform { low, high } => {
                if high > low {
                    rng.random_range(low..high)
                } else {
                    low
                }
            }
            Dist::Normal { mean, std } => {
                if std > 0.0 {
                    Normal::new(mean, std).expect("validated std").sample(rng)
                } else {
                    mean
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Dist::Fixed { value } => value,
            Dist::Uniform { low, high } => 0.5 * (low + high),
            Dist::Normal { mean, .. } => mean,
        }
    }

    /// Closed support interval; unbounded for the normal.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            Dist::Fixed { value } => (value, value),
            Dist::Uniform { low, high } => (low, high),
            Dist::Normal { std: 0.0, mean } => (mean, mean),
            Dist::Normal { .. } => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        let ok = match *self {
            Dist::Fixed { value } => value.is_finite(),
            Dist::Uniform { low, high } => low.is_finite() && high.is_finite() && low <= high,
            Dist::Normal { mean, std } => mean.is_finite() && std.is_finite() && std >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("{what}: malformed distribution {self:?}")))
        }
    }

    /// A per-EV daily distribution centred on `center` with spread `jitter`.
    fn around(center: f64, jitter: f64) -> Self {
        if jitter > 0.0 {
            Dist::Normal {
                mean: center,
                std: jitter,
            }
        } else {
            Dist::Fixed { value: center }
        }
    }
}

/// Fleet-level distributions from which individual EV profiles are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FleetConfig {
    pub battery_capacity: Dist,
    pub a_max_charge: Dist,
    pub a_max_discharge: Dist,
    pub eta_charge: Dist,
    pub eta_discharge: Dist,
    /// Distribution of each EV's habitual arrival hour.
    pub arrival_hour: Dist,
    pub arrival_jitter: f64,
    pub departure_hour: Dist,
    pub departure_jitter: f64,
    /// Distribution of each EV's habitual trip energy (kWh).
    pub trip_energy: Dist,
    pub trip_energy_jitter: f64,
    /// SoC at the start of the day, before the inbound trip.
    pub initial_soc: Dist,
    pub soc_target: Dist,
    pub w_soc: f64,
}

impl Default for FleetConfig {
    fn default() -> Self {
        Self {
            battery_capacity: Dist::Uniform {
                low: 40.0,
                high: 75.0,
            },
            a_max_charge: Dist::Uniform { low: 2.5, high: 4.0 },
            a_max_discharge: Dist::Uniform { low: 2.5, high: 4.0 },
            eta_charge: Dist::fixed(0.95),
            eta_discharge: Dist::fixed(0.95),
            arrival_hour: Dist::Normal { mean: 8.0, std: 1.0 },
            arrival_jitter: 0.5,
            departure_hour: Dist::Normal {
                mean: 18.0,
                std: 1.0,
            },
            departure_jitter: 0.5,
            trip_energy: Dist::Uniform { low: 4.0, high: 10.0 },
            trip_energy_jitter: 1.5,
            initial_soc: Dist::Uniform {
                low: 0.6,
                high: 0.85,
            },
            soc_target: Dist::Uniform {
                low: 0.6,
                high: 0.8,
            },
            w_soc: 0.5,
        }
    }
}

impl FleetConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, d) in [
            ("battery_capacity", &self.battery_capacity),
            ("a_max_charge", &self.a_max_charge),
            ("a_max_discharge", &self.a_max_discharge),
            ("eta_charge", &self.eta_charge),
            ("eta_discharge", &self.eta_discharge),
            ("arrival_hour", &self.arrival_hour),
            ("departure_hour", &self.departure_hour),
            ("trip_energy", &self.trip_energy),
            ("initial_soc", &self.initial_soc),
            ("soc_target", &self.soc_target),
        ] {
            d.validate(name)?;
        }
        for (name, j) in [
            ("arrival_jitter", self.arrival_jitter),
            ("departure_jitter", self.departure_jitter),
            ("trip_energy_jitter", self.trip_energy_jitter),
        ] {
            if !(j >= 0.0 && j.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be >= 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.w_soc) {
            return Err(Error::InvalidConfig("w_soc must lie in [0, 1]".into()));
        }
        let (_, dep_hi) = self.departure_hour.support();
        let (arr_lo, _) = self.arrival_hour.support();
        if dep_hi.round().min(23.0) <= arr_lo.round().max(0.0)
            && self.departure_jitter == 0.0
            && self.arrival_jitter == 0.0
        {
            return Err(Error::InvalidConfig(format!(
                "departure hour (at most {dep_hi}) can never exceed arrival hour (at least {arr_lo})"
            )));
        }
        Ok(())
    }
}

/// Static parameters and behavioural distributions of one EV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvProfile {
    pub battery_capacity: f64,
    pub a_max_charge: f64,
    pub a_max_discharge: f64,
    pub eta_charge: f64,
    pub eta_discharge: f64,
    pub arrival_hour_dist: Dist,
    pub departure_hour_dist: Dist,
    pub trip_energy_dist: Dist,
    pub initial_soc_dist: Dist,
    pub soc_target: f64,
    pub w_soc: f64,
}

/// One EV's sampled plan for a single day.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DaySchedule {
    /// Hour at which the EV plugs in, in `[0, 22]`.
    pub arrival: usize,
    /// Hour at which it leaves, in `[arrival + 1, 23]`.
    pub departure: usize,
    pub trip_energy: f64,
    pub soc_start: f64,
}

impl EvProfile {
    pub fn sample_day<R: Rng + ?Sized>(&self, rng: &mut R) -> DaySchedule {
        let arrival = self.arrival_hour_dist.sample(rng).round().clamp(0.0, 22.0) as usize;
        let departure = self
            .departure_hour_dist
            .sample(rng)
            .round()
            .clamp(arrival as f64 + 1.0, 23.0) as usize;
        let trip_energy = self.trip_energy_dist.sample(rng).max(0.0);
        let soc_start = self.initial_soc_dist.sample(rng).clamp(0.0, 1.0);
        DaySchedule {
            arrival,
            departure,
            trip_energy,
            soc_start,
        }
    }

    /// SoC on arrival after the inbound trip.
    pub fn arrival_soc(&self, day: &DaySchedule) -> f64 {
        (day.soc_start - day.trip_energy / self.battery_capacity).clamp(0.0, 1.0)
    }
}

pub fn sample_ev_profile<R: Rng + ?Sized>(rng: &mut R, fleet: &FleetConfig) -> Result<EvProfile> {
    fleet.validate()?;
    let positive = |name: &str, v: f64| {
        if v > 0.0 {
            Ok(v)
        } else {
            Err(Error::InvalidConfig(format!("sampled {name} = {v} must be > 0")))
        }
    };
    let battery_capacity = positive("battery_capacity", fleet.battery_capacity.sample(rng))?;
    let a_max_charge = positive("a_max_charge", fleet.a_max_charge.sample(rng))?;
    let a_max_discharge = positive("a_max_discharge", fleet.a_max_discharge.sample(rng))?;
    let eta_charge = fleet.eta_charge.sample(rng).clamp(1e-3, 1.0);
    let eta_discharge = fleet.eta_discharge.sample(rng).clamp(1e-3, 1.0);
    let arrival = fleet.arrival_hour.sample(rng);
    let departure = fleet.departure_hour.sample(rng);
    let trip = fleet.trip_energy.sample(rng).max(0.0);
    let soc_target = fleet.soc_target.sample(rng).clamp(0.0, 1.0);
    Ok(EvProfile {
        battery_capacity,
        a_max_charge,
        a_max_discharge,
        eta_charge,
        eta_discharge,
        arrival_hour_dist: Dist::around(arrival, fleet.arrival_jitter),
        departure_hour_dist: Dist::around(departure, fleet.departure_jitter),
        trip_energy_dist: Dist::around(trip, fleet.trip_energy_jitter),
        initial_soc_dist: fleet.initial_soc,
        soc_target,
        w_soc: fleet.w_soc,
    })
}

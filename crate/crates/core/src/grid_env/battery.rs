//! Battery and power-balance physics shared by the environment and the
//! oracle predictors of the global model.

use serde::{Deserialize, Serialize};

use super::fleet::EvProfile;
use crate::{Error, Result};

/// Live state of one EV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvState {
    pub soc: f64,
    pub plugged: bool,
    /// Hours until scheduled departure; zero when away.
    pub t_etd: f64,
    pub departed_this_episode: bool,
}

impl EvState {
    pub fn away(soc: f64) -> Self {
        Self {
            soc,
            plugged: false,
            t_etd: 0.0,
            departed_this_episode: false,
        }
    }
}

/// Outcome of applying one action to a battery.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryStep {
    pub state: EvState,
    /// Grid-side power actually exchanged (kW, positive = charging).
    pub realized: f64,
}

/// Applies grid-side power `a` (kW, positive = charging) for `dt` hours.
/// When the SoC clamp binds, the realised flow shrinks so that no energy is
/// created or lost beyond the conversion efficiency. Unplugged EVs exchange
/// nothing.
pub fn soc_update(ev: &EvState, profile: &EvProfile, a: f64, dt: f64) -> Result<BatteryStep> {
    if !a.is_finite() {
        return Err(Error::NonFiniteAction { agent: 0, value: a });
    }
    if !ev.plugged || a == 0.0 {
        return Ok(BatteryStep {
            state: *ev,
            realized: 0.0,
        });
    }
    let cap = profile.battery_capacity;
    let mut next = *ev;
    let realized = if a > 0.0 {
        let soc = ev.soc + profile.eta_charge * a * dt / cap;
        if soc > 1.0 {
            next.soc = 1.0;
            (1.0 - ev.soc) * cap / (profile.eta_charge * dt)
        } else {
            next.soc = soc;
            a
        }
    } else {
        let soc = ev.soc - (-a / profile.eta_discharge) * dt / cap;
        if soc < 0.0 {
            next.soc = 0.0;
            -ev.soc * cap * profile.eta_discharge / dt
        } else {
            next.soc = soc;
            a
        }
    };
    Ok(BatteryStep {
        state: next,
        realized,
    })
}

/// Supply/demand split for one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Balance {
    pub net_demand: f64,
    pub renewable_used: f64,
    pub p_grid: f64,
    pub curtailment: f64,
}

/// Serves demand renewable-first, then from the main grid. The main grid never
/// absorbs power: surplus renewable is curtailed, surplus EV discharge is lost.
pub fn balance(base_load: f64, renewable_available: f64, total_charge: f64, total_discharge: f64) -> Balance {
    let net_demand = base_load + total_charge - total_discharge;
    let served = net_demand.max(0.0);
    let renewable_used = renewable_available.min(served);
    Balance {
        net_demand,
        renewable_used,
        p_grid: (served - renewable_used).max(0.0),
        curtailment: renewable_available - renewable_used,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_env::fleet::Dist;

    fn profile(cap: f64, eta: f64) -> EvProfile {
        EvProfile {
            battery_capacity: cap,
            a_max_charge: 10.0,
            a_max_discharge: 10.0,
            eta_charge: eta,
            eta_discharge: eta,
            arrival_hour_dist: Dist::fixed(8.0),
            departure_hour_dist: Dist::fixed(17.0),
            trip_energy_dist: Dist::fixed(0.0),
            initial_soc_dist: Dist::fixed(0.5),
            soc_target: 0.8,
            w_soc: 0.5,
        }
    }

    fn plugged(soc: f64) -> EvState {
        EvState {
            soc,
            plugged: true,
            t_etd: 5.0,
            departed_this_episode: false,
        }
    }

    #[test]
    fn charging_adds_energy() {
        let s = soc_update(&plugged(0.5), &profile(50.0, 1.0), 5.0, 1.0).unwrap();
        assert!((s.state.soc - 0.6).abs() < 1e-12);
        assert_eq!(s.realized, 5.0);
    }

    #[test]
    fn zero_flow_is_identity() {
        let s = soc_update(&plugged(0.37), &profile(50.0, 0.95), 0.0, 1.0).unwrap();
        assert_eq!(s.state.soc, 0.37);
        assert_eq!(s.realized, 0.0);
    }

    #[test]
    fn full_clamp_limits_realized_energy() {
        let s = soc_update(&plugged(0.99), &profile(50.0, 1.0), 5.0, 1.0).unwrap();
        assert_eq!(s.state.soc, 1.0);
        assert!((s.realized * 1.0 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_clamp_limits_discharge() {
        let s = soc_update(&plugged(0.02), &profile(50.0, 0.9), -5.0, 1.0).unwrap();
        assert_eq!(s.state.soc, 0.0);
        assert!((s.realized + 0.02 * 50.0 * 0.9).abs() < 1e-12);
    }

    #[test]
    fn non_finite_action_is_rejected() {
        assert!(soc_update(&plugged(0.5), &profile(50.0, 1.0), f64::NAN, 1.0).is_err());
    }

    #[test]
    fn balance_cases() {
        let b = balance(10.0, 4.0, 0.0, 0.0);
        assert_eq!((b.p_grid, b.renewable_used), (6.0, 4.0));
        let b = balance(0.0, 5.0, 0.0, 0.0);
        assert_eq!((b.p_grid, b.renewable_used, b.curtailment), (0.0, 0.0, 5.0));
        let b = balance(10.0, 4.0, 0.0, 3.0);
        assert_eq!(b.p_grid, 3.0);
    }
}

//! Hourly discrete-event simulation of a local distribution grid: base load,
//! one renewable source, the main (non-renewable) grid, a time-of-use tariff,
//! and a fleet of plug-in EVs.

mod battery;
mod fleet;
mod pricing;
mod profiles;

use std::collections::VecDeque;
use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use battery::{balance, soc_update, Balance, BatteryStep, EvState};
pub use fleet::{sample_ev_profile, DaySchedule, Dist, EvProfile, FleetConfig};
pub use pricing::{PricePeriod, PricingSchedule};
pub use profiles::{load_hourly_trace, ExogenousProfile, ProfileShape};

use crate::{Error, Result};

/// One step is one hour; one episode is one day.
pub const DT_HOURS: f64 = 1.0;
pub const STEPS_PER_EPISODE: usize = 24;
pub const OBS_DIM: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub base_load: ExogenousProfile,
    pub renewable: ExogenousProfile,
    pub pricing: PricingSchedule,
    /// Optional `hour,kW` CSV overriding the base-load shape.
    pub base_load_trace: Option<PathBuf>,
    /// Optional `hour,kW` CSV overriding the renewable shape.
    pub renewable_trace: Option<PathBuf>,
    /// Observation scale for base load (kW).
    pub load_norm: f64,
    /// Observation scale for renewable availability (kW).
    pub renewable_norm: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            base_load: ExogenousProfile::default_base_load(),
            renewable: ExogenousProfile::default_renewable(),
            pricing: PricingSchedule::default(),
            base_load_trace: None,
            renewable_trace: None,
            load_norm: 20.0,
            renewable_norm: 25.0,
        }
    }
}

impl GridConfig {
    /// Validates and swaps in any CSV traces.
    pub fn resolved(&self) -> Result<Self> {
        let mut cfg = self.clone();
        if let Some(p) = &self.base_load_trace {
            cfg.base_load = ExogenousProfile::from_csv(p, self.base_load.noise_std)?;
        }
        if let Some(p) = &self.renewable_trace {
            cfg.renewable = ExogenousProfile::from_csv(p, self.renewable.noise_std)?;
        }
        cfg.base_load.validate("base_load")?;
        cfg.renewable.validate("renewable")?;
        if !(cfg.load_norm > 0.0 && cfg.renewable_norm > 0.0) {
            return Err(Error::InvalidConfig("normalisation constants must be > 0".into()));
        }
        Ok(cfg)
    }
}

/// What agent `i` sees: its private battery state plus shared grid signals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub soc: f64,
    /// Hours until departure (0 when away).
    pub t_etd: f64,
    pub soc_target: f64,
    pub price_now: f64,
    /// Renewable availability divided by `renewable_norm`.
    pub renewable_available: f64,
    /// Base load divided by `load_norm`.
    pub base_load: f64,
    /// 1.0 when plugged in.
    pub plugged: f64,
}

impl Observation {
    pub fn is_plugged(&self) -> bool {
        self.plugged > 0.5
    }

    /// Network input vector; `t_etd` is expressed in days.
    pub fn features(&self) -> [f64; OBS_DIM] {
        [
            self.soc,
            self.t_etd / STEPS_PER_EPISODE as f64,
            self.soc_target,
            self.price_now,
            self.renewable_available,
            self.base_load,
            self.plugged,
        ]
    }
}

/// Shared grid fields that accompany the per-agent observations so that a
/// global snapshot can be rebuilt from stored experience.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridContext {
    pub hour: usize,
    pub base_load: f64,
    pub renewable_available: f64,
    /// Trailing p_grid values, oldest first.
    pub p_grid_window: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Departure {
    pub agent: usize,
    pub final_soc: f64,
    pub soc_target: f64,
}

impl Departure {
    pub fn success(&self) -> bool {
        self.final_soc >= self.soc_target
    }
}

/// Everything needed to score and log one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub price: f64,
    pub base_load: f64,
    pub renewable_available: f64,
    pub renewable_used: f64,
    pub p_grid: f64,
    pub curtailment: f64,
    pub total_charge: f64,
    pub total_discharge: f64,
    /// Realised grid-side flow per agent (kW, positive = charging).
    pub flows: Vec<f64>,
    /// Whether each agent was plugged in during the step.
    pub active: Vec<bool>,
    pub departures: Vec<Departure>,
    /// Trailing p_grid window including this step.
    pub p_grid_window: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds {
    pub min: f64,
    pub max: f64,
}

impl ActionBounds {
    pub fn of(profile: &EvProfile) -> Self {
        Self {
            min: -profile.a_max_discharge,
            max: profile.a_max_charge,
        }
    }

    pub fn clamp(&self, a: f64) -> f64 {
        a.clamp(self.min, self.max)
    }

    pub fn scale(&self) -> f64 {
        self.max.max(-self.min)
    }
}

#[derive(Debug, Clone)]
pub struct GridEnv {
    grid: GridConfig,
    profiles: Vec<EvProfile>,
    window_len: usize,
    evs: Vec<EvState>,
    days: Vec<DaySchedule>,
    hour: usize,
    base_load: f64,
    renewable: f64,
    window: VecDeque<f64>,
}

impl GridEnv {
    pub fn new(grid: &GridConfig, profiles: Vec<EvProfile>, window_len: usize) -> Result<Self> {
        if window_len == 0 {
            return Err(Error::InvalidConfig("p_grid window must hold at least one step".into()));
        }
        let grid = grid.resolved()?;
        let n = profiles.len();
        Ok(Self {
            base_load: grid.base_load.expected(0),
            renewable: grid.renewable.expected(0),
            grid,
            window_len,
            evs: profiles.iter().map(|_| EvState::away(0.0)).collect(),
            days: vec![
                DaySchedule {
                    arrival: 0,
                    departure: 1,
                    trip_energy: 0.0,
                    soc_start: 0.0,
                };
                n
            ],
            profiles,
            hour: 0,
            window: VecDeque::with_capacity(window_len),
        })
    }

    /// Starts a new day: samples each EV's schedule, then hour-0 exogenous values.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.hour = 0;
        self.window.clear();
        for (i, p) in self.profiles.iter().enumerate() {
            let day = p.sample_day(rng);
            self.days[i] = day;
            self.evs[i] = EvState::away(day.soc_start);
        }
        self.process_arrivals();
        self.base_load = self.grid.base_load.sample(0, rng);
        self.renewable = self.grid.renewable.sample(0, rng);
    }

    pub fn n_agents(&self) -> usize {
        self.profiles.len()
    }

    pub fn hour(&self) -> usize {
        self.hour
    }

    pub fn is_done(&self) -> bool {
        self.hour >= STEPS_PER_EPISODE
    }

    pub fn evs(&self) -> &[EvState] {
        &self.evs
    }

    pub fn profiles(&self) -> &[EvProfile] {
        &self.profiles
    }

    pub fn grid(&self) -> &GridConfig {
        &self.grid
    }

    pub fn days(&self) -> &[DaySchedule] {
        &self.days
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn bounds(&self, i: usize) -> ActionBounds {
        ActionBounds::of(&self.profiles[i])
    }

    pub fn grid_context(&self) -> GridContext {
        GridContext {
            hour: self.hour,
            base_load: self.base_load,
            renewable_available: self.renewable,
            p_grid_window: self.window.iter().copied().collect(),
        }
    }

    /// Overwrites the dynamic state. Used to seed the environment from a
    /// stored snapshot; `days` keeps the current schedules.
    pub fn restore(&mut self, ctx: &GridContext, evs: &[EvState]) {
        self.hour = ctx.hour;
        self.base_load = ctx.base_load;
        self.renewable = ctx.renewable_available;
        self.window = ctx.p_grid_window.iter().copied().collect();
        self.evs.copy_from_slice(evs);
    }

    pub fn observe(&self, i: usize) -> Observation {
        let ev = &self.evs[i];
        Observation {
            soc: ev.soc,
            t_etd: if ev.plugged { ev.t_etd } else { 0.0 },
            soc_target: self.profiles[i].soc_target,
            price_now: self.grid.pricing.price_at(self.hour),
            renewable_available: self.renewable / self.grid.renewable_norm,
            base_load: self.base_load / self.grid.load_norm,
            plugged: if ev.plugged { 1.0 } else { 0.0 },
        }
    }

    pub fn observe_all(&self) -> Vec<Observation> {
        (0..self.n_agents()).map(|i| self.observe(i)).collect()
    }

    /// Advances one hour. Out-of-bounds actions are clamped (and actions of
    /// unplugged EVs zeroed) with a warning; non-finite actions are errors.
    pub fn step<R: Rng + ?Sized>(&mut self, actions: &[f64], rng: &mut R) -> Result<StepRecord> {
        let n = self.n_agents();
        if actions.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "joint action has {} entries for {n} agents",
                actions.len()
            )));
        }
        let mut flows = vec![0.0; n];
        let mut active = vec![false; n];
        for (i, &a) in actions.iter().enumerate() {
            if !a.is_finite() {
                return Err(Error::NonFiniteAction { agent: i, value: a });
            }
            let ev = self.evs[i];
            if !ev.plugged {
                if a != 0.0 {
                    log::warn!("agent {i} is unplugged; ignoring action {a}");
                }
                continue;
            }
            active[i] = true;
            let bounds = self.bounds(i);
            let a_ok = bounds.clamp(a);
            if a_ok != a {
                log::warn!("agent {i} action {a} clamped to {a_ok}");
            }
            let s = soc_update(&ev, &self.profiles[i], a_ok, DT_HOURS)?;
            self.evs[i] = s.state;
            flows[i] = s.realized;
        }
        let total_charge: f64 = flows.iter().filter(|f| **f > 0.0).sum();
        let total_discharge: f64 = flows.iter().filter(|f| **f < 0.0).map(|f| -f).sum();
        let bal = balance(self.base_load, self.renewable, total_charge, total_discharge);
        if self.window.len() == self.window_len {
            self.window.pop_front();
        }
        self.window.push_back(bal.p_grid);

        let step = self.hour;
        let price = self.grid.pricing.price_at(step);
        let (base_load, renewable) = (self.base_load, self.renewable);

        self.hour += 1;
        let departures = self.process_departures();
        self.process_arrivals();
        if self.is_done() {
            self.base_load = self.grid.base_load.expected(self.hour);
            self.renewable = self.grid.renewable.expected(self.hour);
        } else {
            self.base_load = self.grid.base_load.sample(self.hour, rng);
            self.renewable = self.grid.renewable.sample(self.hour, rng);
        }

        Ok(StepRecord {
            step,
            price,
            base_load,
            renewable_available: renewable,
            renewable_used: bal.renewable_used,
            p_grid: bal.p_grid,
            curtailment: bal.curtailment,
            total_charge,
            total_discharge,
            flows,
            active,
            departures,
            p_grid_window: self.window.iter().copied().collect(),
        })
    }

    fn process_departures(&mut self) -> Vec<Departure> {
        let mut out = Vec::new();
        for (i, ev) in self.evs.iter_mut().enumerate() {
            if !ev.plugged {
                continue;
            }
            let dep = self.days[i].departure;
            if self.hour >= dep {
                ev.plugged = false;
                ev.t_etd = 0.0;
                ev.departed_this_episode = true;
                out.push(Departure {
                    agent: i,
                    final_soc: ev.soc,
                    soc_target: self.profiles[i].soc_target,
                });
            } else {
                ev.t_etd = (dep - self.hour) as f64;
            }
        }
        out
    }

    fn process_arrivals(&mut self) {
        for (i, ev) in self.evs.iter_mut().enumerate() {
            let day = &self.days[i];
            if !ev.plugged && !ev.departed_this_episode && day.arrival == self.hour {
                ev.soc = self.profiles[i].arrival_soc(day);
                ev.plugged = true;
                ev.t_etd = (day.departure - self.hour) as f64;
            }
        }
    }
}

/// Writes step records as CSV with columns
/// `episode,step,price,base_load,renewable_available,renewable_used,p_grid,total_charge,total_discharge`.
pub fn write_step_records<W: std::io::Write>(
    w: &mut csv::Writer<W>,
    episode: usize,
    records: &[StepRecord],
) -> Result<()> {
    for r in records {
        w.serialize(StepRow::from_record(episode, r))?;
    }
    Ok(())
}

/// Flat CSV row of a [`StepRecord`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub episode: usize,
    pub step: usize,
    pub price: f64,
    pub base_load: f64,
    pub renewable_available: f64,
    pub renewable_used: f64,
    pub p_grid: f64,
    pub total_charge: f64,
    pub total_discharge: f64,
}

impl StepRow {
    pub fn from_record(episode: usize, r: &StepRecord) -> Self {
        Self {
            episode,
            step: r.step,
            price: r.price,
            base_load: r.base_load,
            renewable_available: r.renewable_available,
            renewable_used: r.renewable_used,
            p_grid: r.p_grid,
            total_charge: r.total_charge,
            total_discharge: r.total_discharge,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn flat_grid(base: f64, renewable: f64) -> GridConfig {
        GridConfig {
            base_load: ExogenousProfile {
                shape: ProfileShape::Trace {
                    values: vec![base; 24],
                },
                noise_std: 0.0,
            },
            renewable: ExogenousProfile {
                shape: ProfileShape::Trace {
                    values: vec![renewable; 24],
                },
                noise_std: 0.0,
            },
            ..GridConfig::default()
        }
    }

    fn one_ev(arrival: f64, departure: f64) -> EvProfile {
        EvProfile {
            battery_capacity: 50.0,
            a_max_charge: 7.0,
            a_max_discharge: 5.0,
            eta_charge: 1.0,
            eta_discharge: 1.0,
            arrival_hour_dist: Dist::fixed(arrival),
            departure_hour_dist: Dist::fixed(departure),
            trip_energy_dist: Dist::fixed(5.0),
            initial_soc_dist: Dist::fixed(0.6),
            soc_target: 0.8,
            w_soc: 0.5,
        }
    }

    #[test]
    fn no_ev_balance() {
        let mut env = GridEnv::new(&flat_grid(10.0, 4.0), vec![], 6).unwrap();
        let mut rng = stream(0, 0);
        env.reset(&mut rng);
        let r = env.step(&[], &mut rng).unwrap();
        assert_eq!((r.p_grid, r.renewable_used), (6.0, 4.0));
    }

    #[test]
    fn idle_fleet_curtails_everything() {
        let mut env = GridEnv::new(&flat_grid(0.0, 5.0), vec![one_ev(0.0, 10.0)], 6).unwrap();
        let mut rng = stream(0, 0);
        env.reset(&mut rng);
        let r = env.step(&[0.0], &mut rng).unwrap();
        assert_eq!((r.p_grid, r.renewable_used, r.curtailment), (0.0, 0.0, 5.0));
    }

    #[test]
    fn discharging_ev_offsets_grid_draw() {
        let mut env = GridEnv::new(&flat_grid(10.0, 4.0), vec![one_ev(0.0, 10.0)], 6).unwrap();
        let mut rng = stream(0, 0);
        env.reset(&mut rng);
        let r = env.step(&[-3.0], &mut rng).unwrap();
        assert_eq!(r.p_grid, 3.0);
        assert_eq!(r.total_discharge, 3.0);
    }

    #[test]
    fn arrival_departure_cycle() {
        let mut env = GridEnv::new(&flat_grid(10.0, 0.0), vec![one_ev(3.0, 6.0)], 6).unwrap();
        let mut rng = stream(0, 0);
        env.reset(&mut rng);
        assert!(!env.evs()[0].plugged);
        let o = env.observe(0);
        assert_eq!((o.plugged, o.t_etd), (0.0, 0.0));
        for _ in 0..3 {
            env.step(&[0.0], &mut rng).unwrap();
        }
        let ev = env.evs()[0];
        assert!(ev.plugged);
        assert_eq!(ev.t_etd, 3.0);
        assert!((ev.soc - 0.5).abs() < 1e-12);
        let mut departures = 0;
        while !env.is_done() {
            departures += env.step(&[1.0], &mut rng).unwrap().departures.len();
        }
        assert_eq!(departures, 1);
        assert!(env.evs()[0].departed_this_episode);
        assert!((env.evs()[0].soc - (0.5 + 3.0 / 50.0)).abs() < 1e-12);
    }

    #[test]
    fn observation_reports_tariff_and_is_deterministic() {
        let mut env = GridEnv::new(&GridConfig::default(), vec![one_ev(0.0, 20.0)], 6).unwrap();
        let mut rng = stream(3, 0);
        env.reset(&mut rng);
        for _ in 0..11 {
            env.step(&[0.0], &mut rng).unwrap();
        }
        let a = env.observe(0);
        assert_eq!(a.price_now, 1.1121);
        assert_eq!(a, env.observe(0));
    }

    #[test]
    fn actions_are_clamped_and_unplugged_zeroed() {
        let profiles = vec![one_ev(0.0, 10.0), one_ev(5.0, 10.0)];
        let mut env = GridEnv::new(&flat_grid(10.0, 0.0), profiles, 6).unwrap();
        let mut rng = stream(0, 0);
        env.reset(&mut rng);
        let r = env.step(&[100.0, 3.0], &mut rng).unwrap();
        assert_eq!(r.flows, vec![7.0, 0.0]);
        assert!(env.step(&[f64::INFINITY, 0.0], &mut rng).is_err());
    }
}

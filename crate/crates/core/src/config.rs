//! Scenario configuration. Every tunable lives here; defaults reproduce the
//! case-study intersection (400 veh/h per movement, 300 m range, 35 mph).
//!
//! The on-disk form is TOML. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What the controller's two-level program minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    #[default]
    Delay,
    QueueLength,
}

/// Split-gain formula for regression trees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GainMode {
    /// `e_p - e_c1 - e_c2`. Rarely positive once children hold more than a
    /// couple of samples, so trees grown with it tend to stay a single leaf.
    Unweighted,
    /// `e_p - (n1/n) e_c1 - (n2/n) e_c2`, textbook CART.
    #[default]
    Weighted,
}

/// How lead-phase green trees are organised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Tree2Scope {
    /// One tree per left-turn phase (1, 3, 5, 7), each on the ring-relative
    /// view: its own pair first, then the other ring and the opposite barrier.
    #[default]
    PerPhase,
    /// A single tree over both rings, features expressed ring-relative.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub gain: GainMode,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams { max_depth: 8, min_samples_leaf: 5, gain: GainMode::Weighted }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Arrival rate per movement (index = phase - 1), veh/h.
    pub demand_vph: [f64; 8],
    pub comm_range: f64,
    pub free_flow_speed: f64,
    pub g_min: f64,
    pub g_max: f64,
    /// Yellow plus red clearance between consecutive phases of a ring.
    pub transition_time: f64,
    /// Leading part of the transition shown as yellow; the rest is red.
    pub yellow_time: f64,
    pub sim_resolution_hz: u32,
    pub rng_seed: u64,
    /// Experiment length, sim-hours.
    pub duration_hours: f64,
    /// Training-campaign length, sim-hours.
    pub campaign_hours: f64,
    /// Distance from the vehicle spawn point to the stop bar.
    pub approach_length: f64,
    pub jam_spacing: f64,
    pub wave_speed: f64,
    /// Speed clamp used by ETA for stopped vehicles.
    pub floor_speed: f64,
    /// Vehicles slower than this count as queued.
    pub stopped_speed: f64,
    /// Controller's assumed queue-discharge headway.
    pub saturation_headway: f64,
    pub objective: Objective,
    /// Trailing window for the flow-rate feature, seconds.
    pub fr_window: f64,
    /// Headway reported when fewer than two vehicles are present, seconds.
    pub hw_cap: f64,
    pub tree: TreeParams,
    pub tree2_scope: Tree2Scope,
    pub cv_repeats: usize,
    pub cv_train_fraction: f64,
    /// Falsified-trajectory budget for NAV attacks.
    pub budget: u32,
    pub replications: u32,
    /// Campaigns with fewer optimizations than this are refused.
    pub min_training_samples: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            demand_vph: [400.0; 8],
            comm_range: 300.0,
            free_flow_speed: 15.65,
            g_min: 5.0,
            g_max: 30.0,
            transition_time: 4.0,
            yellow_time: 3.0,
            sim_resolution_hz: 10,
            rng_seed: 1,
            duration_hours: 5.0,
            campaign_hours: 30.0,
            approach_length: 600.0,
            jam_spacing: 7.0,
            wave_speed: 5.0,
            floor_speed: 1.0,
            stopped_speed: 1.0,
            saturation_headway: 2.0,
            objective: Objective::Delay,
            fr_window: 300.0,
            hw_cap: 300.0,
            tree: TreeParams::default(),
            tree2_scope: Tree2Scope::PerPhase,
            cv_repeats: 10,
            cv_train_fraction: 0.8,
            budget: 10,
            replications: 5,
            min_training_samples: 100,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Simulation step in seconds.
    pub fn dt(&self) -> f64 {
        1.0 / self.sim_resolution_hz as f64
    }

    pub fn ticks_per_second(&self) -> u64 {
        self.sim_resolution_hz as u64
    }

    pub fn seconds_to_ticks(&self, s: f64) -> u64 {
        (s * self.sim_resolution_hz as f64).round() as u64
    }

    /// Newell reaction lag: jam spacing over wave speed.
    pub fn reaction_time(&self) -> f64 {
        self.jam_spacing / self.wave_speed
    }

    pub fn min_barrier_length(&self) -> f64 {
        2.0 * self.g_min + 2.0 * self.transition_time
    }

    pub fn max_barrier_length(&self) -> f64 {
        2.0 * self.g_max + 2.0 * self.transition_time
    }

    pub fn check(&self) -> Result<()> {
        let positive = [
            ("comm_range", self.comm_range),
            ("free_flow_speed", self.free_flow_speed),
            ("g_min", self.g_min),
            ("approach_length", self.approach_length),
            ("jam_spacing", self.jam_spacing),
            ("wave_speed", self.wave_speed),
            ("floor_speed", self.floor_speed),
            ("saturation_headway", self.saturation_headway),
            ("fr_window", self.fr_window),
            ("hw_cap", self.hw_cap),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.g_max < self.g_min {
            return Err(Error::Config("g_max below g_min".into()));
        }
        if self.g_min.fract() != 0.0 || self.g_max.fract() != 0.0 || self.transition_time.fract() != 0.0 {
            return Err(Error::Config("g_min, g_max and transition_time must be whole seconds".into()));
        }
        if !(0.0..=self.transition_time).contains(&self.yellow_time) {
            return Err(Error::Config("yellow_time must lie within the transition".into()));
        }
        if self.sim_resolution_hz == 0 {
            return Err(Error::Config("sim_resolution_hz must be positive".into()));
        }
        if self.demand_vph.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::Config("demand must be nonnegative".into()));
        }
        if !(self.cv_train_fraction > 0.0 && self.cv_train_fraction < 1.0) {
            return Err(Error::Config("cv_train_fraction must lie in (0, 1)".into()));
        }
        if self.approach_length < self.comm_range {
            return Err(Error::Config("approach_length shorter than comm_range".into()));
        }
        Ok(())
    }
}

//! Per-phase traffic features computed from a snapshot plus the observer's
//! BSM history: queue length, approaching count, headway, ETA, vehicle
//! delay and flow rate.
//!
//! ETA is aggregated as a sum over vehicles, so injecting one trajectory
//! with ETA `tau` into phase `p` moves `(n_p, t_p)` to `(n_p + 1, t_p + tau)`.

use std::collections::{HashMap, VecDeque};
use std::fmt;

use crate::config::ScenarioConfig;
use crate::controller::Snapshot;
use crate::domain::{Barrier, BsmRecord, PhaseId, Ring, Role, VehicleId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureKind {
    Ql,
    Nav,
    Hw,
    Eta,
    Vd,
    Fr,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 6] =
        [FeatureKind::Ql, FeatureKind::Nav, FeatureKind::Hw, FeatureKind::Eta, FeatureKind::Vd, FeatureKind::Fr];

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Ql => "QL",
            FeatureKind::Nav => "NAV",
            FeatureKind::Hw => "HW",
            FeatureKind::Eta => "ETA",
            FeatureKind::Vd => "VD",
            FeatureKind::Fr => "FR",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        FeatureKind::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhaseFeatures {
    pub ql: f64,
    pub nav: f64,
    pub hw: f64,
    pub eta: f64,
    pub vd: f64,
    pub fr: f64,
}

impl PhaseFeatures {
    pub fn get(&self, kind: FeatureKind) -> f64 {
        match kind {
            FeatureKind::Ql => self.ql,
            FeatureKind::Nav => self.nav,
            FeatureKind::Hw => self.hw,
            FeatureKind::Eta => self.eta,
            FeatureKind::Vd => self.vd,
            FeatureKind::Fr => self.fr,
        }
    }
}

/// Which slice of the intersection a column block describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    /// Current barrier `[d1, d2, g1, g2]` then the opposite barrier, same order.
    Barrier,
    /// Ring-relative: own ring `[left, through]`, other ring, then the same
    /// four for the opposite barrier.
    Ring(Ring),
}

impl View {
    pub fn phases(self, barrier: Barrier) -> Vec<PhaseId> {
        let ring_rel = |b: Barrier, r: Ring| {
            let o = match r {
                Ring::One => Ring::Two,
                Ring::Two => Ring::One,
            };
            [b.left(r), b.through(r), b.left(o), b.through(o)]
        };
        match self {
            View::Barrier => barrier.phases().into_iter().chain(barrier.other().phases()).collect(),
            View::Ring(r) => ring_rel(barrier, r).into_iter().chain(ring_rel(barrier.other(), r)).collect(),
        }
    }

    pub fn width(self) -> usize {
        8
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector {
    pub phases: [PhaseFeatures; 8],
}

impl FeatureVector {
    pub fn phase(&self, p: PhaseId) -> &PhaseFeatures {
        &self.phases[p.index()]
    }

    pub fn phase_mut(&mut self, p: PhaseId) -> &mut PhaseFeatures {
        &mut self.phases[p.index()]
    }

    /// Column vector for `kinds` (kind-major) under `view`.
    pub fn columns(&self, barrier: Barrier, kinds: &[FeatureKind], view: View) -> Vec<f64> {
        let phases = view.phases(barrier);
        let mut out = Vec::with_capacity(kinds.len() * phases.len());
        for &k in kinds {
            out.extend(phases.iter().map(|p| self.phase(*p).get(k)));
        }
        out
    }

    /// Attack-program vector `[t_d1, t_d2, t_g1, t_g2, n_d1, n_d2, n_g1, n_g2]`.
    pub fn attack_vector(&self, barrier: Barrier) -> [f64; 8] {
        let mut x = [0.0; 8];
        for role in Role::ALL {
            let f = self.phase(barrier.role_phase(role));
            x[role.index()] = f.eta;
            x[4 + role.index()] = f.nav;
        }
        x
    }

    /// Adds one approaching vehicle with ETA `eta` to `phase`'s NAV and ETA.
    pub fn inject(&mut self, phase: PhaseId, eta: f64) {
        let f = self.phase_mut(phase);
        f.nav += 1.0;
        f.eta += eta;
    }

    /// Flat 48-value row, phase-major in kind order, for logs.
    pub fn flat(&self) -> Vec<f64> {
        self.phases.iter().flat_map(|f| FeatureKind::ALL.map(|k| f.get(k))).collect()
    }

    pub fn from_flat(values: &[f64]) -> Option<Self> {
        if values.len() != 48 {
            return None;
        }
        let mut fv = FeatureVector::default();
        for (i, chunk) in values.chunks(6).enumerate() {
            fv.phases[i] = PhaseFeatures {
                ql: chunk[0],
                nav: chunk[1],
                hw: chunk[2],
                eta: chunk[3],
                vd: chunk[4],
                fr: chunk[5],
            };
        }
        Some(fv)
    }

    pub fn flat_header() -> Vec<String> {
        PhaseId::ALL
            .iter()
            .flat_map(|p| FeatureKind::ALL.map(|k| format!("{}_{}", k.name().to_lowercase(), p)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Seen {
    first_tick: u64,
    first_pos: f64,
    last_tick: u64,
    phase: PhaseId,
}

/// What an observer accumulates from the BSM stream between snapshots:
/// first sighting of each vehicle and recent stop-bar crossings.
#[derive(Debug, Clone)]
pub struct History {
    seen: HashMap<VehicleId, Seen>,
    crossings: [VecDeque<u64>; 8],
    window_ticks: u64,
    ticks_per_second: f64,
}

impl History {
    pub fn new(cfg: &ScenarioConfig) -> Self {
        History {
            seen: HashMap::new(),
            crossings: Default::default(),
            window_ticks: cfg.seconds_to_ticks(cfg.fr_window),
            ticks_per_second: cfg.sim_resolution_hz as f64,
        }
    }

    /// Feeds the BSMs broadcast at `tick`. A tracked vehicle that stops
    /// broadcasting has crossed the stop bar (vehicles only leave range that
    /// way).
    pub fn observe(&mut self, tick: u64, bsms: &[BsmRecord]) {
        for r in bsms {
            self.seen
                .entry(r.vehicle_id)
                .and_modify(|s| s.last_tick = tick)
                .or_insert(Seen { first_tick: tick, first_pos: r.position, last_tick: tick, phase: r.phase });
        }
        let crossings = &mut self.crossings;
        self.seen.retain(|_, s| {
            if s.last_tick < tick {
                crossings[s.phase.index()].push_back(tick);
                false
            } else {
                true
            }
        });
        for q in &mut self.crossings {
            while q.front().is_some_and(|&t| t + self.window_ticks <= tick) {
                q.pop_front();
            }
        }
    }

    /// Records a crossing directly.
    pub fn record_crossing(&mut self, phase: PhaseId, tick: u64) {
        self.crossings[phase.index()].push_back(tick);
    }

    fn crossings_since(&self, phase: PhaseId, tick: u64) -> usize {
        self.crossings[phase.index()].iter().filter(|&&t| t <= tick && t + self.window_ticks > tick).count()
    }

    fn first_seen(&self, id: VehicleId) -> Option<(u64, f64)> {
        self.seen.get(&id).map(|s| (s.first_tick, s.first_pos))
    }
}

/// Feature vector of every phase at the snapshot instant.
pub fn extract(snapshot: &Snapshot, history: &History, cfg: &ScenarioConfig) -> FeatureVector {
    let mut fv = FeatureVector::default();
    let now = snapshot.tick;
    let window = cfg.fr_window;
    for p in PhaseId::ALL {
        let vehicles = snapshot.vehicles(p);
        let f = fv.phase_mut(p);
        f.nav = vehicles.len() as f64;
        f.ql = vehicles.iter().filter(|v| v.speed < cfg.stopped_speed).count() as f64;
        f.eta = vehicles.iter().map(|v| v.eta).sum();
        f.hw = if vehicles.len() < 2 {
            cfg.hw_cap
        } else {
            let (lo, hi) = vehicles
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v.eta), hi.max(v.eta)));
            ((hi - lo) / (vehicles.len() - 1) as f64).min(cfg.hw_cap)
        };
        f.vd = vehicles
            .iter()
            .filter_map(|v| {
                history.first_seen(v.vehicle_id).map(|(t0, p0)| {
                    let elapsed = (now.saturating_sub(t0)) as f64 / history.ticks_per_second;
                    (elapsed - (p0 - v.position) / cfg.free_flow_speed).max(0.0)
                })
            })
            .sum();
        f.fr = history.crossings_since(p, now) as f64 * 3600.0 / window;
    }
    fv
}

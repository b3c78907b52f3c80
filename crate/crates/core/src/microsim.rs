//! Fixed-step microscopic simulation of a four-leg intersection with one
//! lane per phase (left + through on each approach, no right turns).
//!
//! Motion follows Newell's simplified car-following rule: a follower's
//! position is bounded by its leader's position one reaction lag earlier
//! plus the jam spacing, `x_f(t) >= x_l(t - tau) + jam_spacing`, with
//! `tau = jam_spacing / wave_speed`, and otherwise advances at free-flow
//! speed. A non-green signal acts as a stationary leader one jam spacing
//! past the stop bar, so the front vehicle halts on the bar.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use sha2::{Digest, Sha256};

use crate::config::ScenarioConfig;
use crate::domain::{BsmRecord, PhaseId, SignalState, VehicleId};
use crate::error::{Error, Result};

/// Slack allowed on the jam-spacing check before it counts as a fault.
const SPACING_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: VehicleId,
    pub phase: PhaseId,
    /// Meters to the stop bar.
    pub position: f64,
    pub speed: f64,
    pub entry_time: f64,
    pub exit_time: Option<f64>,
    pub free_flow_travel_time: f64,
}

impl Vehicle {
    pub fn delay(&self) -> Option<f64> {
        self.exit_time.map(|exit| exit - self.entry_time - self.free_flow_travel_time)
    }
}

#[derive(Debug, Clone)]
struct LaneArrivals {
    rng: ChaCha8Rng,
    exp: Option<Exp<f64>>,
    next_time: f64,
}

impl LaneArrivals {
    fn new(seed: u64, lane: usize, rate_vph: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(lane as u64 + 1);
        let exp = (rate_vph > 0.0).then(|| Exp::new(rate_vph / 3600.0).expect("positive rate"));
        let next_time = match &exp {
            Some(e) => e.sample(&mut rng),
            None => f64::INFINITY,
        };
        LaneArrivals { rng, exp, next_time }
    }

    /// Pops every arrival with time `<= until`.
    fn drain_until(&mut self, until: f64) -> usize {
        let mut n = 0;
        while self.next_time <= until {
            n += 1;
            let gap = self.exp.as_ref().expect("finite arrival implies a rate").sample(&mut self.rng);
            self.next_time += gap;
        }
        n
    }
}

/// Poisson arrivals, one independent seeded stream per movement.
#[derive(Debug, Clone)]
pub struct ArrivalProcess {
    lanes: Vec<LaneArrivals>,
}

impl ArrivalProcess {
    pub fn new(demand_vph: &[f64; 8], seed: u64) -> Self {
        ArrivalProcess {
            lanes: demand_vph.iter().enumerate().map(|(i, r)| LaneArrivals::new(seed, i, *r)).collect(),
        }
    }

    fn drain_until(&mut self, lane: usize, until: f64) -> usize {
        self.lanes[lane].drain_until(until)
    }
}

/// A vehicle plus its recent positions (most recent last), long enough to
/// look one reaction lag back.
#[derive(Debug, Clone)]
struct Tracked {
    veh: Vehicle,
    trail: VecDeque<f64>,
}

fn push_trail(trail: &mut VecDeque<f64>, pos: f64, lag: usize) {
    trail.push_back(pos);
    while trail.len() > lag + 1 {
        trail.pop_front();
    }
}

/// Position one reaction lag before the newest entry.
fn lagged(trail: &VecDeque<f64>, lag: usize) -> f64 {
    if trail.len() > lag {
        trail[trail.len() - 1 - lag]
    } else {
        trail[0]
    }
}

/// Trail for a vehicle that has been travelling at constant `speed`.
fn steady_trail(position: f64, speed: f64, dt: f64, lag: usize) -> VecDeque<f64> {
    (0..=lag).rev().map(|j| position + speed * dt * j as f64).collect()
}

#[derive(Debug, Clone, Default)]
struct Lane {
    /// Ordered front (nearest the stop bar) to back.
    vehicles: VecDeque<Tracked>,
    /// Arrived but blocked at the upstream boundary.
    waiting: VecDeque<Vehicle>,
    /// Trail of the most recent departure, continued downstream so the next
    /// vehicle discharges behind it.
    ghost: Option<VecDeque<f64>>,
    last_departed: Option<VehicleId>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WorldStats {
    pub arrived: u64,
    pub departed: u64,
    pub fifo_violations: u64,
    pub red_crossings: u64,
}

/// Stop-bar crossings and new arrivals during one step.
#[derive(Debug, Clone, Default)]
pub struct StepEvents {
    pub departures: Vec<(VehicleId, PhaseId, f64)>,
    pub arrivals: Vec<(VehicleId, PhaseId)>,
}

#[derive(Debug, Clone)]
pub struct World {
    tick: u64,
    dt: f64,
    free_flow_speed: f64,
    approach_length: f64,
    jam_spacing: f64,
    /// Reaction lag in whole steps.
    lag: usize,
    comm_range: f64,
    lanes: Vec<Lane>,
    arrivals: ArrivalProcess,
    next_id: u64,
    departed: Vec<Vehicle>,
    stats: WorldStats,
    arrival_hash: Sha256,
}

impl World {
    pub fn new(cfg: &ScenarioConfig, seed: u64) -> Self {
        World {
            tick: 0,
            dt: cfg.dt(),
            free_flow_speed: cfg.free_flow_speed,
            approach_length: cfg.approach_length,
            jam_spacing: cfg.jam_spacing,
            lag: ((cfg.reaction_time() / cfg.dt()).round() as usize).max(1),
            comm_range: cfg.comm_range,
            lanes: vec![Lane::default(); 8],
            arrivals: ArrivalProcess::new(&cfg.demand_vph, seed),
            next_id: 0,
            departed: Vec::new(),
            stats: WorldStats::default(),
            arrival_hash: Sha256::new(),
        }
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.dt
    }

    pub fn stats(&self) -> &WorldStats {
        &self.stats
    }

    pub fn departed(&self) -> &[Vehicle] {
        &self.departed
    }

    /// Vehicles currently on the approaches, lane by lane, front first.
    pub fn vehicles(&self) -> impl Iterator<Item = &Vehicle> {
        self.lanes.iter().flat_map(|l| l.vehicles.iter().map(|t| &t.veh))
    }

    pub fn lane(&self, phase: PhaseId) -> impl Iterator<Item = &Vehicle> {
        self.lanes[phase.index()].vehicles.iter().map(|t| &t.veh)
    }

    pub fn in_network(&self) -> u64 {
        self.lanes.iter().map(|l| (l.vehicles.len() + l.waiting.len()) as u64).sum()
    }

    /// Hex digest over every arrival event `(tick, phase, id)` so far.
    pub fn arrival_digest(&self) -> String {
        hex::encode(self.arrival_hash.clone().finalize())
    }

    /// Places a vehicle directly on a lane (tests and scripted scenarios),
    /// as if it had entered at the boundary and held `speed` since. Vehicles
    /// must be added front to back.
    pub fn insert_vehicle(&mut self, phase: PhaseId, position: f64, speed: f64) -> Result<VehicleId> {
        let lane = &mut self.lanes[phase.index()];
        if let Some(back) = lane.vehicles.back() {
            if position - back.veh.position < self.jam_spacing - SPACING_EPS {
                return Err(Error::Consistency(format!(
                    "inserted vehicle at {position} m overlaps vehicle at {} m",
                    back.veh.position
                )));
            }
        }
        let id = VehicleId(self.next_id);
        self.next_id += 1;
        let now = self.tick as f64 * self.dt;
        let ff = self.approach_length / self.free_flow_speed;
        let entry_time = now - (self.approach_length - position) / self.free_flow_speed;
        lane.vehicles.push_back(Tracked {
            veh: Vehicle { id, phase, position, speed, entry_time, exit_time: None, free_flow_travel_time: ff },
            trail: steady_trail(position, speed, self.dt, self.lag),
        });
        self.stats.arrived += 1;
        Ok(id)
    }

    /// Advances one step under `signal` (state held over the whole step).
    pub fn step(&mut self, signal: &[SignalState; 8]) -> Result<StepEvents> {
        let t = self.time();
        let dt = self.dt;
        let vf = self.free_flow_speed;
        let sj = self.jam_spacing;
        let lag = self.lag;
        let mut events = StepEvents::default();

        for (li, lane) in self.lanes.iter_mut().enumerate() {
            let green = signal[li] == SignalState::Green;
            if let Some(g) = lane.ghost.as_mut() {
                let next = g.back().expect("non-empty trail") - vf * dt;
                push_trail(g, next, lag);
            }
            // Lowest admissible position for the next vehicle processed.
            let ghost_bound = lane.ghost.as_ref().map(|g| lagged(g, lag) + sj);
            let mut bound = if green { ghost_bound } else { Some(ghost_bound.map_or(0.0, |b| b.max(0.0))) };
            let mut crossed = 0usize;
            for tr in lane.vehicles.iter_mut() {
                let x = tr.veh.position;
                let free = x - vf * dt;
                let next = bound.map_or(free, |b| free.max(b)).min(x);
                let v = if next == free { vf } else { (x - next) / dt };
                if next < 0.0 {
                    if !green {
                        self.stats.red_crossings += 1;
                    }
                    tr.veh.exit_time = Some(t + x / v);
                    crossed += 1;
                }
                tr.veh.position = next;
                tr.veh.speed = v;
                push_trail(&mut tr.trail, next, lag);
                bound = Some(lagged(&tr.trail, lag) + sj);
            }
            for _ in 0..crossed {
                let Tracked { mut veh, trail } = lane.vehicles.pop_front().expect("crossed vehicle present");
                lane.ghost = Some(trail);
                if lane.last_departed.is_some_and(|prev| veh.id < prev) {
                    self.stats.fifo_violations += 1;
                }
                lane.last_departed = Some(veh.id);
                veh.position = 0.0;
                events.departures.push((veh.id, veh.phase, veh.exit_time.expect("set above")));
                self.stats.departed += 1;
                self.departed.push(veh);
            }
            let mut it = lane.vehicles.iter();
            if let Some(mut prev) = it.next() {
                for cur in it {
                    let gap = cur.veh.position - prev.veh.position;
                    if gap < sj - SPACING_EPS {
                        return Err(Error::Consistency(format!(
                            "vehicles {} and {} closer than jam spacing ({gap:.6} m)",
                            prev.veh.id, cur.veh.id
                        )));
                    }
                    prev = cur;
                }
            }
        }

        self.tick += 1;
        let now = self.time();
        let ff = self.approach_length / vf;
        for li in 0..8 {
            let n = self.arrivals.drain_until(li, now);
            let phase = PhaseId::from_index(li);
            for _ in 0..n {
                let id = VehicleId(self.next_id);
                self.next_id += 1;
                self.arrival_hash.update(self.tick.to_le_bytes());
                self.arrival_hash.update([phase.get()]);
                self.arrival_hash.update(id.0.to_le_bytes());
                self.stats.arrived += 1;
                events.arrivals.push((id, phase));
                self.lanes[li].waiting.push_back(Vehicle {
                    id,
                    phase,
                    position: self.approach_length,
                    speed: vf,
                    entry_time: now,
                    exit_time: None,
                    free_flow_travel_time: ff,
                });
            }
            let lane = &mut self.lanes[li];
            while !lane.waiting.is_empty() {
                let room = lane.vehicles.back().map_or(f64::INFINITY, |b| self.approach_length - b.veh.position);
                if room < sj {
                    break;
                }
                let mut veh = lane.waiting.pop_front().expect("checked non-empty");
                veh.position = self.approach_length;
                veh.speed = vf;
                let trail = steady_trail(veh.position, vf, dt, lag);
                lane.vehicles.push_back(Tracked { veh, trail });
            }
        }
        debug_assert_eq!(self.stats.arrived, self.stats.departed + self.in_network());
        Ok(events)
    }

    /// BSMs of every vehicle within communication range at the current tick.
    pub fn emit_bsms(&self) -> Vec<BsmRecord> {
        self.records(Some(self.comm_range))
    }

    /// Same records without range truncation (trajectory log).
    pub fn emit_all(&self) -> Vec<BsmRecord> {
        self.records(None)
    }

    fn records(&self, range: Option<f64>) -> Vec<BsmRecord> {
        self.vehicles()
            .filter(|v| range.is_none_or(|r| v.position <= r))
            .map(|v| BsmRecord {
                vehicle_id: v.id,
                tick: self.tick,
                position: v.position,
                speed: v.speed,
                phase: v.phase,
                is_falsified: false,
            })
            .collect()
    }

    /// Total delay at the current time: completed trips plus the delay
    /// accrued so far by vehicles still on the approaches or waiting to enter.
    pub fn total_delay(&self) -> f64 {
        let now = self.time();
        let vf = self.free_flow_speed;
        let done: f64 = self.departed.iter().filter_map(Vehicle::delay).sum();
        let running: f64 = self
            .lanes
            .iter()
            .flat_map(|l| l.vehicles.iter())
            .map(|t| &t.veh)
            .map(|v| (now - v.entry_time) - (self.approach_length - v.position) / vf)
            .sum();
        let blocked: f64 = self.lanes.iter().flat_map(|l| l.waiting.iter()).map(|v| now - v.entry_time).sum();
        done + running + blocked
    }
}

/// Sum of per-trip delays for completed vehicles.
pub fn trip_delay(vehicles: &[Vehicle]) -> f64 {
    vehicles.iter().filter_map(Vehicle::delay).sum()
}

//! Target controller: a two-level, two-stage planner run at every barrier
//! start.
//!
//! At the lower level, for a fixed barrier length, each ring's green split
//! and lead/lag order is chosen to minimise predicted cost. At the upper
//! level a two-stage dynamic program enumerates the current barrier's length
//! and, given that, the best length for the opposite barrier. Only stage 1 is
//! executed; stage 2 is kept for the record.
//!
//! Predicted cost comes from deterministic queue discharge: a phase's
//! snapshot vehicles, in ETA order, depart at
//! `max(eta, green_start, previous_departure + headway)` while that stays
//! inside the green window. Vehicles that miss their window accrue delay up
//! to a fixed planning horizon of two maximum-length barriers.
//!
//! A vehicle reporting less than the stopped-speed threshold is already
//! queued at the stop bar, so it enters the discharge model at time 0
//! instead of at its floor-speed ETA (which would be its distance in metres
//! and spread a standing queue out to one vehicle per jam spacing).

use crate::config::{Objective, ScenarioConfig};
use crate::domain::{
    eta_of, Barrier, BsmRecord, PhaseId, Ring, Sequence, SignalState, SpatRecord, TimingPlan, VehicleId,
};
use crate::error::{Error, Result};

/// Cost differences at or below this are treated as ties.
pub const COST_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotVehicle {
    pub vehicle_id: VehicleId,
    pub eta: f64,
    pub position: f64,
    pub speed: f64,
}

/// In-range trajectories frozen at a barrier start, grouped by phase and
/// sorted by `(eta, position, speed)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Snapshot {
    pub tick: u64,
    pub phases: [Vec<SnapshotVehicle>; 8],
}

impl Snapshot {
    /// Builds a snapshot from the BSMs broadcast at `tick`. Records stamped
    /// with any other tick are ignored.
    pub fn from_bsms(tick: u64, bsms: &[BsmRecord], floor_speed: f64) -> Result<Self> {
        let mut snap = Snapshot { tick, ..Snapshot::default() };
        for r in bsms.iter().filter(|r| r.tick == tick) {
            snap.phases[r.phase.index()].push(SnapshotVehicle {
                vehicle_id: r.vehicle_id,
                eta: eta_of(r.position, r.speed, floor_speed)?,
                position: r.position,
                speed: r.speed,
            });
        }
        for list in &mut snap.phases {
            list.sort_by(|a, b| {
                a.eta
                    .total_cmp(&b.eta)
                    .then(a.position.total_cmp(&b.position))
                    .then(a.speed.total_cmp(&b.speed))
            });
        }
        Ok(snap)
    }

    pub fn vehicles(&self, phase: PhaseId) -> &[SnapshotVehicle] {
        &self.phases[phase.index()]
    }

    pub fn len(&self) -> usize {
        self.phases.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Arrival times used by the discharge model, sorted: queued vehicles
/// (speed below `stopped_speed`) arrive at 0, moving ones at their ETA.
pub fn arrivals(vehicles: &[SnapshotVehicle], stopped_speed: f64) -> Vec<f64> {
    let mut a: Vec<f64> =
        vehicles.iter().map(|v| if v.speed < stopped_speed { 0.0 } else { v.eta }).collect();
    a.sort_by(f64::total_cmp);
    a
}

/// Cost of serving ETA-sorted arrivals inside the green window
/// `[start, end]`.
pub fn phase_cost(etas: &[f64], start: f64, end: f64, horizon: f64, headway: f64, objective: Objective) -> f64 {
    let mut cost = 0.0;
    let mut last = f64::NEG_INFINITY;
    for (i, &eta) in etas.iter().enumerate() {
        let dep = eta.max(start).max(last + headway);
        if dep > end + COST_EPS {
            // Departures only move later, so everything from here misses.
            for &e in &etas[i..] {
                cost += match objective {
                    Objective::Delay => (horizon - e).max(0.0),
                    Objective::QueueLength => 1.0,
                };
            }
            break;
        }
        if objective == Objective::Delay {
            cost += dep - eta;
        }
        last = dep;
    }
    cost
}

/// Stage identity within the two-stage program.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpStage {
    pub index: u8,
    pub barrier: Barrier,
    pub barrier_length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowerLevel {
    /// Role order `[d1, d2, g1, g2]`.
    pub greens: [f64; 4],
    pub sequence: [Sequence; 2],
    pub cost: f64,
}

impl LowerLevel {
    pub fn to_plan(&self, barrier: Barrier, transition: f64) -> TimingPlan {
        TimingPlan { barrier, greens: self.greens, sequence: self.sequence, transition }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub plan: TimingPlan,
    pub stage1: DpStage,
    pub stage1_cost: f64,
    pub stage2: DpStage,
    pub stage2_plan: TimingPlan,
    /// Stage 1 + stage 2 predicted cost.
    pub predicted_cost: f64,
}

/// Per-snapshot cost evaluator with memoised phase costs on whole-second
/// window bounds.
struct Evaluator<'a> {
    etas: [Vec<f64>; 8],
    cfg: &'a ScenarioConfig,
    horizon: f64,
    span: usize,
    memo: Vec<f64>,
}

impl<'a> Evaluator<'a> {
    fn new(snapshot: &Snapshot, cfg: &'a ScenarioConfig) -> Self {
        let horizon = 2.0 * cfg.max_barrier_length();
        let span = horizon as usize + 1;
        Evaluator {
            etas: std::array::from_fn(|i| arrivals(&snapshot.phases[i], cfg.stopped_speed)),
            cfg,
            horizon,
            span,
            memo: vec![f64::NAN; 8 * span * span],
        }
    }

    fn cost(&mut self, phase: PhaseId, start: f64, end: f64) -> f64 {
        let (s, e) = (start as usize, end as usize);
        let idx = (phase.index() * self.span + s) * self.span + e;
        let hit = self.memo.get(idx).copied().filter(|c| !c.is_nan());
        if let Some(c) = hit {
            return c;
        }
        let c = phase_cost(
            &self.etas[phase.index()],
            start,
            end,
            self.horizon,
            self.cfg.saturation_headway,
            self.cfg.objective,
        );
        if start.fract() == 0.0 && end.fract() == 0.0 && idx < self.memo.len() {
            self.memo[idx] = c;
        }
        c
    }

    fn lower_level(&mut self, barrier: Barrier, length: f64, offset: f64) -> Result<LowerLevel> {
        let cfg = self.cfg;
        let t = cfg.transition_time;
        if length < cfg.min_barrier_length() - COST_EPS
            || length > cfg.max_barrier_length() + COST_EPS
            || length.fract() != 0.0
        {
            return Err(Error::InfeasibleBarrier(length));
        }
        let ring_green = length - 2.0 * t;
        let lo = cfg.g_min.max(ring_green - cfg.g_max);
        let hi = cfg.g_max.min(ring_green - cfg.g_min);
        let mut greens = [0.0; 4];
        let mut sequence = [Sequence::LeftLead; 2];
        let mut total = 0.0;
        for ring in Ring::BOTH {
            let left = barrier.left(ring);
            let through = barrier.through(ring);
            let mut best: Option<(f64, f64, Sequence)> = None;
            let mut g_left = lo;
            while g_left <= hi + COST_EPS {
                let g_through = ring_green - g_left;
                for seq in [Sequence::LeftLead, Sequence::ThroughLead] {
                    let (lead, g_lead, lag, g_lag) = match seq {
                        Sequence::LeftLead => (left, g_left, through, g_through),
                        Sequence::ThroughLead => (through, g_through, left, g_left),
                    };
                    let lag_start = offset + g_lead + t;
                    let c = self.cost(lead, offset, offset + g_lead) + self.cost(lag, lag_start, lag_start + g_lag);
                    if best.is_none_or(|(bc, _, _)| c < bc - COST_EPS) {
                        best = Some((c, g_left, seq));
                    }
                }
                g_left += 1.0;
            }
            let (c, g_left, seq) = best.expect("feasible barrier has at least one split");
            let ri = ring.index();
            greens[ri] = g_left;
            greens[ri + 2] = ring_green - g_left;
            sequence[ri] = seq;
            total += c;
        }
        Ok(LowerLevel { greens, sequence, cost: total })
    }
}

/// Whole-second barrier lengths from minimum to maximum.
pub fn barrier_lengths(cfg: &ScenarioConfig) -> Vec<f64> {
    let lo = cfg.min_barrier_length() as i64;
    let hi = cfg.max_barrier_length() as i64;
    (lo..=hi).map(|l| l as f64).collect()
}

/// Best split of `barrier` for a given length, with the barrier starting at
/// the snapshot instant.
pub fn lower_level(snapshot: &Snapshot, barrier: Barrier, barrier_length: f64, cfg: &ScenarioConfig) -> Result<LowerLevel> {
    Evaluator::new(snapshot, cfg).lower_level(barrier, barrier_length, 0.0)
}

/// Two-stage plan for the barrier about to start.
pub fn upper_level(snapshot: &Snapshot, barrier: Barrier, cfg: &ScenarioConfig) -> Decision {
    upper_level_with(snapshot, barrier, cfg, &barrier_lengths(cfg)).expect("default lengths are feasible")
}

/// As [`upper_level`] but over an explicit candidate length list used for
/// both stages. Ties go to the earlier candidate.
pub fn upper_level_with(snapshot: &Snapshot, barrier: Barrier, cfg: &ScenarioConfig, lengths: &[f64]) -> Result<Decision> {
    if lengths.is_empty() {
        return Err(Error::Input("no candidate barrier lengths".into()));
    }
    let mut eval = Evaluator::new(snapshot, cfg);
    let next = barrier.other();
    let mut best: Option<(f64, f64, LowerLevel, f64, LowerLevel)> = None;
    for &l1 in lengths {
        let s1 = eval.lower_level(barrier, l1, 0.0)?;
        let mut best2: Option<(f64, LowerLevel)> = None;
        for &l2 in lengths {
            let s2 = eval.lower_level(next, l2, l1)?;
            if best2.as_ref().is_none_or(|(_, b)| s2.cost < b.cost - COST_EPS) {
                best2 = Some((l2, s2));
            }
        }
        let (l2, s2) = best2.expect("non-empty lengths");
        let total = s1.cost + s2.cost;
        if best.as_ref().is_none_or(|(bt, ..)| total < *bt - COST_EPS) {
            best = Some((total, l1, s1, l2, s2));
        }
    }
    let (total, l1, s1, l2, s2) = best.expect("non-empty lengths");
    let t = cfg.transition_time;
    Ok(Decision {
        plan: s1.to_plan(barrier, t),
        stage1: DpStage { index: 1, barrier, barrier_length: l1 },
        stage1_cost: s1.cost,
        stage2: DpStage { index: 2, barrier: next, barrier_length: l2 },
        stage2_plan: s2.to_plan(next, t),
        predicted_cost: total,
    })
}

/// Tick-level schedule of one executed barrier.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierSchedule {
    pub plan: TimingPlan,
    pub start_tick: u64,
    /// Per ring: lead phase, lag phase, and tick offsets
    /// `[lead_green_end, lead_yellow_end, lag_green_start, lag_green_end, lag_yellow_end, end]`.
    rings: [(PhaseId, PhaseId, [u64; 6]); 2],
}

/// Turns a plan into a per-tick signal schedule starting at `start_tick`:
/// lead green, transition, lag green, transition, in each ring.
///
/// Greens off the tick grid are rounded. Both rings share one rounded ring
/// total and the lag phase takes the remainder, so the rings always reach
/// the barrier line together.
pub fn execute(plan: &TimingPlan, start_tick: u64, cfg: &ScenarioConfig) -> BarrierSchedule {
    let ticks = |s: f64| cfg.seconds_to_ticks(s);
    let ring_total = ticks(plan.ring_green(Ring::One));
    let rings = Ring::BOTH.map(|ring| {
        let (lead, lag) = plan.order(ring);
        let g_lead = ticks(plan.green_of(lead).expect("lead in barrier")).min(ring_total);
        let g_lag = ring_total - g_lead;
        let yellow = ticks(cfg.yellow_time);
        let trans = ticks(cfg.transition_time);
        let lead_end = g_lead;
        let lag_start = g_lead + trans;
        let lag_end = lag_start + g_lag;
        (lead, lag, [lead_end, lead_end + yellow, lag_start, lag_end, lag_end + yellow, lag_end + trans])
    });
    BarrierSchedule { plan: plan.clone(), start_tick, rings }
}

impl BarrierSchedule {
    pub fn len_ticks(&self) -> u64 {
        self.rings[0].2[5]
    }

    pub fn end_tick(&self) -> u64 {
        self.start_tick + self.len_ticks()
    }

    pub fn contains(&self, tick: u64) -> bool {
        tick >= self.start_tick && tick < self.end_tick()
    }

    /// Signal indication and time-to-change for every phase at `tick`.
    pub fn spat(&self, tick: u64) -> SpatRecord {
        let mut states = [SignalState::Red; 8];
        let end = self.len_ticks();
        let k = tick.saturating_sub(self.start_tick).min(end);
        let mut remaining = [(end - k) as u32; 8];
        for (lead, lag, b) in &self.rings {
            let (li, gi) = (lead.index(), lag.index());
            if k < b[0] {
                states[li] = SignalState::Green;
                remaining[li] = (b[0] - k) as u32;
                remaining[gi] = (b[2] - k) as u32;
            } else if k < b[1] {
                states[li] = SignalState::Yellow;
                remaining[li] = (b[1] - k) as u32;
                remaining[gi] = (b[2] - k) as u32;
            } else if k < b[2] {
                remaining[gi] = (b[2] - k) as u32;
            } else if k < b[3] {
                states[gi] = SignalState::Green;
                remaining[gi] = (b[3] - k) as u32;
            } else if k < b[4] {
                states[gi] = SignalState::Yellow;
                remaining[gi] = (b[4] - k) as u32;
            }
        }
        SpatRecord { tick, states, remaining }
    }
}

//! Core vocabulary: phases, rings, barriers, V2X messages and timing plans.
//!
//! Phases follow the standard eight-phase dual-ring layout. Odd phases are
//! protected left turns, even phases are throughs. Each phase maps to exactly
//! one approach lane, so a `PhaseId` doubles as a movement/lane identifier.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};

/// Tolerance used when comparing plan greens (seconds).
pub const PLAN_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct PhaseId(u8);

impl PhaseId {
    pub const ALL: [PhaseId; 8] = [
        PhaseId(1),
        PhaseId(2),
        PhaseId(3),
        PhaseId(4),
        PhaseId(5),
        PhaseId(6),
        PhaseId(7),
        PhaseId(8),
    ];

    pub fn new(id: u8) -> Result<Self> {
        if (1..=8).contains(&id) {
            Ok(PhaseId(id))
        } else {
            Err(Error::Phase(id))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Zero-based index, handy for per-phase arrays.
    pub fn index(self) -> usize {
        (self.0 - 1) as usize
    }

    pub fn from_index(idx: usize) -> Self {
        assert!(idx < 8, "phase index out of range: {idx}");
        PhaseId(idx as u8 + 1)
    }

    pub fn is_through(self) -> bool {
        self.0 % 2 == 0
    }

    pub fn is_left(self) -> bool {
        !self.is_through()
    }

    pub fn ring(self) -> Ring {
        if self.0 <= 4 {
            Ring::One
        } else {
            Ring::Two
        }
    }

    pub fn barrier(self) -> Barrier {
        match self.0 {
            1 | 2 | 5 | 6 => Barrier::Major,
            _ => Barrier::Minor,
        }
    }

    /// The other phase served in the same ring and barrier.
    pub fn ring_partner(self) -> PhaseId {
        if self.is_left() {
            PhaseId(self.0 + 1)
        } else {
            PhaseId(self.0 - 1)
        }
    }

    /// Two phases may be active together iff they sit in the same barrier
    /// but in different rings.
    pub fn compatible_with(self, other: PhaseId) -> bool {
        self.barrier() == other.barrier() && self.ring() != other.ring()
    }
}

impl TryFrom<u8> for PhaseId {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        PhaseId::new(v)
    }
}

impl From<PhaseId> for u8 {
    fn from(p: PhaseId) -> u8 {
        p.0
    }
}

impl fmt::Display for PhaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ring {
    One,
    Two,
}

impl Ring {
    pub const BOTH: [Ring; 2] = [Ring::One, Ring::Two];

    pub fn index(self) -> usize {
        match self {
            Ring::One => 0,
            Ring::Two => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Barrier {
    Major,
    Minor,
}

impl Barrier {
    pub fn other(self) -> Barrier {
        match self {
            Barrier::Major => Barrier::Minor,
            Barrier::Minor => Barrier::Major,
        }
    }

    /// Left-turn phase of `ring` within this barrier.
    pub fn left(self, ring: Ring) -> PhaseId {
        let base = match ring {
            Ring::One => 0,
            Ring::Two => 4,
        };
        match self {
            Barrier::Major => PhaseId(base + 1),
            Barrier::Minor => PhaseId(base + 3),
        }
    }

    pub fn through(self, ring: Ring) -> PhaseId {
        self.left(ring).ring_partner()
    }

    pub fn phases(self) -> [PhaseId; 4] {
        Role::ALL.map(|r| self.role_phase(r))
    }

    pub fn role_phase(self, role: Role) -> PhaseId {
        match role {
            Role::D1 => self.left(Ring::One),
            Role::D2 => self.left(Ring::Two),
            Role::G1 => self.through(Ring::One),
            Role::G2 => self.through(Ring::Two),
        }
    }

    pub fn code(self) -> char {
        match self {
            Barrier::Major => 'M',
            Barrier::Minor => 'm',
        }
    }
}

/// Position of a phase within a barrier's four-vector `[d1, d2, g1, g2]`.
///
/// `D*` are the left-turn phases of rings 1/2, `G*` the through phases. The
/// left turn is the nominal lead; the executed order is carried separately
/// in [`Sequence`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    D1,
    D2,
    G1,
    G2,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::D1, Role::D2, Role::G1, Role::G2];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn ring(self) -> Ring {
        match self {
            Role::D1 | Role::G1 => Ring::One,
            Role::D2 | Role::G2 => Ring::Two,
        }
    }

    pub fn is_lead(self) -> bool {
        matches!(self, Role::D1 | Role::D2)
    }

    /// Role a phase plays within its own barrier.
    pub fn of(phase: PhaseId) -> Role {
        match (phase.ring(), phase.is_left()) {
            (Ring::One, true) => Role::D1,
            (Ring::Two, true) => Role::D2,
            (Ring::One, false) => Role::G1,
            (Ring::Two, false) => Role::G2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::D1 => "d1",
            Role::D2 => "d2",
            Role::G1 => "g1",
            Role::G2 => "g2",
        }
    }
}

/// Which phase of a ring is served first within the barrier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sequence {
    LeftLead,
    ThroughLead,
}

impl Sequence {
    pub fn code(self) -> char {
        match self {
            Sequence::LeftLead => 'L',
            Sequence::ThroughLead => 'T',
        }
    }

    pub fn class(self) -> usize {
        match self {
            Sequence::LeftLead => 0,
            Sequence::ThroughLead => 1,
        }
    }

    pub fn from_class(c: usize) -> Self {
        if c == 0 {
            Sequence::LeftLead
        } else {
            Sequence::ThroughLead
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VehicleId(pub u64);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One 10 Hz kinematic broadcast, projected onto the vehicle's lane.
#[derive(Debug, Clone, PartialEq)]
pub struct BsmRecord {
    pub vehicle_id: VehicleId,
    /// Simulation tick (one tick = one resolution step, 0.1 s at defaults).
    pub tick: u64,
    /// Meters upstream of the stop bar.
    pub position: f64,
    pub speed: f64,
    pub phase: PhaseId,
    /// Evaluation bookkeeping only. Nothing controller-side may read this.
    pub is_falsified: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SignalState {
    Green,
    Yellow,
    Red,
}

impl SignalState {
    pub fn code(self) -> char {
        match self {
            SignalState::Green => 'G',
            SignalState::Yellow => 'Y',
            SignalState::Red => 'R',
        }
    }

    pub fn from_code(c: char) -> Option<Self> {
        match c {
            'G' => Some(SignalState::Green),
            'Y' => Some(SignalState::Yellow),
            'R' => Some(SignalState::Red),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpatRecord {
    pub tick: u64,
    pub states: [SignalState; 8],
    /// Ticks until each phase's state next changes.
    pub remaining: [u32; 8],
}

impl SpatRecord {
    /// Phases currently showing green or yellow.
    pub fn active(&self) -> impl Iterator<Item = PhaseId> + '_ {
        PhaseId::ALL
            .into_iter()
            .filter(|p| self.states[p.index()] != SignalState::Red)
    }

    /// True when the active phase set is one-per-ring and barrier-compatible.
    pub fn is_safe(&self) -> bool {
        let active: Vec<PhaseId> = self.active().collect();
        for (i, a) in active.iter().enumerate() {
            for b in &active[i + 1..] {
                if !a.compatible_with(*b) {
                    return false;
                }
            }
        }
        true
    }
}

/// Green allocation for the four phases of one barrier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingPlan {
    pub barrier: Barrier,
    /// Greens in role order `[d1, d2, g1, g2]`, seconds.
    pub greens: [f64; 4],
    /// Service order per ring (index 0 = ring 1).
    pub sequence: [Sequence; 2],
    pub transition: f64,
}

impl TimingPlan {
    pub fn green(&self, role: Role) -> f64 {
        self.greens[role.index()]
    }

    pub fn green_of(&self, phase: PhaseId) -> Option<f64> {
        Role::ALL
            .into_iter()
            .find(|r| self.barrier.role_phase(*r) == phase)
            .map(|r| self.green(r))
    }

    /// Green time summed over one ring (lead + lag), excluding transitions.
    pub fn ring_green(&self, ring: Ring) -> f64 {
        match ring {
            Ring::One => self.greens[0] + self.greens[2],
            Ring::Two => self.greens[1] + self.greens[3],
        }
    }

    /// Wall-clock barrier duration: both greens of ring 1 plus two transitions.
    pub fn barrier_length(&self) -> f64 {
        self.ring_green(Ring::One) + 2.0 * self.transition
    }

    /// `(lead, lag)` phases of `ring` under this plan's sequence.
    pub fn order(&self, ring: Ring) -> (PhaseId, PhaseId) {
        let left = self.barrier.left(ring);
        let through = self.barrier.through(ring);
        match self.sequence[ring.index()] {
            Sequence::LeftLead => (left, through),
            Sequence::ThroughLead => (through, left),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanViolation {
    BelowMin { phase: PhaseId, green: f64, min: f64 },
    AboveMax { phase: PhaseId, green: f64, max: f64 },
    RingMismatch { ring1: f64, ring2: f64 },
    Transition { got: f64, expected: f64 },
}

impl fmt::Display for PlanViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanViolation::BelowMin { phase, green, min } => {
                write!(f, "phase {phase} green {green} s below minimum {min} s")
            }
            PlanViolation::AboveMax { phase, green, max } => {
                write!(f, "phase {phase} green {green} s above maximum {max} s")
            }
            PlanViolation::RingMismatch { ring1, ring2 } => {
                write!(f, "ring greens differ: ring 1 {ring1} s, ring 2 {ring2} s")
            }
            PlanViolation::Transition { got, expected } => {
                write!(f, "transition {got} s, expected {expected} s")
            }
        }
    }
}

/// Checks green bounds (in role order) then ring consistency; returns the
/// first violated constraint.
pub fn validate_plan(plan: &TimingPlan, config: &ScenarioConfig) -> Result<(), PlanViolation> {
    if (plan.transition - config.transition_time).abs() > PLAN_EPS {
        return Err(PlanViolation::Transition {
            got: plan.transition,
            expected: config.transition_time,
        });
    }
    for role in Role::ALL {
        let phase = plan.barrier.role_phase(role);
        let green = plan.green(role);
        if green < config.g_min - PLAN_EPS {
            return Err(PlanViolation::BelowMin { phase, green, min: config.g_min });
        }
        if green > config.g_max + PLAN_EPS {
            return Err(PlanViolation::AboveMax { phase, green, max: config.g_max });
        }
    }
    let ring1 = plan.ring_green(Ring::One);
    let ring2 = plan.ring_green(Ring::Two);
    if (ring1 - ring2).abs() > PLAN_EPS {
        return Err(PlanViolation::RingMismatch { ring1, ring2 });
    }
    Ok(())
}

/// Estimated time of arrival at the stop bar. Speeds below `floor_speed`
/// are clamped so stopped vehicles get a finite ETA.
pub fn eta_of(position: f64, speed: f64, floor_speed: f64) -> Result<f64> {
    if !(position >= 0.0) {
        return Err(Error::Input(format!("negative position {position}")));
    }
    if !(floor_speed > 0.0) {
        return Err(Error::Input(format!("floor speed must be positive, got {floor_speed}")));
    }
    Ok(position / speed.max(floor_speed))
}

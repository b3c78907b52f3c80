//! Falsified-trajectory attacks against the surrogate.
//!
//! At each barrier start the attacker reads the unattacked features `X_o`,
//! searches for the injection that moves the surrogate's predicted greens
//! furthest (L2), and forges BSMs that realize it. Both programs have small
//! finite feasible sets, so they are solved by enumeration.

use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::controller::Snapshot;
use crate::domain::{Barrier, BsmRecord, PhaseId, Role, VehicleId};
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::surrogate::PlanPredictor;

/// Ids of forged vehicles start here, far from any real id.
pub const FAKE_ID_BASE: u64 = 1 << 40;

/// BSM records forged per falsified vehicle (one second at 10 Hz).
pub const TRAIL_LEN: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AttackMode {
    #[default]
    None,
    /// One trajectory with a chosen ETA.
    Eta,
    /// Up to `budget` trajectories spread over the barrier's phases.
    Nav { budget: u32 },
}

impl AttackMode {
    pub fn label(self) -> String {
        match self {
            AttackMode::None => "none".into(),
            AttackMode::Eta => "eta".into(),
            AttackMode::Nav { budget } => format!("nav:{budget}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionKind {
    Eta,
    Nav,
}

/// Injections per role `[d1, d2, g1, g2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackAction {
    pub kind: ActionKind,
    pub barrier: Barrier,
    pub delta: [u32; 4],
    /// Injected ETA per role (ETA attacks); zero where nothing is injected.
    pub tau: [f64; 4],
}

impl AttackAction {
    pub fn total(&self) -> u32 {
        self.delta.iter().sum()
    }

    /// `X_a` under this action: each injection adds one vehicle to NAV and,
    /// for ETA attacks, `tau` to the phase's ETA sum.
    pub fn apply(&self, fv: &FeatureVector) -> FeatureVector {
        let mut out = fv.clone();
        for role in Role::ALL {
            let p = self.barrier.role_phase(role);
            let d = self.delta[role.index()];
            let f = out.phase_mut(p);
            f.nav += d as f64;
            if self.kind == ActionKind::Eta {
                f.eta += self.tau[role.index()] * d as f64;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub action: AttackAction,
    pub x_o: [f64; 8],
    pub x_a: [f64; 8],
    pub plan_o: [f64; 4],
    pub plan_a: [f64; 4],
    pub dissimilarity: f64,
}

pub fn dissimilarity(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn sorted_set(v: &[f64]) -> Vec<f64> {
    let mut s: Vec<f64> = v.iter().copied().filter(|t| t.is_finite() && *t >= 0.0).collect();
    s.sort_by(f64::total_cmp);
    s.dedup();
    s
}

fn best_of(
    fv: &FeatureVector,
    barrier: Barrier,
    predictor: &impl PlanPredictor,
    actions: impl IntoIterator<Item = AttackAction>,
) -> Result<AttackOutcome> {
    let plan_o = predictor.predict_greens(fv, barrier)?;
    let mut best: Option<(AttackAction, [f64; 4], f64)> = None;
    for action in actions {
        let plan_a = predictor.predict_greens(&action.apply(fv), barrier)?;
        let d = dissimilarity(&plan_o, &plan_a);
        // Strictly greater: the first action in enumeration order wins ties.
        if best.as_ref().is_none_or(|(_, _, bd)| d > *bd) {
            best = Some((action, plan_a, d));
        }
    }
    let (action, plan_a, dissimilarity) = best.ok_or_else(|| Error::Input("empty action set".into()))?;
    Ok(AttackOutcome {
        x_o: fv.attack_vector(barrier),
        x_a: action.apply(fv).attack_vector(barrier),
        action,
        plan_o,
        plan_a,
        dissimilarity,
    })
}

/// All single-trajectory ETA injections, ordered by phase id then `tau`.
pub fn p2_actions(barrier: Barrier, t_lead: &[f64], t_lag: &[f64]) -> Vec<AttackAction> {
    let (lead, lag) = (sorted_set(t_lead), sorted_set(t_lag));
    let mut roles = Role::ALL;
    roles.sort_by_key(|r| barrier.role_phase(*r));
    let mut out = Vec::new();
    for role in roles {
        let set = if role.is_lead() { &lead } else { &lag };
        for &tau in set {
            let mut delta = [0; 4];
            let mut taus = [0.0; 4];
            delta[role.index()] = 1;
            taus[role.index()] = tau;
            out.push(AttackAction { kind: ActionKind::Eta, barrier, delta, tau: taus });
        }
    }
    out
}

/// ETA falsification: one trajectory whose ETA comes from `t_lead` (left
/// turns) or `t_lag` (throughs). Ties go to the smallest phase id, then
/// the smallest ETA.
pub fn solve_p2(
    fv: &FeatureVector,
    barrier: Barrier,
    predictor: &impl PlanPredictor,
    t_lead: &[f64],
    t_lag: &[f64],
) -> Result<AttackOutcome> {
    if sorted_set(t_lead).is_empty() || sorted_set(t_lag).is_empty() {
        return Err(Error::Input("candidate ETA sets must be nonempty".into()));
    }
    best_of(fv, barrier, predictor, p2_actions(barrier, t_lead, t_lag))
}

/// Nonnegative integer 4-tuples with sum at most `budget`, ordered by sum
/// then lexicographically.
pub fn p3_tuples(budget: u32) -> Vec<[u32; 4]> {
    let mut out = Vec::new();
    for total in 0..=budget {
        for a in 0..=total {
            for b in 0..=total - a {
                for c in 0..=total - a - b {
                    out.push([a, b, c, total - a - b - c]);
                }
            }
        }
    }
    out
}

/// NAV falsification: up to `budget` trajectories spread over the four
/// phases, ETAs held fixed. Ties go to the smaller total, then the
/// lexicographically smaller tuple.
pub fn solve_p3(
    fv: &FeatureVector,
    barrier: Barrier,
    predictor: &impl PlanPredictor,
    budget: u32,
) -> Result<AttackOutcome> {
    let actions = p3_tuples(budget).into_iter().map(|delta| AttackAction {
        kind: ActionKind::Nav,
        barrier,
        delta,
        tau: [0.0; 4],
    });
    best_of(fv, barrier, predictor, actions)
}

/// Forged records plus notes on anything that could not be realized
/// exactly.
#[derive(Debug, Clone, Default)]
pub struct Forgery {
    pub records: Vec<BsmRecord>,
    pub notes: Vec<String>,
}

fn trail(id: VehicleId, phase: PhaseId, position: f64, speed: f64, tick: u64, dt: f64) -> Vec<BsmRecord> {
    (0..TRAIL_LEN)
        .rev()
        .filter(|k| *k <= tick)
        .map(|k| BsmRecord {
            vehicle_id: id,
            tick: tick - k,
            position: position + speed * k as f64 * dt,
            speed,
            phase,
            is_falsified: true,
        })
        .collect()
}

/// Forges BSM trajectories realizing `action` at `tick`.
///
/// ETA injections are placed at `tau * v` metres with `v` the largest power
/// of two not above 8 m/s that keeps the vehicle in range, so the
/// controller recomputes exactly `tau`. NAV injections queue up behind the
/// last observed vehicle of the phase, one jam spacing apart, standing
/// still.
pub fn synthesize(
    action: &AttackAction,
    snapshot: &Snapshot,
    tick: u64,
    next_id: &mut u64,
    cfg: &ScenarioConfig,
) -> Forgery {
    let mut f = Forgery::default();
    let dt = cfg.dt();
    for role in Role::ALL {
        let phase = action.barrier.role_phase(role);
        let n = action.delta[role.index()];
        if n == 0 {
            continue;
        }
        match action.kind {
            ActionKind::Eta => {
                let mut tau = action.tau[role.index()];
                let max_tau = cfg.comm_range / cfg.floor_speed.max(1.0);
                if tau > max_tau {
                    f.notes.push(format!("phase {phase}: tau {tau} s out of range, using {max_tau} s"));
                    tau = max_tau;
                }
                let mut v: f64 = 8.0;
                while v > 1.0 && tau * v > cfg.comm_range {
                    v /= 2.0;
                }
                for _ in 0..n {
                    let id = VehicleId(FAKE_ID_BASE + *next_id);
                    *next_id += 1;
                    f.records.extend(trail(id, phase, tau * v, v, tick, dt));
                }
            }
            ActionKind::Nav => {
                let tail = snapshot.vehicles(phase).iter().map(|v| v.position).fold(0.0f64, f64::max);
                let speed = 0.0;
                for k in 0..n {
                    let mut pos = tail + cfg.jam_spacing * (k + 1) as f64;
                    if pos > cfg.comm_range {
                        f.notes.push(format!("phase {phase}: no room behind queue, placing at range edge"));
                        pos = cfg.comm_range - cfg.jam_spacing * k as f64;
                    }
                    let id = VehicleId(FAKE_ID_BASE + *next_id);
                    *next_id += 1;
                    f.records.extend(trail(id, phase, pos, speed, tick, dt));
                }
                let added: f64 = f
                    .records
                    .iter()
                    .filter(|r| r.tick == tick && r.phase == phase)
                    .map(|r| r.position / r.speed.max(cfg.floor_speed))
                    .sum();
                f.notes.push(format!("phase {phase}: NAV injection adds {added:.3} s to the ETA sum"));
            }
        }
    }
    f
}

/// One attack-log line.
pub fn format_log_line(tick: u64, outcome: &AttackOutcome, realized_delta: f64) -> String {
    let v = |xs: &[f64]| xs.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(",");
    let a = &outcome.action;
    format!(
        "ATTACK {tick} {} {} delta={} tau={} xo={} xa={} fo={} fa={} dis={:.6} realized={:.6}",
        a.barrier.code(),
        match a.kind {
            ActionKind::Eta => "eta",
            ActionKind::Nav => "nav",
        },
        a.delta.map(|d| d.to_string()).join(","),
        v(&a.tau),
        v(&outcome.x_o),
        v(&outcome.x_a),
        v(&outcome.plan_o),
        v(&outcome.plan_a),
        outcome.dissimilarity,
        realized_delta
    )
}

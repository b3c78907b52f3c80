//! The attacker's stand-in for the signal controller.
//!
//! Tree 1 predicts the barrier green (lead plus lag of one ring, excluding
//! transitions). Tree 2 predicts the left-turn green of a ring; the through
//! green is what remains of the barrier. A classification tree predicts
//! each ring's service order so the surrogate can drive the intersection.

pub mod cv;
pub mod sfs;
pub mod tree;

use std::fmt::Write as _;
use std::path::Path;

use crate::audit::AuditRecord;
use crate::config::{ScenarioConfig, Tree2Scope};
use crate::domain::{Barrier, PhaseId, Ring, Role, Sequence, TimingPlan};
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureVector, View};

pub use cv::{cross_validate, metrics, Metrics};
pub use sfs::{sfs, SfsReport, SfsRound};
pub use tree::{delta_i, delta_i_weighted, mse, DecisionTree, Node, TreeKind};

type Rows = (Vec<Vec<f64>>, Vec<f64>);

/// Slot of a left-turn phase (1, 3, 5, 7) among the per-phase trees.
fn left_slot(p: PhaseId) -> usize {
    p.index() / 2
}

fn left_role(ring: Ring) -> Role {
    match ring {
        Ring::One => Role::D1,
        Ring::Two => Role::D2,
    }
}

/// Tree 1 rows: current-then-opposite barrier columns, label = barrier green.
pub fn tree1_rows(records: &[&AuditRecord], kinds: &[FeatureKind]) -> Rows {
    records
        .iter()
        .map(|r| (r.features.columns(r.barrier(), kinds, View::Barrier), r.plan.ring_green(Ring::One)))
        .unzip()
}

/// Tree 2 rows grouped by tree: four groups (phases 1, 3, 5, 7) per-phase,
/// one group pooled. Label = left-turn green.
pub fn tree2_rows(records: &[&AuditRecord], kinds: &[FeatureKind], scope: Tree2Scope) -> Vec<Rows> {
    let groups = match scope {
        Tree2Scope::PerPhase => 4,
        Tree2Scope::Pooled => 1,
    };
    let mut out: Vec<Rows> = vec![(Vec::new(), Vec::new()); groups];
    for r in records {
        for ring in Ring::BOTH {
            let g = match scope {
                Tree2Scope::PerPhase => left_slot(r.barrier().left(ring)),
                Tree2Scope::Pooled => 0,
            };
            out[g].0.push(r.features.columns(r.barrier(), kinds, View::Ring(ring)));
            out[g].1.push(r.plan.green(left_role(ring)));
        }
    }
    out
}

/// Sequence rows, ring-relative and pooled; label = sequence class.
pub fn sequence_rows(records: &[&AuditRecord], kinds: &[FeatureKind]) -> Rows {
    let mut out: Rows = (Vec::new(), Vec::new());
    for r in records {
        for ring in Ring::BOTH {
            out.0.push(r.features.columns(r.barrier(), kinds, View::Ring(ring)));
            out.1.push(r.plan.sequence[ring.index()].class() as f64);
        }
    }
    out
}

/// Turns raw tree outputs into greens `[d1, d2, g1, g2]`: each lead is
/// clamped to the green bounds, each lag is `barrier - lead` clamped, and
/// the shorter ring is then lengthened (lag first, then lead) so both rings
/// end together.
pub fn predict_timing_plan(barrier_green: f64, leads: [f64; 2], g_min: f64, g_max: f64) -> [f64; 4] {
    let mut lead = leads.map(|l| l.clamp(g_min, g_max));
    let mut lag = lead.map(|l| (barrier_green - l).clamp(g_min, g_max));
    let ring = [lead[0] + lag[0], lead[1] + lag[1]];
    let target = ring[0].max(ring[1]);
    for r in 0..2 {
        let mut deficit = target - ring[r];
        let add = deficit.min(g_max - lag[r]);
        lag[r] += add;
        deficit -= add;
        lead[r] += deficit.min(g_max - lead[r]);
    }
    [lead[0], lead[1], lag[0], lag[1]]
}

/// Maps features at a barrier start to predicted greens. Implemented by
/// the trained surrogate and by toy models in tests.
pub trait PlanPredictor {
    fn predict_greens(&self, features: &FeatureVector, barrier: Barrier) -> Result<[f64; 4]>;
}

impl<F> PlanPredictor for F
where
    F: Fn(&FeatureVector, Barrier) -> [f64; 4],
{
    fn predict_greens(&self, features: &FeatureVector, barrier: Barrier) -> Result<[f64; 4]> {
        Ok(self(features, barrier))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    pub kinds: Vec<FeatureKind>,
    pub scope: Tree2Scope,
    pub g_min: f64,
    pub g_max: f64,
    pub tree1: DecisionTree,
    /// Per-phase: trees for phases 1, 3, 5, 7. Pooled: one tree.
    pub tree2: Vec<DecisionTree>,
    pub sequence: DecisionTree,
    /// Candidate injected ETAs for left-turn (lead) and through (lag) phases.
    pub t_lead: Vec<f64>,
    pub t_lag: Vec<f64>,
}

impl SurrogateModel {
    pub fn train(records: &[&AuditRecord], kinds: &[FeatureKind], cfg: &ScenarioConfig) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InsufficientData("no audit records".into()));
        }
        if kinds.is_empty() {
            return Err(Error::Input("no features selected".into()));
        }
        let (x1, y1) = tree1_rows(records, kinds);
        let tree1 = DecisionTree::fit(&x1, &y1, TreeKind::Regression, &cfg.tree)?;
        let tree2 = tree2_rows(records, kinds, cfg.tree2_scope)
            .into_iter()
            .map(|(x, y)| {
                if x.is_empty() {
                    let width = kinds.len() * View::Ring(Ring::One).width();
                    Ok(DecisionTree::constant(cfg.g_min, width, TreeKind::Regression))
                } else {
                    DecisionTree::fit(&x, &y, TreeKind::Regression, &cfg.tree)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let (xs, ys) = sequence_rows(records, kinds);
        let sequence = DecisionTree::fit(&xs, &ys, TreeKind::Classification { classes: 2 }, &cfg.tree)?;
        Ok(SurrogateModel {
            kinds: kinds.to_vec(),
            scope: cfg.tree2_scope,
            g_min: cfg.g_min,
            g_max: cfg.g_max,
            tree1,
            tree2,
            sequence,
            t_lead: Vec::new(),
            t_lag: Vec::new(),
        })
    }

    pub fn predict_barrier_green(&self, fv: &FeatureVector, barrier: Barrier) -> Result<f64> {
        self.tree1.predict(&fv.columns(barrier, &self.kinds, View::Barrier))
    }

    /// Raw Tree 2 output for the left-turn phase of `ring`.
    pub fn predict_lead(&self, fv: &FeatureVector, barrier: Barrier, ring: Ring) -> Result<f64> {
        let tree = match self.scope {
            Tree2Scope::PerPhase => &self.tree2[left_slot(barrier.left(ring))],
            Tree2Scope::Pooled => &self.tree2[0],
        };
        tree.predict(&fv.columns(barrier, &self.kinds, View::Ring(ring)))
    }

    pub fn predict_sequence(&self, fv: &FeatureVector, barrier: Barrier, ring: Ring) -> Result<Sequence> {
        let c = self.sequence.predict(&fv.columns(barrier, &self.kinds, View::Ring(ring)))?;
        Ok(Sequence::from_class(c as usize))
    }

    /// Full predicted plan, usable in place of the controller.
    pub fn predict_plan(&self, fv: &FeatureVector, barrier: Barrier, transition: f64) -> Result<TimingPlan> {
        Ok(TimingPlan {
            barrier,
            greens: self.predict_greens(fv, barrier)?,
            sequence: [
                self.predict_sequence(fv, barrier, Ring::One)?,
                self.predict_sequence(fv, barrier, Ring::Two)?,
            ],
            transition,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("cvtsc-surrogate 1\n");
        let kinds: Vec<&str> = self.kinds.iter().map(|k| k.name()).collect();
        let _ = writeln!(s, "features {}", kinds.join(" "));
        let scope = match self.scope {
            Tree2Scope::PerPhase => "per-phase",
            Tree2Scope::Pooled => "pooled",
        };
        let _ = writeln!(s, "scope {scope}");
        let _ = writeln!(s, "bounds {:?} {:?}", self.g_min, self.g_max);
        let list = |v: &[f64]| v.iter().map(|x| format!(" {x:?}")).collect::<String>();
        let _ = writeln!(s, "t_lead{}", list(&self.t_lead));
        let _ = writeln!(s, "t_lag{}", list(&self.t_lag));
        let _ = writeln!(s, "trees {}", 2 + self.tree2.len());
        self.tree1.write_text(&mut s);
        for t in &self.tree2 {
            t.write_text(&mut s);
        }
        self.sequence.write_text(&mut s);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).filter(|(_, l)| !l.trim().is_empty());
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| Error::Parse { line: 0, msg: format!("missing {what}") })
        };
        let perr = |line: usize, msg: &str| Error::Parse { line, msg: msg.to_string() };
        let (ln, head) = next("header")?;
        if head.trim() != "cvtsc-surrogate 1" {
            return Err(perr(ln, "not a surrogate model file"));
        }
        let mut field = |key: &str| -> Result<(usize, Vec<String>)> {
            let (ln, l) = next(key)?;
            let mut it = l.split_ascii_whitespace();
            if it.next() != Some(key) {
                return Err(perr(ln, &format!("expected {key}")));
            }
            Ok((ln, it.map(str::to_string).collect()))
        };
        let (ln, kinds) = field("features")?;
        let kinds = kinds
            .iter()
            .map(|k| FeatureKind::parse(k).ok_or_else(|| perr(ln, "unknown feature")))
            .collect::<Result<Vec<_>>>()?;
        let (ln, scope) = field("scope")?;
        let scope = match scope.first().map(String::as_str) {
            Some("per-phase") => Tree2Scope::PerPhase,
            Some("pooled") => Tree2Scope::Pooled,
            _ => return Err(perr(ln, "bad scope")),
        };
        let floats = |ln: usize, v: &[String]| {
            v.iter().map(|s| s.parse::<f64>().map_err(|_| perr(ln, "bad number"))).collect::<Result<Vec<f64>>>()
        };
        let (ln, b) = field("bounds")?;
        let b = floats(ln, &b)?;
        let [g_min, g_max] = b[..] else { return Err(perr(ln, "bounds needs two values")) };
        let (ln, t) = field("t_lead")?;
        let t_lead = floats(ln, &t)?;
        let (ln, t) = field("t_lag")?;
        let t_lag = floats(ln, &t)?;
        let (ln, n) = field("trees")?;
        let n: usize = n.first().and_then(|s| s.parse().ok()).ok_or_else(|| perr(ln, "bad tree count"))?;
        let expected = match scope {
            Tree2Scope::PerPhase => 6,
            Tree2Scope::Pooled => 3,
        };
        if n != expected {
            return Err(perr(ln, "tree count does not match scope"));
        }
        let mut trees = Vec::with_capacity(n);
        for _ in 0..n {
            trees.push(DecisionTree::read_text(&mut lines)?);
        }
        if let Some((ln, _)) = lines.next() {
            return Err(perr(ln, "trailing content"));
        }
        let sequence = trees.pop().expect("n >= 3");
        let tree1 = trees.remove(0);
        Ok(SurrogateModel { kinds, scope, g_min, g_max, tree1, tree2: trees, sequence, t_lead, t_lag })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        SurrogateModel::from_text(&std::fs::read_to_string(path)?)
    }
}

impl PlanPredictor for SurrogateModel {
    fn predict_greens(&self, fv: &FeatureVector, barrier: Barrier) -> Result<[f64; 4]> {
        let b = self.predict_barrier_green(fv, barrier)?;
        let leads = [self.predict_lead(fv, barrier, Ring::One)?, self.predict_lead(fv, barrier, Ring::Two)?];
        Ok(predict_timing_plan(b, leads, self.g_min, self.g_max))
    }
}

/// Held-out accuracy of a surrogate trained on a feature subset.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct CvReport {
    /// Tree 1: barrier green.
    pub barrier: Metrics,
    /// Tree 2: left-turn (lead) green, raw tree output.
    pub lead: Metrics,
    /// Through (lag) green derived from the two trees after clamping.
    pub lag: Metrics,
}

impl CvReport {
    /// Selection criterion: mean RMSE of the two trees.
    pub fn combined_rmse(&self) -> f64 {
        (self.barrier.rmse + self.lead.rmse) / 2.0
    }
}

/// Monte Carlo cross-validation of the full surrogate on `kinds`.
pub fn evaluate(records: &[AuditRecord], kinds: &[FeatureKind], cfg: &ScenarioConfig) -> Result<CvReport> {
    let groups = cross_validate(records.len(), cfg.cv_repeats, cfg.cv_train_fraction, cfg.rng_seed, |train, test| {
        let tr: Vec<&AuditRecord> = train.iter().map(|&i| &records[i]).collect();
        let model = SurrogateModel::train(&tr, kinds, cfg)?;
        let mut barrier = Vec::new();
        let mut lead = Vec::new();
        let mut lag = Vec::new();
        for &i in test {
            let r = &records[i];
            barrier.push((model.predict_barrier_green(&r.features, r.barrier())?, r.plan.ring_green(Ring::One)));
            let greens = model.predict_greens(&r.features, r.barrier())?;
            for ring in Ring::BOTH {
                lead.push((model.predict_lead(&r.features, r.barrier(), ring)?, r.plan.green(left_role(ring))));
                let lag_role = match ring {
                    Ring::One => Role::G1,
                    Ring::Two => Role::G2,
                };
                lag.push((greens[lag_role.index()], r.plan.green(lag_role)));
            }
        }
        Ok(vec![barrier, lead, lag])
    })?;
    Ok(CvReport { barrier: groups[0], lead: groups[1], lag: groups[2] })
}

/// Forward selection over feature kinds using [`CvReport::combined_rmse`].
/// Also returns the per-candidate reports in the order tried.
pub fn select_features(
    records: &[AuditRecord],
    pool: &[FeatureKind],
    cfg: &ScenarioConfig,
) -> Result<(SfsReport<FeatureKind>, Vec<(Vec<FeatureKind>, CvReport)>)> {
    use std::sync::Mutex;
    let seen: Mutex<Vec<(Vec<FeatureKind>, CvReport)>> = Mutex::new(Vec::new());
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    let report = sfs(pool, |q| match evaluate(records, q, cfg) {
        Ok(r) => {
            seen.lock().expect("poisoned").push((q.to_vec(), r));
            r.combined_rmse()
        }
        Err(e) => {
            failure.lock().expect("poisoned").get_or_insert(e);
            f64::INFINITY
        }
    });
    if let Some(e) = failure.into_inner().expect("poisoned") {
        return Err(e);
    }
    // Rounds evaluate in parallel; restore the order the rounds list them.
    let mut seen = seen.into_inner().expect("poisoned");
    let order: Vec<Vec<FeatureKind>> = report.rounds.iter().flat_map(|r| r.tried.iter().map(|(q, _)| q.clone())).collect();
    seen.sort_by_key(|(q, _)| order.iter().position(|o| o == q));
    Ok((report, seen))
}

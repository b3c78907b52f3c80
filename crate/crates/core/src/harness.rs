//! Closed-loop runs, the training campaign, Experiments I–IV and reports.
//!
//! One barrier at a time: freeze the BSMs in range, let the attacker add
//! forged ones, ask the controller (or the surrogate) for a plan, then step
//! the world through that plan. All runs that share a seed see the same
//! arrivals because arrivals are drawn independently of the signal.

use std::fmt;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::{self, AttackMode, AttackOutcome};
use crate::audit::AuditRecord;
use crate::config::ScenarioConfig;
use crate::controller::{self, Snapshot};
use crate::domain::{validate_plan, Barrier, BsmRecord, TimingPlan};
use crate::error::{Error, Result};
use crate::features::{extract, FeatureKind, History};
use crate::logfmt::{format_bsm, format_spat};
use crate::microsim::World;
use crate::surrogate::{self, CvReport, SfsReport, SurrogateModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExperimentId {
    I,
    II,
    III,
    IV,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 4] = [ExperimentId::I, ExperimentId::II, ExperimentId::III, ExperimentId::IV];

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "I" | "1" => Some(ExperimentId::I),
            "II" | "2" => Some(ExperimentId::II),
            "III" | "3" => Some(ExperimentId::III),
            "IV" | "4" => Some(ExperimentId::IV),
            _ => None,
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ControllerMode {
    Target,
    Surrogate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub label: String,
    pub controller: ControllerMode,
    pub attack: AttackMode,
    pub hours: f64,
    pub seed: u64,
}

impl ExperimentSpec {
    /// The paper's four experiments: I baseline, II surrogate in control,
    /// III ETA attack, IV NAV attack with the configured budget.
    pub fn standard(id: ExperimentId, cfg: &ScenarioConfig, seed: u64) -> Self {
        let (controller, attack) = match id {
            ExperimentId::I => (ControllerMode::Target, AttackMode::None),
            ExperimentId::II => (ControllerMode::Surrogate, AttackMode::None),
            ExperimentId::III => (ControllerMode::Target, AttackMode::Eta),
            ExperimentId::IV => (ControllerMode::Target, AttackMode::Nav { budget: cfg.budget }),
        };
        ExperimentSpec { label: id.to_string(), controller, attack, hours: cfg.duration_hours, seed }
    }

    pub fn needs_model(&self) -> bool {
        self.controller == ControllerMode::Surrogate || self.attack != AttackMode::None
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Keep the per-barrier audit log.
    pub audit: bool,
    /// Write SPaT and BSM lines every `event_stride` ticks (0 = off).
    pub event_stride: u64,
}

/// Safety and bookkeeping counters; all zero on a healthy run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Violations {
    pub conflicting_green: u64,
    pub plan: u64,
    pub fifo: u64,
    pub red_crossings: u64,
    pub conservation: u64,
}

impl Violations {
    pub fn total(&self) -> u64 {
        self.conflicting_green + self.plan + self.fifo + self.red_crossings + self.conservation
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub seed: u64,
    pub hours: f64,
    pub arrived: u64,
    pub departed: u64,
    pub in_network: u64,
    /// Delay of completed trips plus delay accrued so far by vehicles still
    /// in the network, seconds.
    pub total_delay: f64,
    pub mean_trip_delay: f64,
    pub optimizations: u64,
    pub mean_barrier_length: f64,
    pub attacks: u64,
    pub mean_dissimilarity: f64,
    pub mean_realized_delta: f64,
    pub arrival_digest: String,
    pub conflicting_green: u64,
    pub plan_violations: u64,
    pub fifo_violations: u64,
    pub red_crossings: u64,
    pub conservation_faults: u64,
}

impl RunSummary {
    pub fn violations(&self) -> Violations {
        Violations {
            conflicting_green: self.conflicting_green,
            plan: self.plan_violations,
            fifo: self.fifo_violations,
            red_crossings: self.red_crossings,
            conservation: self.conservation_faults,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub audit: Vec<AuditRecord>,
    pub attack_log: Vec<String>,
    pub events: String,
    /// Per-vehicle ETAs seen at barrier starts: `[left turns, throughs]`.
    pub eta_samples: [Vec<f64>; 2],
    pub barrier_lengths: Vec<f64>,
    pub summary: Option<RunSummary>,
}

impl RunOutput {
    pub fn summary(&self) -> &RunSummary {
        self.summary.as_ref().expect("run finished")
    }

    pub fn audit_text(&self) -> String {
        self.audit.iter().map(|r| r.to_line() + "\n").collect()
    }

    pub fn attack_text(&self) -> String {
        self.attack_log.iter().map(|l| l.clone() + "\n").collect()
    }
}

fn plan_for(
    spec: &ExperimentSpec,
    model: Option<&SurrogateModel>,
    snapshot: &Snapshot,
    fv: &crate::features::FeatureVector,
    barrier: Barrier,
    cfg: &ScenarioConfig,
) -> Result<(TimingPlan, f64)> {
    match spec.controller {
        ControllerMode::Target => {
            let d = controller::upper_level(snapshot, barrier, cfg);
            Ok((d.plan, d.predicted_cost))
        }
        ControllerMode::Surrogate => {
            let m = model.ok_or_else(|| Error::Input("surrogate controller needs a model".into()))?;
            Ok((m.predict_plan(fv, barrier, cfg.transition_time)?, f64::NAN))
        }
    }
}

fn attack_step(
    mode: AttackMode,
    model: &SurrogateModel,
    fv: &crate::features::FeatureVector,
    barrier: Barrier,
) -> Result<Option<AttackOutcome>> {
    match mode {
        AttackMode::None => Ok(None),
        AttackMode::Eta => attack::solve_p2(fv, barrier, model, &model.t_lead, &model.t_lag).map(Some),
        AttackMode::Nav { budget } => attack::solve_p3(fv, barrier, model, budget).map(Some),
    }
}

/// Runs one closed-loop simulation.
pub fn run(
    cfg: &ScenarioConfig,
    spec: &ExperimentSpec,
    model: Option<&SurrogateModel>,
    opts: &RunOptions,
) -> Result<RunOutput> {
    if spec.needs_model() && model.is_none() {
        return Err(Error::Input(format!("experiment {} needs a trained surrogate", spec.label)));
    }
    let mut world = World::new(cfg, spec.seed);
    let mut history = History::new(cfg);
    let end = cfg.seconds_to_ticks(spec.hours * 3600.0);
    let mut out = RunOutput::default();
    let mut v = Violations::default();
    let mut barrier = Barrier::Major;
    let mut next_fake = 0u64;
    let (mut optimizations, mut attacks) = (0u64, 0u64);
    let (mut dis_sum, mut realized_sum) = (0.0, 0.0);
    history.observe(0, &world.emit_bsms());

    while world.tick() < end {
        let tick = world.tick();
        let bsms = world.emit_bsms();
        let snapshot = Snapshot::from_bsms(tick, &bsms, cfg.floor_speed)?;
        let fv = extract(&snapshot, &history, cfg);
        for p in crate::domain::PhaseId::ALL {
            let slot = usize::from(!p.is_left());
            out.eta_samples[slot].extend(snapshot.vehicles(p).iter().map(|v| v.eta));
        }

        let outcome = match model {
            Some(m) => attack_step(spec.attack, m, &fv, barrier)?,
            None => None,
        };
        let (plan, cost) = match &outcome {
            None => plan_for(spec, model, &snapshot, &fv, barrier, cfg)?,
            Some(o) => {
                let forged = attack::synthesize(&o.action, &snapshot, tick, &mut next_fake, cfg);
                for note in &forged.notes {
                    log::debug!("tick {tick}: {note}");
                }
                if opts.event_stride > 0 {
                    for r in &forged.records {
                        out.events.push_str(&format_bsm(r));
                        out.events.push('\n');
                    }
                }
                let mut seen: Vec<BsmRecord> = bsms.clone();
                seen.extend(forged.records);
                let attacked = Snapshot::from_bsms(tick, &seen, cfg.floor_speed)?;
                let (plan, cost) = plan_for(spec, model, &attacked, &fv, barrier, cfg)?;
                let (clean, _) = plan_for(spec, model, &snapshot, &fv, barrier, cfg)?;
                let realized = attack::dissimilarity(&plan.greens, &clean.greens);
                attacks += 1;
                dis_sum += o.dissimilarity;
                realized_sum += realized;
                out.attack_log.push(attack::format_log_line(tick, o, realized));
                (plan, cost)
            }
        };
        if validate_plan(&plan, cfg).is_err() {
            v.plan += 1;
        }
        optimizations += 1;
        out.barrier_lengths.push(plan.barrier_length());
        if opts.audit {
            out.audit.push(AuditRecord { tick, plan: plan.clone(), predicted_cost: cost, features: fv });
        }

        let schedule = controller::execute(&plan, tick, cfg);
        while world.tick() < schedule.end_tick() && world.tick() < end {
            let t = world.tick();
            let spat = schedule.spat(t);
            if !spat.is_safe() {
                v.conflicting_green += 1;
            }
            if opts.event_stride > 0 && t % opts.event_stride == 0 {
                out.events.push_str(&format_spat(&spat));
                out.events.push('\n');
                for r in world.emit_bsms() {
                    out.events.push_str(&format_bsm(&r));
                    out.events.push('\n');
                }
            }
            world.step(&spat.states)?;
            history.observe(world.tick(), &world.emit_bsms());
        }
        barrier = barrier.other();
    }

    let stats = world.stats().clone();
    v.fifo = stats.fifo_violations;
    v.red_crossings = stats.red_crossings;
    if stats.arrived != stats.departed + world.in_network() {
        v.conservation += 1;
    }
    let departed = world.departed();
    let trip: f64 = crate::microsim::trip_delay(departed);
    let n_bar = out.barrier_lengths.len().max(1) as f64;
    out.summary = Some(RunSummary {
        label: spec.label.clone(),
        seed: spec.seed,
        hours: spec.hours,
        arrived: stats.arrived,
        departed: stats.departed,
        in_network: world.in_network(),
        total_delay: world.total_delay(),
        mean_trip_delay: if departed.is_empty() { 0.0 } else { trip / departed.len() as f64 },
        optimizations,
        mean_barrier_length: out.barrier_lengths.iter().sum::<f64>() / n_bar,
        attacks,
        mean_dissimilarity: if attacks > 0 { dis_sum / attacks as f64 } else { 0.0 },
        mean_realized_delta: if attacks > 0 { realized_sum / attacks as f64 } else { 0.0 },
        arrival_digest: world.arrival_digest(),
        conflicting_green: v.conflicting_green,
        plan_violations: v.plan,
        fifo_violations: v.fifo,
        red_crossings: v.red_crossings,
        conservation_faults: v.conservation,
    });
    Ok(out)
}

/// Nearest-rank deciles (0 %, 10 %, …, 100 %) of `values`, deduplicated.
pub fn deciles(values: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = (0..=10).map(|q| s[((s.len() - 1) as f64 * q as f64 / 10.0).round() as usize]).collect();
    out.dedup();
    out
}

#[derive(Debug, Clone)]
pub struct Campaign {
    pub run: RunOutput,
    pub sfs: SfsReport<FeatureKind>,
    pub sfs_table: Vec<(Vec<FeatureKind>, CvReport)>,
    pub cv: CvReport,
    pub model: SurrogateModel,
}

/// Simulates the target controller for `campaign_hours`, selects features
/// and trains the surrogate on the audit log.
pub fn run_training_campaign(cfg: &ScenarioConfig) -> Result<Campaign> {
    if cfg.demand_vph.iter().all(|d| *d <= 0.0) {
        return Err(Error::InsufficientData("zero demand gives the surrogate nothing to learn".into()));
    }
    let spec = ExperimentSpec {
        label: "campaign".into(),
        controller: ControllerMode::Target,
        attack: AttackMode::None,
        hours: cfg.campaign_hours,
        seed: cfg.rng_seed,
    };
    let run = run(cfg, &spec, None, &RunOptions { audit: true, event_stride: 0 })?;
    train_from_run(run, cfg)
}

/// Feature selection and training on an existing campaign run.
pub fn train_from_run(run: RunOutput, cfg: &ScenarioConfig) -> Result<Campaign> {
    if run.audit.len() < cfg.min_training_samples {
        return Err(Error::InsufficientData(format!(
            "{} optimizations recorded, at least {} needed",
            run.audit.len(),
            cfg.min_training_samples
        )));
    }
    let (sfs, sfs_table) = surrogate::select_features(&run.audit, &FeatureKind::ALL, cfg)?;
    if sfs.selected.is_empty() {
        return Err(Error::InsufficientData("feature selection found no informative feature".into()));
    }
    let refs: Vec<&AuditRecord> = run.audit.iter().collect();
    let mut model = SurrogateModel::train(&refs, &sfs.selected, cfg)?;
    model.t_lead = deciles(&run.eta_samples[0]);
    model.t_lag = deciles(&run.eta_samples[1]);
    if model.t_lead.is_empty() || model.t_lag.is_empty() {
        return Err(Error::InsufficientData("no ETA observations for candidate sets".into()));
    }
    let cv = sfs_table
        .iter()
        .find(|(q, _)| *q == sfs.selected)
        .map(|(_, r)| *r)
        .ok_or_else(|| Error::Consistency("selected set missing from table".into()))?;
    Ok(Campaign { run, sfs, sfs_table, cv, model })
}

/// Table of every feature set tried by forward selection.
pub fn sfs_table_text(c: &Campaign) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<5} {:<24} {:>8} {:>8} {:>8}   {:>8} {:>8} {:>8}",
        "round", "features", "T1 MAE", "T1 MAPE", "T1 RMSE", "T2 MAE", "T2 MAPE", "T2 RMSE"
    );
    let mut i = 0;
    for (round, r) in c.sfs.rounds.iter().enumerate() {
        for _ in &r.tried {
            let (q, rep) = &c.sfs_table[i];
            i += 1;
            let names: Vec<&str> = q.iter().map(|k| k.name()).collect();
            let _ = writeln!(
                s,
                "{:<5} {:<24} {:>8.3} {:>8.2} {:>8.3}   {:>8.3} {:>8.2} {:>8.3}",
                round + 1,
                names.join("+"),
                rep.barrier.mae,
                rep.barrier.mape,
                rep.barrier.rmse,
                rep.lead.mae,
                rep.lead.mape,
                rep.lead.rmse
            );
        }
        if let Some(k) = r.added {
            let _ = writeln!(s, "      -> add {k}");
        } else {
            let _ = writeln!(s, "      -> stop");
        }
    }
    let names: Vec<&str> = c.sfs.selected.iter().map(|k| k.name()).collect();
    let _ = writeln!(s, "critical features: {}", names.join(", "));
    s
}

/// One replication of one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub id: ExperimentId,
    pub replication: u32,
    pub output: RunOutput,
}

/// Runs `ids` for `replications` seeds (`seed`, `seed + 1`, …) in parallel.
/// Experiments sharing a replication share a seed and thus arrivals.
pub fn run_experiments(
    cfg: &ScenarioConfig,
    ids: &[ExperimentId],
    model: Option<&SurrogateModel>,
    replications: u32,
    opts: &RunOptions,
) -> Result<Vec<ExperimentRun>> {
    let jobs: Vec<(ExperimentId, u32)> =
        (0..replications).flat_map(|r| ids.iter().map(move |id| (*id, r))).collect();
    jobs.par_iter()
        .map(|&(id, r)| {
            let spec = ExperimentSpec::standard(id, cfg, cfg.rng_seed + r as u64);
            let output = run(cfg, &spec, model, opts)?;
            Ok(ExperimentRun { id, replication: r, output })
        })
        .collect()
}

/// Mean over replications of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub id: ExperimentId,
    pub replications: u32,
    pub total_delay: f64,
    pub mean_trip_delay: f64,
    pub mean_barrier_length: f64,
}

/// Groups run summaries by experiment label (`I`..`IV`) and averages them.
/// Rows with other labels are ignored.
pub fn summarize<'a>(runs: impl IntoIterator<Item = &'a RunSummary>) -> Vec<ExperimentSummary> {
    let runs: Vec<&RunSummary> = runs.into_iter().collect();
    ExperimentId::ALL
        .iter()
        .filter_map(|id| {
            let rs: Vec<&&RunSummary> = runs.iter().filter(|r| ExperimentId::parse(&r.label) == Some(*id)).collect();
            if rs.is_empty() {
                return None;
            }
            let n = rs.len() as f64;
            Some(ExperimentSummary {
                id: *id,
                replications: rs.len() as u32,
                total_delay: rs.iter().map(|s| s.total_delay).sum::<f64>() / n,
                mean_trip_delay: rs.iter().map(|s| s.mean_trip_delay).sum::<f64>() / n,
                mean_barrier_length: rs.iter().map(|s| s.mean_barrier_length).sum::<f64>() / n,
            })
        })
        .collect()
}

/// Reads the per-run CSV written by [`runs_csv`].
pub fn read_runs_csv(text: &str) -> Result<Vec<RunSummary>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    Ok(r.deserialize().collect::<std::result::Result<Vec<RunSummary>, _>>()?)
}

/// Percent change of each experiment's total delay against Experiment I,
/// or `None` when I is missing.
pub fn percent_vs_baseline(summaries: &[ExperimentSummary]) -> Option<Vec<(ExperimentId, f64)>> {
    let base = summaries.iter().find(|s| s.id == ExperimentId::I)?.total_delay;
    Some(summaries.iter().map(|s| (s.id, 100.0 * (s.total_delay - base) / base)).collect())
}

/// Comparison table and plot-data CSV (`experiment,total_delay_s`).
pub fn report(summaries: &[ExperimentSummary]) -> Result<(String, String)> {
    if summaries.is_empty() {
        return Err(Error::Input("no summaries to report".into()));
    }
    let pct = percent_vs_baseline(summaries).filter(|p| p.len() > 1);
    if summaries.iter().all(|s| s.id != ExperimentId::I) {
        log::warn!("experiment I missing; percentage column omitted");
    }
    let mut table = String::new();
    let _ = write!(table, "{:<10} {:>5} {:>16} {:>14} {:>12}", "experiment", "reps", "total delay (s)", "per trip (s)", "barrier (s)");
    if pct.is_some() {
        table.push_str("   vs I (%)");
    }
    table.push('\n');
    for (i, s) in summaries.iter().enumerate() {
        let _ = write!(
            table,
            "{:<10} {:>5} {:>16.1} {:>14.2} {:>12.2}",
            s.id.to_string(),
            s.replications,
            s.total_delay,
            s.mean_trip_delay,
            s.mean_barrier_length
        );
        if let Some(p) = &pct {
            let _ = write!(table, "   {:>+8.2}", p[i].1);
        }
        table.push('\n');
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["experiment", "total_delay_s"])?;
    for s in summaries {
        w.write_record([s.id.to_string(), format!("{:.6}", s.total_delay)])?;
    }
    let plot = String::from_utf8(w.into_inner().map_err(|e| Error::Input(e.to_string()))?)
        .map_err(|e| Error::Input(e.to_string()))?;
    Ok((table, plot))
}

/// Per-run CSV with every summary field.
pub fn runs_csv<'a>(runs: impl IntoIterator<Item = &'a RunSummary>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in runs {
        w.serialize(r)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Input(e.to_string()))?).map_err(|e| Error::Input(e.to_string()))
}

/// Hex SHA-256 of a byte string, for comparing logs.
pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

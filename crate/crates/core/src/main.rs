use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use cvtsc::attack::AttackMode;
use cvtsc::audit::parse_audit_log;
use cvtsc::features::FeatureKind;
use cvtsc::harness::{self, ControllerMode, ExperimentId, ExperimentSpec, RunOptions};
use cvtsc::surrogate::{self, SurrogateModel};
use cvtsc::{Result, ScenarioConfig};

#[derive(Parser)]
#[command(name = "cvtsc", version, about = "Falsified-BSM attacks on a connected-vehicle signal controller")]
struct Cli {
    /// Scenario config (TOML). Defaults reproduce the case-study intersection.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base random seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Simulated hours (overrides the config's run or campaign length).
    #[arg(long, global = true)]
    hours: Option<f64>,
    /// Falsified-trajectory budget for NAV attacks.
    #[arg(long, global = true)]
    budget: Option<u32>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Eta,
    Nav,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the target controller with no attack and write logs.
    Simulate {
        /// Write SPaT/BSM lines every this many ticks (0 = no event log).
        #[arg(long, default_value_t = 10)]
        event_stride: u64,
    },
    /// Run the training campaign, select features and fit the surrogate.
    Train,
    /// Run forward selection on an existing audit log.
    SelectFeatures {
        #[arg(long)]
        audit: PathBuf,
    },
    /// Run the target controller under attack.
    Attack {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
    },
    /// Run Experiments I–IV (or a subset) with replications.
    Experiment {
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated experiment ids.
        #[arg(long, default_value = "I,II,III,IV")]
        ids: String,
        #[arg(long)]
        replications: Option<u32>,
    },
    /// Build the comparison table from a runs CSV.
    Report {
        #[arg(long)]
        runs: PathBuf,
    },
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = real_main(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn real_main(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.rng_seed = s;
    }
    if let Some(b) = cli.budget {
        cfg.budget = b;
    }
    let started = Instant::now();
    let out = cli.out.as_path();
    fs::create_dir_all(out)?;

    match cli.cmd {
        Cmd::Simulate { event_stride } => {
            if let Some(h) = cli.hours {
                cfg.duration_hours = h;
            }
            let spec = ExperimentSpec::standard(ExperimentId::I, &cfg, cfg.rng_seed);
            let run = harness::run(&cfg, &spec, None, &RunOptions { audit: true, event_stride })?;
            write(out, "audit.log", &run.audit_text())?;
            if event_stride > 0 {
                write(out, "events.log", &run.events)?;
            }
            write(out, "runs.csv", &harness::runs_csv([run.summary()])?)?;
            let s = run.summary();
            println!(
                "{} vehicles arrived, {} departed, total delay {:.1} s, {} optimizations, mean barrier {:.2} s",
                s.arrived, s.departed, s.total_delay, s.optimizations, s.mean_barrier_length
            );
        }
        Cmd::Train => {
            if let Some(h) = cli.hours {
                cfg.campaign_hours = h;
            }
            let c = harness::run_training_campaign(&cfg)?;
            write(out, "audit.log", &c.run.audit_text())?;
            write(out, "model.txt", &c.model.to_text())?;
            let table = harness::sfs_table_text(&c);
            write(out, "sfs.txt", &table)?;
            print!("{table}");
            println!(
                "{} optimizations; held-out MAE barrier {:.3} s, lead {:.3} s, lag {:.3} s",
                c.run.audit.len(),
                c.cv.barrier.mae,
                c.cv.lead.mae,
                c.cv.lag.mae
            );
        }
        Cmd::SelectFeatures { audit } => {
            let records = parse_audit_log(&fs::read_to_string(&audit)?, cfg.transition_time)?;
            let (rep, table) = surrogate::select_features(&records, &FeatureKind::ALL, &cfg)?;
            let mut text = String::new();
            for (q, r) in &table {
                let names: Vec<&str> = q.iter().map(|k| k.name()).collect();
                text.push_str(&format!(
                    "{:<24} T1 MAE {:.3} RMSE {:.3}   T2 MAE {:.3} RMSE {:.3}\n",
                    names.join("+"),
                    r.barrier.mae,
                    r.barrier.rmse,
                    r.lead.mae,
                    r.lead.rmse
                ));
            }
            let names: Vec<&str> = rep.selected.iter().map(|k| k.name()).collect();
            text.push_str(&format!("critical features: {}\n", names.join(", ")));
            write(out, "sfs.txt", &text)?;
            print!("{text}");
        }
        Cmd::Attack { model, mode } => {
            if let Some(h) = cli.hours {
                cfg.duration_hours = h;
            }
            let model = SurrogateModel::load(&model)?;
            let attack = match mode {
                ModeArg::Eta => AttackMode::Eta,
                ModeArg::Nav => AttackMode::Nav { budget: cfg.budget },
            };
            let spec = ExperimentSpec {
                label: format!("attack-{}", attack.label()),
                controller: ControllerMode::Target,
                attack,
                hours: cfg.duration_hours,
                seed: cfg.rng_seed,
            };
            let run = harness::run(&cfg, &spec, Some(&model), &RunOptions { audit: true, event_stride: 0 })?;
            write(out, "attack.log", &run.attack_text())?;
            write(out, "audit.log", &run.audit_text())?;
            write(out, "runs.csv", &harness::runs_csv([run.summary()])?)?;
            let s = run.summary();
            println!(
                "{} attacks, mean predicted dissimilarity {:.3}, mean realized plan change {:.3}, total delay {:.1} s",
                s.attacks, s.mean_dissimilarity, s.mean_realized_delta, s.total_delay
            );
        }
        Cmd::Experiment { model, ids, replications } => {
            if let Some(h) = cli.hours {
                cfg.duration_hours = h;
            }
            let ids = ids
                .split(',')
                .map(|s| {
                    ExperimentId::parse(s.trim())
                        .ok_or_else(|| cvtsc::Error::Input(format!("unknown experiment id {s:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let model = SurrogateModel::load(&model)?;
            let reps = replications.unwrap_or(cfg.replications);
            let runs = harness::run_experiments(&cfg, &ids, Some(&model), reps, &RunOptions::default())?;
            for r in &runs {
                let name = format!("attack_{}_{}.log", r.id, r.replication);
                if !r.output.attack_log.is_empty() {
                    write(out, &name, &r.output.attack_text())?;
                }
            }
            let summaries: Vec<_> = runs.iter().map(|r| r.output.summary().clone()).collect();
            write(out, "runs.csv", &harness::runs_csv(&summaries)?)?;
            let (table, plot) = harness::report(&harness::summarize(&summaries))?;
            write(out, "report.txt", &table)?;
            write(out, "plot.csv", &plot)?;
            print!("{table}");
        }
        Cmd::Report { runs } => {
            let rows = harness::read_runs_csv(&fs::read_to_string(&runs)?)?;
            let (table, plot) = harness::report(&harness::summarize(&rows))?;
            write(out, "report.txt", &table)?;
            write(out, "plot.csv", &plot)?;
            print!("{table}");
        }
    }
    info!("done in {:.1} s", started.elapsed().as_secs_f64());
    Ok(())
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nearlin::commands::{assumption, bound_sweep, optimistic, selftest, RunOptions};
use nearlin::config::ExperimentConfig;
use nearlin::error::CliError;

#[derive(Parser)]
#[command(name = "nearlin", version, about = "Generalization bounds for nearly-linear networks")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Worker threads for independent runs (default: one per core).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory, overriding the config's `outputs`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train each sweep point and evaluate the bound along the trajectory.
    BoundSweep(Common),
    /// Check that the projected loss never increases.
    AssumptionCheck(Common),
    /// Twin-train and evaluate proxy-based risk estimates.
    Optimistic(Common),
    /// Oracle and invariant suite; the config is not needed.
    Selftest {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(c: &Common) -> Result<(ExperimentConfig, RunOptions), CliError> {
    let cfg = ExperimentConfig::load(&c.config)?;
    Ok((
        cfg,
        RunOptions {
            workers: c.workers,
            out: c.out.clone(),
        },
    ))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Cmd::BoundSweep(c) => {
            let (cfg, opts) = load(&c)?;
            let report = bound_sweep::run(&cfg, &opts)?;
            let mut failed = 0;
            for p in &report.summary.points {
                match &p.error {
                    Some(e) => {
                        failed += 1;
                        eprintln!("point {}: failed: {e}", p.index);
                    }
                    None => {
                        for &k in &cfg.bound.kappa {
                            let best = p.min_total(k).map_or("n/a".into(), |v| format!("{v:.6}"));
                            println!(
                                "point {} L={} beta={} eps={} p={} kappa={k}: min total {best}",
                                p.index, p.net.depth, p.net.beta, p.net.epsilon, p.p
                            );
                        }
                    }
                }
            }
            if failed > 0 {
                return Err(CliError::Compute(format!("{failed} sweep point(s) failed")));
            }
        }
        Cmd::AssumptionCheck(c) => {
            let (cfg, opts) = load(&c)?;
            let report = assumption::run(&cfg, &opts)?;
            for ch in &report.summary.checks {
                let status = if ch.passed { "pass" } else { "FAIL" };
                println!(
                    "epsilon {}: {status} (max increase {:?}, min alignment {:?})",
                    ch.epsilon, ch.max_increase, ch.min_alignment
                );
            }
            report.as_result()?;
        }
        Cmd::Optimistic(c) => {
            let (cfg, opts) = load(&c)?;
            let report = optimistic::run(&cfg, &opts)?;
            for r in &report.summary.runs {
                if let Some(e) = &r.error {
                    return Err(CliError::Compute(format!("epsilon = {}: {e}", r.epsilon)));
                }
                println!("epsilon {}: {}", r.epsilon, r.phase_description.as_deref().unwrap_or(""));
                for p in &r.proxies {
                    println!(
                        "  {}: phase-2 max {:?}, vacuous from {:?}",
                        p.proxy.name(),
                        p.phase2_max,
                        p.vacuous_from
                    );
                }
            }
        }
        Cmd::Selftest { config, workers: _, out } => {
            if let Some(path) = config {
                ExperimentConfig::load(&path)?;
            }
            let report = selftest::run(&selftest::SelftestOptions::default())?;
            let text = report.render();
            print!("{text}");
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("selftest.txt"), &text)?;
            }
            if !report.passed() {
                let names: Vec<_> = report.failures().map(|c| format!("{} at {}", c.name, c.at)).collect();
                return Err(CliError::Invariant(names.join("; ")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nearlin: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! `assumption-check`: the projected loss must not increase along training.

use nearlin_core::netflow::{monotone_violations, Trajectory};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{write_json, RunOptions};
use crate::config::{Command, ExperimentConfig, NetConfig};
use crate::csvout::{fmt17, write_csv};
use crate::data::{load_dataset, LoadedData};
use crate::error::CliError;
use crate::run::{train_cached, train_config};

pub const ASSUMPTION_CSV_HEADER: &str = "t,loss,projected_loss,alignment";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonCheck {
    pub epsilon: f64,
    pub error: Option<String>,
    pub passed: bool,
    /// Largest increase between consecutive log points (negative when strictly decreasing).
    pub max_increase: Option<f64>,
    /// Times at which the increase exceeded the slack.
    pub violations: Vec<f64>,
    pub min_alignment: Option<f64>,
    pub csv: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionSummary {
    pub config_hash: String,
    pub dataset_hash: String,
    pub slack: f64,
    pub passed: bool,
    pub checks: Vec<EpsilonCheck>,
}

pub struct AssumptionReport {
    pub summary: AssumptionSummary,
    pub trajectories: Vec<Option<Trajectory>>,
}

impl AssumptionReport {
    /// `Invariant` naming the first offending `(ε, t)`, if any.
    pub fn as_result(&self) -> Result<(), CliError> {
        for c in &self.summary.checks {
            if let Some(e) = &c.error {
                return Err(CliError::Compute(format!("epsilon = {}: {e}", c.epsilon)));
            }
            if let Some(t) = c.violations.first() {
                return Err(CliError::Invariant(format!(
                    "projected loss increased at epsilon = {}, t = {t}",
                    c.epsilon
                )));
            }
        }
        Ok(())
    }
}

fn check_one(
    cfg: &ExperimentConfig,
    data: &LoadedData,
    epsilon: f64,
    opts: &RunOptions,
    hash: &str,
) -> Result<(EpsilonCheck, Trajectory), CliError> {
    let net = NetConfig {
        epsilon,
        ..cfg.net.clone()
    };
    let t_end = cfg.train.t_end.expect("validated");
    let mut section = cfg.train.clone();
    section.record_alignment = true;
    let tc = train_config(&section, t_end, Vec::new(), Vec::new(), Vec::new());
    let traj = train_cached(data, &net, epsilon, &tc, &opts.cache(cfg))?;
    let slack = cfg.assumption.slack;
    let violations = monotone_violations(&traj.times, &traj.projected_losses, slack);
    let max_increase = traj
        .projected_losses
        .windows(2)
        .map(|w| w[1] - w[0])
        .max_by(f64::total_cmp);
    let rows: Vec<String> = (0..traj.len())
        .map(|k| {
            [
                fmt17(traj.times[k]),
                fmt17(traj.losses[k]),
                fmt17(traj.projected_losses[k]),
                traj.alignment_values.get(k).map_or_else(String::new, |v| fmt17(*v)),
            ]
            .join(",")
        })
        .collect();
    let name = format!("assumption-eps-{epsilon}.csv");
    write_csv(&opts.out_dir(cfg).join(&name), hash, ASSUMPTION_CSV_HEADER, &rows)?;
    Ok((
        EpsilonCheck {
            epsilon,
            error: None,
            passed: violations.is_empty(),
            max_increase,
            violations: violations.iter().map(|v| v.t).collect(),
            min_alignment: traj.alignment_values.iter().copied().min_by(f64::total_cmp),
            csv: Some(name),
        },
        traj,
    ))
}

pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<AssumptionReport, CliError> {
    cfg.validate(Command::AssumptionCheck)?;
    let data = load_dataset(&cfg.dataset, false)?;
    run_with_data(cfg, &data, opts)
}

/// [`run`] on already loaded data. Violations are reported, not returned as errors;
/// see [`AssumptionReport::as_result`].
pub fn run_with_data(cfg: &ExperimentConfig, data: &LoadedData, opts: &RunOptions) -> Result<AssumptionReport, CliError> {
    cfg.validate(Command::AssumptionCheck)?;
    std::fs::create_dir_all(opts.out_dir(cfg))?;
    let hash = cfg.hash();
    let results: Vec<(EpsilonCheck, Option<Trajectory>)> = opts.pool()?.install(|| {
        cfg.assumption
            .epsilons
            .par_iter()
            .map(|&eps| match check_one(cfg, data, eps, opts, &hash) {
                Ok((c, t)) => (c, Some(t)),
                Err(e) => (
                    EpsilonCheck {
                        epsilon: eps,
                        error: Some(e.to_string()),
                        passed: false,
                        max_increase: None,
                        violations: Vec::new(),
                        min_alignment: None,
                        csv: None,
                    },
                    None,
                ),
            })
            .collect()
    });
    let (checks, trajectories): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let summary = AssumptionSummary {
        config_hash: hash,
        dataset_hash: data.hash.clone(),
        slack: cfg.assumption.slack,
        passed: checks.iter().all(|c| c.passed),
        checks,
    };
    write_json(&opts.out_dir(cfg).join("assumption-summary.json"), &summary)?;
    Ok(AssumptionReport { summary, trajectories })
}

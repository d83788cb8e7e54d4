//! `optimistic`: twin-train a leaky-ReLU net and a linear net on the same step
//! schedule, then estimate the test risk through proxies built from the linear one.

use nearlin_core::netflow::{StepRule, Trajectory};
use nearlin_core::proxy::{build_proxy, phase_detector, K2Fitter, PairedOutputs, Phases, ProxyKind, ProxyModel};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{write_json, RunOptions};
use crate::config::{Command, ExperimentConfig, NetConfig};
use crate::csvout::{fmt17, write_csv};
use crate::data::{load_dataset, LoadedData};
use crate::error::CliError;
use crate::run::{log_times, train_cached, train_config};

pub const OPTIMISTIC_CSV_HEADER: &str =
    "t,phase,train_loss,train_risk,test_risk,train_margin_risk,proxy_gap,deviation_term,total";
pub const BEST_CSV_HEADER: &str = "t,phase,train_loss,test_risk,best_gamma,total";

/// Risk of random guessing on two classes; totals at or above it are vacuous.
pub const VACUOUS: f64 = 0.5;

/// One proxy along the trajectory, minimized over the margin grid at each time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyTrace {
    pub proxy: ProxyKind,
    pub times: Vec<f64>,
    pub best_total: Vec<f64>,
    pub best_gamma: Vec<f64>,
    /// `totals[g][k]` at `gammas[g]`.
    pub totals: Vec<Vec<f64>>,
    /// Largest `best_total` over phase 2, `None` if phase 2 has no log point.
    pub phase2_max: Option<f64>,
    /// First time at or after phase 2 starts with `best_total ≥ 0.5`.
    pub vacuous_from: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonRun {
    pub epsilon: f64,
    pub error: Option<String>,
    pub phases: Option<Phases>,
    pub phase_description: Option<String>,
    pub test_risk: Vec<f64>,
    pub proxies: Vec<ProxyTrace>,
}

impl EpsilonRun {
    pub fn trace(&self, kind: ProxyKind) -> Option<&ProxyTrace> {
        self.proxies.iter().find(|p| p.proxy == kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimisticSummary {
    pub config_hash: String,
    pub dataset_hash: String,
    pub linear_optimum_loss: f64,
    pub linear_optimum_risk: f64,
    pub gammas: Vec<f64>,
    pub runs: Vec<EpsilonRun>,
}

pub struct OptimisticReport {
    pub summary: OptimisticSummary,
    /// `(nonlinear, linear twin)` per epsilon.
    pub trajectories: Vec<Option<(Trajectory, Trajectory)>>,
}

/// Trains the leaky-ReLU net, then the linear net replaying its step sizes, with
/// weight snapshots at every log time.
pub fn twin_train(
    cfg: &ExperimentConfig,
    data: &LoadedData,
    epsilon: f64,
    gammas: &[f64],
    opts: &RunOptions,
) -> Result<(Trajectory, Trajectory), CliError> {
    let cache = opts.cache(cfg);
    let t_end = cfg.train.t_end.expect("validated");
    let times = log_times(&cfg.train, t_end);
    let mut section = cfg.train.clone();
    section.record_alignment = false;
    section.log_points = 0;
    section.log_interval = Some(t_end);
    let tc = train_config(&section, t_end, times.clone(), gammas.to_vec(), times);
    let net = NetConfig {
        epsilon,
        ..cfg.net.clone()
    };
    let nonlin = train_cached(data, &net, epsilon, &tc, &cache)?;
    let mut tc_lin = tc.clone();
    if matches!(tc.step, StepRule::Adaptive { .. }) {
        tc_lin.step = StepRule::Replay {
            steps: nonlin.step_sizes.clone(),
        };
    }
    let lin_net = NetConfig {
        epsilon: 0.0,
        ..cfg.net.clone()
    };
    let lin = train_cached(data, &lin_net, 0.0, &tc_lin, &cache)?;
    if lin.times != nonlin.times || lin.snapshots.len() != nonlin.snapshots.len() {
        return Err(CliError::Compute("twin runs logged different times".into()));
    }
    Ok((nonlin, lin))
}

fn proxy_at(
    kind: ProxyKind,
    lin: &nearlin_core::netflow::NetworkWeights,
    nonlin: &nearlin_core::netflow::NetworkWeights,
    epsilon: f64,
    fitter: &K2Fitter,
) -> Result<ProxyModel, CliError> {
    Ok(match kind {
        ProxyKind::K2 => fitter.build(lin, nonlin, epsilon)?,
        _ => build_proxy(kind, lin, None, epsilon, None)?,
    })
}

fn run_epsilon(
    cfg: &ExperimentConfig,
    data: &LoadedData,
    epsilon: f64,
    opts: &RunOptions,
    hash: &str,
    fitter: &K2Fitter,
) -> Result<(EpsilonRun, (Trajectory, Trajectory)), CliError> {
    let test = data
        .test
        .as_ref()
        .ok_or_else(|| CliError::Data("optimistic needs a test split".into()))?;
    let train_set = data.train.train_set();
    let gammas = cfg.optimistic.gammas();
    let (nonlin, lin) = twin_train(cfg, data, epsilon, &gammas, opts)?;
    let (lin_loss, lin_risk) = data.train.linear_optimum();
    let phases = phase_detector(&nonlin, lin_loss, lin_risk, cfg.optimistic.phase_tol);

    let n = nonlin.snapshots.len();
    let times: Vec<f64> = nonlin.snapshots.iter().map(|s| s.t).collect();
    let mut test_risk = Vec::with_capacity(n);
    let mut traces: Vec<ProxyTrace> = cfg
        .optimistic
        .proxies
        .iter()
        .map(|&proxy| ProxyTrace {
            proxy,
            times: times.clone(),
            best_total: Vec::with_capacity(n),
            best_gamma: Vec::with_capacity(n),
            totals: vec![Vec::with_capacity(n); gammas.len()],
            phase2_max: None,
            vacuous_from: None,
        })
        .collect();
    let mut rows: Vec<Vec<Vec<String>>> = vec![vec![Vec::with_capacity(n); gammas.len()]; traces.len()];
    let mut best_rows: Vec<Vec<String>> = vec![Vec::with_capacity(n); traces.len()];

    for k in 0..n {
        let t = times[k];
        let f = &nonlin.snapshots[k].weights;
        let g = &lin.snapshots[k].weights;
        let ki = nonlin.nearest_index(t).expect("non-empty");
        let phase = phases.phase_at(t);
        let loss = nonlin.losses[ki];
        let mut risk_here = None;
        for (pi, trace) in traces.iter_mut().enumerate() {
            let proxy = proxy_at(trace.proxy, g, f, epsilon, fitter)?;
            let paired = PairedOutputs::compute(f, &proxy, &train_set, test)?;
            let tr = *risk_here.get_or_insert_with(|| paired.test_risk());
            let mut best = (f64::INFINITY, f64::NAN);
            for (gi, &gamma) in gammas.iter().enumerate() {
                let o = paired.optimistic(gamma)?;
                trace.totals[gi].push(o.total);
                if o.total < best.0 {
                    best = (o.total, gamma);
                }
                rows[pi][gi].push(
                    [
                        fmt17(t),
                        phase.to_string(),
                        fmt17(loss),
                        fmt17(nonlin.train_risks[ki]),
                        fmt17(tr),
                        fmt17(o.train_margin_risk),
                        fmt17(o.proxy_gap),
                        fmt17(o.deviation_term),
                        fmt17(o.total),
                    ]
                    .join(","),
                );
            }
            trace.best_total.push(best.0);
            trace.best_gamma.push(best.1);
            best_rows[pi].push(
                [fmt17(t), phase.to_string(), fmt17(loss), fmt17(tr), fmt17(best.1), fmt17(best.0)].join(","),
            );
        }
        test_risk.push(risk_here.unwrap_or(f64::NAN));
    }

    let out = opts.out_dir(cfg);
    for (pi, trace) in traces.iter_mut().enumerate() {
        let name = trace.proxy.name();
        for (gi, gamma) in gammas.iter().enumerate() {
            write_csv(
                &out.join(format!("optimistic-{name}-eps-{epsilon}-gamma-{gamma:.3e}.csv")),
                hash,
                OPTIMISTIC_CSV_HEADER,
                &rows[pi][gi],
            )?;
        }
        write_csv(
            &out.join(format!("optimistic-{name}-eps-{epsilon}-best.csv")),
            hash,
            BEST_CSV_HEADER,
            &best_rows[pi],
        )?;
        trace.phase2_max = times
            .iter()
            .zip(&trace.best_total)
            .filter(|(t, _)| phases.phase_at(**t) == 2)
            .map(|(_, v)| *v)
            .max_by(f64::total_cmp);
        trace.vacuous_from = phases.t1.and_then(|t1| {
            times
                .iter()
                .zip(&trace.best_total)
                .find(|(t, v)| **t >= t1 && **v >= VACUOUS)
                .map(|(t, _)| *t)
        });
    }
    write_csv(
        &out.join(format!("optimistic-eps-{epsilon}-trajectory.csv")),
        hash,
        &nonlin.csv_header(),
        &nonlin.csv_rows(),
    )?;
    Ok((
        EpsilonRun {
            epsilon,
            error: None,
            phases: Some(phases),
            phase_description: Some(phases.describe()),
            test_risk,
            proxies: traces,
        },
        (nonlin, lin),
    ))
}

pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<OptimisticReport, CliError> {
    cfg.validate(Command::Optimistic)?;
    let data = load_dataset(&cfg.dataset, true)?;
    run_with_data(cfg, &data, opts)
}

/// [`run`] on already loaded data, which must include a test split.
pub fn run_with_data(cfg: &ExperimentConfig, data: &LoadedData, opts: &RunOptions) -> Result<OptimisticReport, CliError> {
    cfg.validate(Command::Optimistic)?;
    if data.test.is_none() {
        return Err(CliError::Data("optimistic needs a test split".into()));
    }
    std::fs::create_dir_all(opts.out_dir(cfg))?;
    let hash = cfg.hash();
    let fitter = K2Fitter::new(&data.train.x_tilde)?;
    let results: Vec<_> = opts.pool()?.install(|| {
        cfg.optimistic
            .epsilons
            .par_iter()
            .map(|&eps| match run_epsilon(cfg, data, eps, opts, &hash, &fitter) {
                Ok((r, t)) => (r, Some(t)),
                Err(e) => (
                    EpsilonRun {
                        epsilon: eps,
                        error: Some(e.to_string()),
                        phases: None,
                        phase_description: None,
                        test_risk: Vec::new(),
                        proxies: Vec::new(),
                    },
                    None,
                ),
            })
            .collect()
    });
    let (runs, trajectories): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let (lin_loss, lin_risk) = data.train.linear_optimum();
    let summary = OptimisticSummary {
        config_hash: hash,
        dataset_hash: data.hash.clone(),
        linear_optimum_loss: lin_loss,
        linear_optimum_risk: lin_risk,
        gammas: cfg.optimistic.gammas(),
        runs,
    };
    write_json(&opts.out_dir(cfg).join("optimistic-summary.json"), &summary)?;
    Ok(OptimisticReport { summary, trajectories })
}

//! `bound-sweep`: train each sweep point once, then evaluate the bound for every
//! `(κ, γ)` along the logged trajectory.

use std::path::Path;

use nearlin_core::abound::{
    blowup_time, bound_at, compute_intermediates, residual_ceilings, train_time_deep, train_time_shallow, u_of_t,
    BoundBreakdown, BoundConfig, BoundIntermediates, Horizon,
};
use nearlin_core::netflow::Trajectory;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{write_json, RunOptions};
use crate::cache::TrajectoryCache;
use crate::config::{Command, ExperimentConfig, NetConfig, SweepPoint};
use crate::csvout::{fmt17, opt17, write_csv};
use crate::data::{load_dataset, LoadedData};
use crate::error::CliError;
use crate::run::{init_spec, train_cached, train_config};

pub const BOUND_CSV_HEADER: &str = "t,kappa,gamma,u,v,w_u,w_beta,upsilon,delta_term,train_margin_risk,total";

/// Fraction of the blow-up time that training and evaluation stay below.
const HORIZON_FRACTION: f64 = 0.999;

/// Best bound over the logged times for one `(κ, γ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundEntry {
    pub kappa: u8,
    pub gamma: f64,
    pub gamma_label: String,
    /// `None` when no logged time lies inside the horizon.
    pub min_total: Option<f64>,
    pub argmin_t: Option<f64>,
    pub at_argmin: Option<BoundBreakdown>,
}

/// Largest ratio of each measured quantity to its envelope over all log points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCheck {
    /// `max ‖W_l(t)‖ / u(t)`.
    pub weight_ratio: f64,
    /// `max (1/√m)‖W_1 X̃‖_F / (ρ u(t))`.
    pub input_ratio: f64,
    /// `max ‖Ξ‖_F / ((1+ρβ^L)/√m)`.
    pub xi_ratio: f64,
    /// `max ‖ΞX̃ᵀ‖_F / (s+ρβ^L)`.
    pub xi_proj_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub index: usize,
    pub net: NetConfig,
    pub p: u32,
    /// Set when this point failed; the other fields may then be partial.
    pub error: Option<String>,
    pub rho: Option<f64>,
    pub t_end: Option<f64>,
    /// Blow-up time of the envelope, absent for two layers.
    pub horizon: Option<f64>,
    pub entries: Vec<BoundEntry>,
    pub envelope: Option<EnvelopeCheck>,
    pub csv: Option<String>,
}

impl PointSummary {
    /// Smallest total over all `γ` for one `κ`.
    pub fn min_total(&self, kappa: u8) -> Option<f64> {
        self.entries
            .iter()
            .filter(|e| e.kappa == kappa)
            .filter_map(|e| e.min_total)
            .min_by(f64::total_cmp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub config_hash: String,
    pub dataset_hash: String,
    pub d: usize,
    pub m: usize,
    pub s: f64,
    pub points: Vec<PointSummary>,
}

pub struct SweepReport {
    pub summary: SweepSummary,
    /// Trajectory of each point, `None` where training failed.
    pub trajectories: Vec<Option<Trajectory>>,
}

pub fn bound_configs(cfg: &ExperimentConfig, data: &LoadedData, point: &SweepPoint, rho: f64) -> Vec<(BoundConfig, String)> {
    let net = &point.net;
    let gammas = cfg.bound.gamma_rule.gammas(net.beta, net.depth);
    let labels = cfg.bound.gamma_rule.labels();
    let mut out = Vec::new();
    for &kappa in &cfg.bound.kappa {
        for (gamma, label) in gammas.iter().zip(&labels) {
            out.push((
                BoundConfig {
                    depth: net.depth,
                    d: data.train.d,
                    m: data.train.m,
                    beta: net.beta,
                    epsilon: net.epsilon,
                    gamma: *gamma,
                    delta: cfg.bound.delta,
                    kappa,
                    p: point.p,
                    rho,
                    s: data.train.s,
                    n1: Some(net.width),
                    v_anchor: cfg.bound.v_anchor,
                },
                label.clone(),
            ));
        }
    }
    out
}

/// Linear learning time of fraction `alpha`, for any depth.
pub fn learning_time(depth: usize, alpha: f64, s: f64, beta: f64) -> Result<f64, CliError> {
    Ok(if depth == 2 {
        train_time_shallow(alpha, s, beta)?
    } else {
        train_time_deep(depth, alpha, s, beta)?
    })
}

/// First time the deviation term alone reaches 1 for every `(κ, γ)`, padded by 2%;
/// `2 t*_{0.99}` when `ε = 0`. Capped just below the blow-up time.
pub fn auto_t_end(bounds: &[(BoundConfig, BoundIntermediates)], s: f64) -> Result<f64, CliError> {
    let (first, im) = bounds.first().ok_or_else(|| CliError::Compute("no bound configurations".into()))?;
    let cap = match blowup_time(im) {
        Horizon::Infinite => f64::INFINITY,
        Horizon::Finite(h) => HORIZON_FRACTION * h,
    };
    if first.epsilon == 0.0 {
        return Ok((2.0 * learning_time(first.depth, 0.99, s, first.beta)?).min(cap));
    }
    let mut t = 1e-3;
    while t < cap && t < 1e7 {
        let mut smallest = f64::INFINITY;
        for (cfg, im) in bounds {
            smallest = smallest.min(bound_at(cfg, im, t, None)?.delta_term);
        }
        if smallest >= 1.0 {
            return Ok((1.02 * t).min(cap));
        }
        t *= 1.02;
    }
    if cap.is_finite() {
        Ok(cap)
    } else {
        Err(CliError::Compute("deviation term stays below 1; set train.t_end".into()))
    }
}

fn envelope_check(traj: &Trajectory, im: &BoundIntermediates, m: usize) -> Result<EnvelopeCheck, CliError> {
    let (xi_cap, xi_proj_cap) = residual_ceilings(im.depth, im.rho, im.beta, im.s, m);
    let mut chk = EnvelopeCheck {
        weight_ratio: 0.0,
        input_ratio: 0.0,
        xi_ratio: 0.0,
        xi_proj_ratio: 0.0,
    };
    let horizon = blowup_time(im);
    for (k, &t) in traj.times.iter().enumerate() {
        chk.xi_ratio = chk.xi_ratio.max(traj.xi_norms[k] / xi_cap);
        chk.xi_proj_ratio = chk.xi_proj_ratio.max(traj.xi_proj_norms[k] / xi_proj_cap);
        if !horizon.contains(t) {
            continue;
        }
        let u = u_of_t(im, t)?;
        for norms in &traj.weight_spectral_norms {
            chk.weight_ratio = chk.weight_ratio.max(norms[k] / u);
        }
        chk.input_ratio = chk.input_ratio.max(traj.input_layer_data_norm[k] / (im.rho * u));
    }
    Ok(chk)
}

fn bound_row(b: &BoundBreakdown, cfg: &BoundConfig) -> String {
    [
        fmt17(b.t),
        cfg.kappa.to_string(),
        fmt17(cfg.gamma),
        fmt17(b.u),
        fmt17(b.v),
        fmt17(b.w_at_u),
        fmt17(b.w_at_beta),
        fmt17(b.upsilon),
        fmt17(b.delta_term),
        opt17(b.train_margin_risk),
        fmt17(b.total),
    ]
    .join(",")
}

struct PointRun {
    summary: PointSummary,
    traj: Option<Trajectory>,
}

fn run_point(
    cfg: &ExperimentConfig,
    data: &LoadedData,
    point: &SweepPoint,
    out: &Path,
    cache: &TrajectoryCache,
    config_hash: &str,
) -> PointRun {
    let mut summary = PointSummary {
        index: point.index,
        net: point.net.clone(),
        p: point.p,
        error: None,
        rho: None,
        t_end: None,
        horizon: None,
        entries: Vec::new(),
        envelope: None,
        csv: None,
    };
    match evaluate_point(cfg, data, point, out, cache, config_hash, &mut summary) {
        Ok(traj) => PointRun {
            summary,
            traj: Some(traj),
        },
        Err(e) => {
            summary.error = Some(e.to_string());
            PointRun { summary, traj: None }
        }
    }
}

fn evaluate_point(
    cfg: &ExperimentConfig,
    data: &LoadedData,
    point: &SweepPoint,
    out: &Path,
    cache: &TrajectoryCache,
    config_hash: &str,
    summary: &mut PointSummary,
) -> Result<Trajectory, CliError> {
    let net = &point.net;
    let init = init_spec(net).init(data.train.d, net.epsilon)?;
    let rho = init.rho()?;
    summary.rho = Some(rho);
    let bounds: Vec<(BoundConfig, String, BoundIntermediates)> = bound_configs(cfg, data, point, rho)
        .into_iter()
        .map(|(b, l)| compute_intermediates(&b).map(|im| (b, l, im)))
        .collect::<Result<_, _>>()?;
    let im0 = bounds[0].2;
    let horizon = blowup_time(&im0);
    if let Horizon::Finite(h) = horizon {
        summary.horizon = Some(h);
    }
    let t_end = match cfg.train.t_end {
        Some(t) => t,
        None => {
            let pairs: Vec<_> = bounds.iter().map(|(b, _, im)| (b.clone(), *im)).collect();
            auto_t_end(&pairs, data.train.s)?
        }
    };
    summary.t_end = Some(t_end);

    let mut extra = Vec::new();
    for &a in &cfg.bound.alpha {
        if let Ok(t) = learning_time(net.depth, a, data.train.s, net.beta) {
            if t > 0.0 && t <= t_end {
                extra.push(t);
            }
        }
    }
    let gammas = cfg.bound.gamma_rule.gammas(net.beta, net.depth);
    let tc = train_config(&cfg.train, t_end, extra, gammas.clone(), Vec::new());
    let traj = train_cached(data, net, net.epsilon, &tc, cache)?;
    summary.envelope = Some(envelope_check(&traj, &im0, data.train.m)?);

    let mut rows = Vec::new();
    for (bc, label, im) in &bounds {
        let g = gammas
            .iter()
            .position(|g| *g == bc.gamma)
            .expect("gamma comes from the same rule");
        let mut best: Option<BoundBreakdown> = None;
        for (k, &t) in traj.times.iter().enumerate() {
            if !horizon.contains(t) {
                continue;
            }
            let b = bound_at(bc, im, t, Some(traj.margin_risks[g][k]))?;
            rows.push(bound_row(&b, bc));
            if best.is_none_or(|x| b.total < x.total) {
                best = Some(b);
            }
        }
        summary.entries.push(BoundEntry {
            kappa: bc.kappa,
            gamma: bc.gamma,
            gamma_label: label.clone(),
            min_total: best.map(|b| b.total),
            argmin_t: best.map(|b| b.t),
            at_argmin: best,
        });
    }
    let name = format!("point-{:03}.csv", point.index);
    write_csv(&out.join(&name), config_hash, BOUND_CSV_HEADER, &rows)?;
    write_csv(
        &out.join(format!("point-{:03}-trajectory.csv", point.index)),
        config_hash,
        &traj.csv_header(),
        &traj.csv_rows(),
    )?;
    summary.csv = Some(name);
    Ok(traj)
}

pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<SweepReport, CliError> {
    cfg.validate(Command::BoundSweep)?;
    let data = load_dataset(&cfg.dataset, false)?;
    run_with_data(cfg, &data, opts)
}

/// [`run`] on already loaded data.
pub fn run_with_data(cfg: &ExperimentConfig, data: &LoadedData, opts: &RunOptions) -> Result<SweepReport, CliError> {
    cfg.validate(Command::BoundSweep)?;
    let out = opts.out_dir(cfg);
    std::fs::create_dir_all(&out)?;
    let cache = opts.cache(cfg);
    let hash = cfg.hash();
    let points = cfg.sweep_points();
    let runs: Vec<PointRun> = opts
        .pool()?
        .install(|| points.par_iter().map(|p| run_point(cfg, data, p, &out, &cache, &hash)).collect());
    let mut summaries = Vec::with_capacity(runs.len());
    let mut trajectories = Vec::with_capacity(runs.len());
    for r in runs {
        summaries.push(r.summary);
        trajectories.push(r.traj);
    }
    let summary = SweepSummary {
        config_hash: hash,
        dataset_hash: data.hash.clone(),
        d: data.train.d,
        m: data.train.m,
        s: data.train.s,
        points: summaries,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(SweepReport { summary, trajectories })
}

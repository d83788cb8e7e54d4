//! Training with the trajectory cache, shared by the commands.

use nearlin_core::netflow::{train, InitSpec, StepRule, TrainConfig, Trajectory};
use serde_json::json;

use crate::cache::{trajectory_key, TrajectoryCache};
use crate::config::{NetConfig, TrainSection};
use crate::data::LoadedData;
use crate::error::CliError;

pub fn init_spec(net: &NetConfig) -> InitSpec {
    InitSpec {
        beta: net.beta,
        mode: net.init_mode,
        seed: net.seed,
        widths: vec![net.width; net.depth - 1],
    }
}

/// Log-spaced points on `[t_end · 1e-4, t_end]`.
fn log_points(t_end: f64, n: usize) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    nearlin_core::abound::log_grid(t_end * 1e-4, t_end, n)
}

pub fn train_config(
    section: &TrainSection,
    t_end: f64,
    mut extra_times: Vec<f64>,
    gammas: Vec<f64>,
    snapshot_times: Vec<f64>,
) -> TrainConfig {
    extra_times.extend(log_points(t_end, section.log_points));
    extra_times.sort_by(f64::total_cmp);
    let step = match section.adaptive {
        Some(a) => StepRule::Adaptive {
            lr_min: a.lr_min,
            lr_max: a.lr_max,
            max_rel_change: a.max_rel_change,
        },
        None => StepRule::Fixed { lr: section.lr },
    };
    TrainConfig {
        step,
        t_end,
        log_interval: section.log_interval.unwrap_or(t_end / 100.0),
        extra_log_times: extra_times,
        snapshot_times,
        gammas,
        record_alignment: section.record_alignment,
        linear_fast_path: true,
    }
}

/// Trains `net` on the loaded data, reusing a cached trajectory when one exists.
pub fn train_cached(
    data: &LoadedData,
    net: &NetConfig,
    epsilon: f64,
    cfg: &TrainConfig,
    cache: &TrajectoryCache,
) -> Result<Trajectory, CliError> {
    let key = trajectory_key(&data.hash, &json!({ "net": net, "epsilon": epsilon, "train": cfg }));
    cache.get_or_train(&key, || Ok(train(&data.train, &init_spec(net), epsilon, cfg)?))
}

/// Every log time a [`train_config`] built from `section` produces.
pub fn log_times(section: &TrainSection, t_end: f64) -> Vec<f64> {
    let interval = section.log_interval.unwrap_or(t_end / 100.0);
    let n = (t_end / interval + 1e-9).floor() as usize;
    let mut times: Vec<f64> = (0..=n).map(|k| k as f64 * interval).collect();
    times.extend(log_points(t_end, section.log_points));
    times.push(t_end);
    times.sort_by(f64::total_cmp);
    times.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    times
}

//! JSON experiment configuration and its validation.

use std::path::{Path, PathBuf};

use nearlin_core::abound::{LambdaRule, VAnchor};
use nearlin_core::netflow::InitMode;
use nearlin_core::proxy::ProxyKind;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub net: NetConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub bound: BoundSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub assumption: AssumptionSection,
    #[serde(default)]
    pub optimistic: OptimisticSection,
    #[serde(default = "default_outputs")]
    pub outputs: PathBuf,
    /// Where trained trajectories are cached; defaults to `cache/` under the output directory.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

fn default_outputs() -> PathBuf {
    PathBuf::from("nearlin-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Mnist(MnistSource),
    Synthetic(SyntheticSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MnistSource {
    /// Directory with the four IDX files; falls back to `NEARLIN_MNIST_DIR`.
    #[serde(default)]
    pub mnist_path: Option<PathBuf>,
    pub downsample_to: usize,
    #[serde(default)]
    pub cache_path: Option<PathBuf>,
    #[serde(default = "default_rank_tol")]
    pub rank_tol: f64,
    #[serde(default)]
    pub drop_dead_features: bool,
    /// Use only the first `train_count` training images.
    #[serde(default)]
    pub train_count: Option<usize>,
    /// Use only the first `test_count` test images.
    #[serde(default)]
    pub test_count: Option<usize>,
}

fn default_rank_tol() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    pub d: usize,
    pub m: usize,
    pub seed: u64,
    /// Teacher direction for the labels; defaults to `(1, 0, ..., 0)`.
    #[serde(default)]
    pub teacher: Option<Vec<f64>>,
    /// Size of an independent test draw (seed + 1) for the optimistic bound.
    #[serde(default)]
    pub test_m: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    #[serde(default = "d_depth")]
    pub depth: usize,
    #[serde(default = "d_width")]
    pub width: usize,
    #[serde(default = "d_beta")]
    pub beta: f64,
    #[serde(default = "d_eps")]
    pub epsilon: f64,
    #[serde(default = "d_mode")]
    pub init_mode: InitMode,
    #[serde(default)]
    pub seed: u64,
}

fn d_depth() -> usize {
    2
}
fn d_width() -> usize {
    64
}
fn d_beta() -> f64 {
    0.001
}
fn d_eps() -> f64 {
    0.001
}
fn d_mode() -> InitMode {
    InitMode::Dense
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            depth: d_depth(),
            width: d_width(),
            beta: d_beta(),
            epsilon: d_eps(),
            init_mode: d_mode(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveStep {
    pub lr_min: f64,
    pub lr_max: f64,
    pub max_rel_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "d_lr")]
    pub lr: f64,
    /// Absent means: for bound sweeps, run until the deviation term alone makes every
    /// bound exceed 1.
    #[serde(default)]
    pub t_end: Option<f64>,
    /// Uniform logging interval; defaults to `t_end / 100`.
    #[serde(default)]
    pub log_interval: Option<f64>,
    /// Extra log-spaced logging points on `[t_end · 1e-4, t_end]`.
    #[serde(default)]
    pub log_points: usize,
    /// Replaces the fixed step `lr` when present.
    #[serde(default)]
    pub adaptive: Option<AdaptiveStep>,
    #[serde(default = "yes")]
    pub record_alignment: bool,
}

fn d_lr() -> f64 {
    0.001
}
fn yes() -> bool {
    true
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            lr: d_lr(),
            t_end: None,
            log_interval: None,
            log_points: 0,
            adaptive: None,
            record_alignment: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GammaRule {
    Explicit(Vec<f64>),
    /// `γ = β² / q`.
    BetaSqOverQ { q: Vec<f64> },
    /// `γ = β^L / q`, the same scale as the initial output.
    BetaPowDepthOverQ { q: Vec<f64> },
}

impl Default for GammaRule {
    fn default() -> Self {
        GammaRule::BetaSqOverQ {
            q: vec![1.0, 10.0, 100.0],
        }
    }
}

impl GammaRule {
    pub fn gammas(&self, beta: f64, depth: usize) -> Vec<f64> {
        match self {
            GammaRule::Explicit(g) => g.clone(),
            GammaRule::BetaSqOverQ { q } => q.iter().map(|q| beta * beta / q).collect(),
            GammaRule::BetaPowDepthOverQ { q } => q.iter().map(|q| beta.powi(depth as i32) / q).collect(),
        }
    }

    /// Label for each margin in CSV names and summaries.
    pub fn labels(&self) -> Vec<String> {
        match self {
            GammaRule::Explicit(g) => g.iter().map(|g| format!("gamma={g:e}")).collect(),
            GammaRule::BetaSqOverQ { q } | GammaRule::BetaPowDepthOverQ { q } => {
                q.iter().map(|q| format!("q={q}")).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSection {
    #[serde(default = "d_kappa")]
    pub kappa: Vec<u8>,
    #[serde(default = "d_p")]
    pub p: u32,
    #[serde(default = "d_delta")]
    pub delta: f64,
    #[serde(default)]
    pub gamma_rule: GammaRule,
    #[serde(default)]
    pub v_anchor: VAnchor,
    #[serde(default)]
    pub lambda_kappa_rule: LambdaRule,
    /// Fractions `α` whose linear learning times `t*_α` join the evaluation grid.
    #[serde(default)]
    pub alpha: Vec<f64>,
}

fn d_kappa() -> Vec<u8> {
    vec![2]
}
fn d_p() -> u32 {
    32
}
fn d_delta() -> f64 {
    0.01
}

impl Default for BoundSection {
    fn default() -> Self {
        Self {
            kappa: d_kappa(),
            p: d_p(),
            delta: d_delta(),
            gamma_rule: GammaRule::default(),
            v_anchor: VAnchor::default(),
            lambda_kappa_rule: LambdaRule::default(),
            alpha: Vec::new(),
        }
    }
}

/// Lists that override single `net`/`bound` values; points are their Cartesian product.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default)]
    pub beta: Option<Vec<f64>>,
    #[serde(default)]
    pub epsilon: Option<Vec<f64>>,
    #[serde(default)]
    pub depth: Option<Vec<usize>>,
    #[serde(default)]
    pub init_mode: Option<Vec<InitMode>>,
    #[serde(default)]
    pub p: Option<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssumptionSection {
    #[serde(default = "d_assumption_eps")]
    pub epsilons: Vec<f64>,
    #[serde(default = "d_slack")]
    pub slack: f64,
}

fn d_assumption_eps() -> Vec<f64> {
    vec![0.0, 0.001, 0.01, 0.1, 1.0]
}
fn d_slack() -> f64 {
    1e-8
}

impl Default for AssumptionSection {
    fn default() -> Self {
        Self {
            epsilons: d_assumption_eps(),
            slack: d_slack(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimisticSection {
    #[serde(default = "d_opt_eps")]
    pub epsilons: Vec<f64>,
    #[serde(default = "d_proxies")]
    pub proxies: Vec<ProxyKind>,
    #[serde(default = "d_gmin")]
    pub gamma_min: f64,
    #[serde(default = "d_gmax")]
    pub gamma_max: f64,
    #[serde(default = "d_gcount")]
    pub gamma_count: usize,
    #[serde(default = "d_phase_tol")]
    pub phase_tol: f64,
}

fn d_opt_eps() -> Vec<f64> {
    vec![0.1, 0.4]
}
fn d_proxies() -> Vec<ProxyKind> {
    vec![ProxyKind::K1, ProxyKind::K2, ProxyKind::Linear]
}
fn d_gmin() -> f64 {
    1e-4
}
fn d_gmax() -> f64 {
    1e-1
}
fn d_gcount() -> usize {
    7
}
fn d_phase_tol() -> f64 {
    0.01
}

impl Default for OptimisticSection {
    fn default() -> Self {
        Self {
            epsilons: d_opt_eps(),
            proxies: d_proxies(),
            gamma_min: d_gmin(),
            gamma_max: d_gmax(),
            gamma_count: d_gcount(),
            phase_tol: d_phase_tol(),
        }
    }
}

impl OptimisticSection {
    /// Geometric grid on `[gamma_min, gamma_max]`.
    pub fn gammas(&self) -> Vec<f64> {
        if self.gamma_count == 1 {
            return vec![self.gamma_min];
        }
        let (a, b) = (self.gamma_min.ln(), self.gamma_max.ln());
        (0..self.gamma_count)
            .map(|k| (a + (b - a) * k as f64 / (self.gamma_count - 1) as f64).exp())
            .collect()
    }
}

/// Which command the configuration will drive; some checks differ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    BoundSweep,
    AssumptionCheck,
    Optimistic,
}

fn err(path: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{path}: {msg}"))
}

fn positive(path: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(err(path, format!("{v} must be positive and finite")))
    }
}

fn epsilon_ok(path: &str, v: f64) -> Result<(), CliError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(err(path, format!("{v} outside [0, 1]")))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            err(if path.is_empty() { "<root>" } else { &path }, e.inner())
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        crate::cache::sha256_hex(serde_json::to_string(self).expect("serializable").as_bytes())
    }

    /// Checks every field; the first violation names its key path.
    pub fn validate(&self, cmd: Command) -> Result<(), CliError> {
        match &self.dataset {
            DatasetConfig::Mnist(m) => {
                if ![7, 14, 28].contains(&m.downsample_to) {
                    return Err(err("dataset.mnist.downsample_to", format!("{} is not 7, 14 or 28", m.downsample_to)));
                }
                positive("dataset.mnist.rank_tol", m.rank_tol)?;
                if m.train_count == Some(0) {
                    return Err(err("dataset.mnist.train_count", "must be positive"));
                }
                if m.test_count == Some(0) {
                    return Err(err("dataset.mnist.test_count", "must be positive"));
                }
            }
            DatasetConfig::Synthetic(s) => {
                if s.d == 0 {
                    return Err(err("dataset.synthetic.d", "must be positive"));
                }
                if s.m < s.d {
                    return Err(err("dataset.synthetic.m", format!("{} < d = {}", s.m, s.d)));
                }
                if let Some(t) = &s.teacher {
                    if t.len() != s.d {
                        return Err(err("dataset.synthetic.teacher", format!("length {} != d = {}", t.len(), s.d)));
                    }
                }
                if cmd == Command::Optimistic && s.test_m.is_none() {
                    return Err(err("dataset.synthetic.test_m", "required by the optimistic command"));
                }
            }
        }
        let n = &self.net;
        if n.depth < 2 {
            return Err(err("net.depth", format!("{} < 2", n.depth)));
        }
        if n.width == 0 {
            return Err(err("net.width", "must be positive"));
        }
        positive("net.beta", n.beta)?;
        epsilon_ok("net.epsilon", n.epsilon)?;

        let t = &self.train;
        positive("train.lr", t.lr)?;
        if let Some(te) = t.t_end {
            positive("train.t_end", te)?;
        } else if cmd != Command::BoundSweep {
            return Err(err("train.t_end", "required by this command"));
        }
        if let Some(li) = t.log_interval {
            positive("train.log_interval", li)?;
        }
        if let Some(a) = &t.adaptive {
            positive("train.adaptive.lr_min", a.lr_min)?;
            positive("train.adaptive.lr_max", a.lr_max)?;
            positive("train.adaptive.max_rel_change", a.max_rel_change)?;
            if a.lr_max < a.lr_min {
                return Err(err("train.adaptive.lr_max", "must be at least lr_min"));
            }
        }

        let b = &self.bound;
        if b.kappa.is_empty() {
            return Err(err("bound.kappa", "empty list"));
        }
        for (i, k) in b.kappa.iter().enumerate() {
            if *k != 1 && *k != 2 {
                return Err(err(&format!("bound.kappa[{i}]"), format!("{k} is neither 1 nor 2")));
            }
        }
        if b.p == 0 {
            return Err(err("bound.p", "must be positive"));
        }
        if !(b.delta > 0.0 && b.delta < 1.0) {
            return Err(err("bound.delta", format!("{} outside (0, 1)", b.delta)));
        }
        let (gpath, gvals) = match &b.gamma_rule {
            GammaRule::Explicit(g) => ("bound.gamma_rule.explicit", g),
            GammaRule::BetaSqOverQ { q } => ("bound.gamma_rule.beta_sq_over_q.q", q),
            GammaRule::BetaPowDepthOverQ { q } => ("bound.gamma_rule.beta_pow_depth_over_q.q", q),
        };
        if gvals.is_empty() {
            return Err(err(gpath, "empty list"));
        }
        for (i, g) in gvals.iter().enumerate() {
            positive(&format!("{gpath}[{i}]"), *g)?;
        }
        for (i, a) in b.alpha.iter().enumerate() {
            if !(*a > 0.0 && *a < 1.0) {
                return Err(err(&format!("bound.alpha[{i}]"), format!("{a} outside (0, 1)")));
            }
        }

        let s = &self.sweep;
        if let Some(v) = &s.beta {
            for (i, x) in v.iter().enumerate() {
                positive(&format!("sweep.beta[{i}]"), *x)?;
            }
        }
        if let Some(v) = &s.epsilon {
            for (i, x) in v.iter().enumerate() {
                epsilon_ok(&format!("sweep.epsilon[{i}]"), *x)?;
            }
        }
        if let Some(v) = &s.depth {
            for (i, x) in v.iter().enumerate() {
                if *x < 2 {
                    return Err(err(&format!("sweep.depth[{i}]"), format!("{x} < 2")));
                }
            }
        }
        if let Some(v) = &s.p {
            for (i, x) in v.iter().enumerate() {
                if *x == 0 {
                    return Err(err(&format!("sweep.p[{i}]"), "must be positive"));
                }
            }
        }

        let a = &self.assumption;
        for (i, e) in a.epsilons.iter().enumerate() {
            epsilon_ok(&format!("assumption.epsilons[{i}]"), *e)?;
        }
        if !(a.slack >= 0.0) {
            return Err(err("assumption.slack", "must be non-negative"));
        }

        let o = &self.optimistic;
        for (i, e) in o.epsilons.iter().enumerate() {
            epsilon_ok(&format!("optimistic.epsilons[{i}]"), *e)?;
        }
        positive("optimistic.gamma_min", o.gamma_min)?;
        positive("optimistic.gamma_max", o.gamma_max)?;
        if o.gamma_max < o.gamma_min {
            return Err(err("optimistic.gamma_max", "must be at least gamma_min"));
        }
        if o.gamma_count == 0 {
            return Err(err("optimistic.gamma_count", "must be positive"));
        }
        if !(o.phase_tol > 0.0 && o.phase_tol < 1.0) {
            return Err(err("optimistic.phase_tol", "outside (0, 1)"));
        }
        Ok(())
    }
}

/// One combination of swept values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub index: usize,
    pub net: NetConfig,
    pub p: u32,
}

impl ExperimentConfig {
    pub fn sweep_points(&self) -> Vec<SweepPoint> {
        let s = &self.sweep;
        let betas = s.beta.clone().unwrap_or_else(|| vec![self.net.beta]);
        let epss = s.epsilon.clone().unwrap_or_else(|| vec![self.net.epsilon]);
        let depths = s.depth.clone().unwrap_or_else(|| vec![self.net.depth]);
        let modes = s.init_mode.clone().unwrap_or_else(|| vec![self.net.init_mode]);
        let ps = s.p.clone().unwrap_or_else(|| vec![self.bound.p]);
        let mut out = Vec::new();
        for &depth in &depths {
            for &mode in &modes {
                for &beta in &betas {
                    for &epsilon in &epss {
                        for &p in &ps {
                            out.push(SweepPoint {
                                index: out.len(),
                                net: NetConfig {
                                    depth,
                                    init_mode: mode,
                                    beta,
                                    epsilon,
                                    ..self.net.clone()
                                },
                                p,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_paths() {
        let cfg = ExperimentConfig::from_json(r#"{"dataset": {"synthetic": {"d": 3, "m": 10, "seed": 1}}}"#).unwrap();
        assert_eq!(cfg.net.width, 64);
        assert_eq!(cfg.bound.p, 32);
        assert_eq!(cfg.bound.gamma_rule.gammas(0.001, 2).len(), 3);
        cfg.validate(Command::BoundSweep).unwrap();
        match cfg.validate(Command::AssumptionCheck) {
            Err(CliError::Config(m)) => assert!(m.starts_with("train.t_end"), "{m}"),
            other => panic!("{other:?}"),
        }
        match ExperimentConfig::from_json(r#"{"dataset": {"synthetic": {"d": 3, "m": 10, "seed": 1}}, "net": {"beta": "x"}}"#) {
            Err(CliError::Config(m)) => assert!(m.starts_with("net.beta"), "{m}"),
            other => panic!("{other:?}"),
        }
        let bad = ExperimentConfig::from_json(
            r#"{"dataset": {"synthetic": {"d": 3, "m": 10, "seed": 1}}, "bound": {"kappa": [2, 3]}}"#,
        )
        .unwrap();
        match bad.validate(Command::BoundSweep) {
            Err(CliError::Config(m)) => assert!(m.starts_with("bound.kappa[1]"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sweep_product() {
        let cfg = ExperimentConfig::from_json(
            r#"{"dataset": {"synthetic": {"d": 3, "m": 10, "seed": 1}}, "sweep": {"beta": [0.1, 0.01], "depth": [2, 3, 4]}}"#,
        )
        .unwrap();
        let pts = cfg.sweep_points();
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[5].index, 5);
        assert_eq!(pts[5].net.depth, 4);
    }
}

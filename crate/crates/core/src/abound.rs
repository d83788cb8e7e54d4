//! A-priori generalization bound for nearly-linear networks and its analytic
//! pieces: the envelopes `u`, `v`, `w`, the counting term `Υ_κ`, learning times
//! of linear networks, and the small-`β` limit of the deviation term.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ode::rk4;
use crate::specfun::{hyp2f1_learning, upper_gamma, upper_gamma_scaled, GammaArgs, SpecFunError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundError {
    #[error("invalid {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("envelope diverges at t = {t}; horizon is {horizon}")]
    Diverged { t: f64, horizon: f64 },
    #[error("{0}")]
    Domain(String),
    #[error(transparent)]
    SpecFun(#[from] SpecFunError),
}

pub type Result<T> = std::result::Result<T, BoundError>;

fn invalid<T>(field: &'static str, reason: impl Into<String>) -> Result<T> {
    Err(BoundError::InvalidConfig {
        field,
        reason: reason.into(),
    })
}

/// Which point `w` is anchored at inside `v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VAnchor {
    /// `w(u(t)) - w(β)`; `v(0) > 0` when `ρ > 1`.
    #[default]
    Beta,
    /// `w(u(t)) - w(β̄)`; `v(0) = 0`.
    BarBeta,
}

/// Prefactor used in the small-`β` limit of the deviation term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRule {
    /// Same prefactor `Φ_κ` as in the finite-`β` bound.
    #[default]
    PhiKappa,
    /// Drop the prefactor.
    Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundConfig {
    pub depth: usize,
    pub d: usize,
    pub m: usize,
    pub beta: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub delta: f64,
    pub kappa: u8,
    pub p: u32,
    pub rho: f64,
    pub s: f64,
    /// First hidden width; when known, `ρ ≤ sqrt(min(n_1, d))` is enforced.
    #[serde(default)]
    pub n1: Option<usize>,
    #[serde(default)]
    pub v_anchor: VAnchor,
}

/// Slack for `ρ` computed from weights, which can land a few ulps below 1.
const RHO_SLACK: f64 = 1e-9;

impl BoundConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return invalid("depth", format!("{} < 2", self.depth));
        }
        if self.d == 0 {
            return invalid("d", "must be positive");
        }
        if self.m == 0 {
            return invalid("m", "must be positive");
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return invalid("beta", format!("{} must be positive", self.beta));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return invalid("epsilon", format!("{} outside [0, 1]", self.epsilon));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return invalid("gamma", format!("{} must be positive", self.gamma));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return invalid("delta", format!("{} outside (0, 1)", self.delta));
        }
        if self.kappa != 1 && self.kappa != 2 {
            return invalid("kappa", format!("{} is neither 1 nor 2", self.kappa));
        }
        if self.p == 0 {
            return invalid("p", "must be positive");
        }
        if !(self.rho >= 1.0 - RHO_SLACK && self.rho.is_finite()) {
            return invalid("rho", format!("{} < 1", self.rho));
        }
        if let Some(n1) = self.n1 {
            let cap = (n1.min(self.d) as f64).sqrt();
            if self.rho > cap * (1.0 + RHO_SLACK) {
                return invalid("rho", format!("{} exceeds sqrt(min(n1, d)) = {cap}", self.rho));
            }
        }
        if !(self.s > 0.0 && self.s <= 1.0) {
            return invalid("s", format!("{} outside (0, 1]", self.s));
        }
        Ok(())
    }
}

/// Derived constants of the bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundIntermediates {
    pub depth: usize,
    pub beta: f64,
    pub epsilon: f64,
    pub rho: f64,
    pub s: f64,
    /// `1 + ρβ^L`
    pub bar_one: f64,
    /// `s̄_1`
    pub bar_s: f64,
    /// `s̄_ρ`
    pub bar_s_rho: f64,
    /// `L/(1 + (L-1)ρ) · s̄`
    pub hat_s: f64,
    /// `β s̄_ρ / s̄_1`
    pub bar_beta: f64,
    pub phi_kappa: f64,
}

impl BoundIntermediates {
    /// `s̄_r = (1-ε)(s + ρβ^L) + ε sqrt(r) (L-1)(1 + ρβ^L)`.
    pub fn bar_s_of_r(&self, r: f64) -> f64 {
        bar_s_of_r(self.depth, self.epsilon, self.s, self.rho, self.beta, r)
    }
}

fn bar_s_of_r(depth: usize, epsilon: f64, s: f64, rho: f64, beta: f64, r: f64) -> f64 {
    let rb = rho * beta.powi(depth as i32);
    (1.0 - epsilon) * (s + rb) + epsilon * r.sqrt() * (depth as f64 - 1.0) * (1.0 + rb)
}

/// `Φ_1 = L sqrt(d) + 1 + (L-1)ρ`,
/// `Φ_2 = (L-1)[(L+1+(L-1)ρ) sqrt(d) + 2(1+(L-1)ρ)]`.
pub fn phi_kappa(kappa: u8, depth: usize, d: usize, rho: f64) -> f64 {
    let l = depth as f64;
    let sd = (d as f64).sqrt();
    if kappa == 1 {
        l * sd + 1.0 + (l - 1.0) * rho
    } else {
        (l - 1.0) * ((l + 1.0 + (l - 1.0) * rho) * sd + 2.0 * (1.0 + (l - 1.0) * rho))
    }
}

pub fn compute_intermediates(cfg: &BoundConfig) -> Result<BoundIntermediates> {
    cfg.validate()?;
    let l = cfg.depth as f64;
    let bar_one = 1.0 + cfg.rho * cfg.beta.powi(cfg.depth as i32);
    let bar_s = bar_s_of_r(cfg.depth, cfg.epsilon, cfg.s, cfg.rho, cfg.beta, 1.0);
    let bar_s_rho = bar_s_of_r(cfg.depth, cfg.epsilon, cfg.s, cfg.rho, cfg.beta, cfg.rho);
    Ok(BoundIntermediates {
        depth: cfg.depth,
        beta: cfg.beta,
        epsilon: cfg.epsilon,
        rho: cfg.rho,
        s: cfg.s,
        bar_one,
        bar_s,
        bar_s_rho,
        hat_s: l / (1.0 + (l - 1.0) * cfg.rho) * bar_s,
        bar_beta: cfg.beta * bar_s_rho / bar_s,
        phi_kappa: phi_kappa(cfg.kappa, cfg.depth, cfg.d, cfg.rho),
    })
}

/// `Υ_κ = sqrt((κ p d ln 2 + ln(1/δ)) / (2m))`.
pub fn upsilon(kappa: u8, p: u32, d: usize, delta: f64, m: usize) -> f64 {
    let num = kappa as f64 * p as f64 * d as f64 * std::f64::consts::LN_2 - delta.ln();
    (num / (2.0 * m as f64)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    Infinite,
    Finite(f64),
}

impl Horizon {
    pub fn contains(&self, t: f64) -> bool {
        match self {
            Horizon::Infinite => true,
            Horizon::Finite(h) => t < *h,
        }
    }

    pub fn as_f64(&self) -> f64 {
        match self {
            Horizon::Infinite => f64::INFINITY,
            Horizon::Finite(h) => *h,
        }
    }
}

/// Time after which `u` blows up: `β̄^{2-L} / ((L-2) s̄)` for `L ≥ 3`.
pub fn blowup_time(im: &BoundIntermediates) -> Horizon {
    if im.depth == 2 {
        Horizon::Infinite
    } else {
        let l = im.depth as f64;
        Horizon::Finite(im.bar_beta.powf(2.0 - l) / ((l - 2.0) * im.bar_s))
    }
}

/// Envelope on every layer's spectral norm.
pub fn u_of_t(im: &BoundIntermediates, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(BoundError::Domain(format!("t = {t} must be non-negative")));
    }
    if im.depth == 2 {
        return Ok(im.bar_beta * (im.bar_s * t).exp());
    }
    let horizon = blowup_time(im);
    if !horizon.contains(t) {
        return Err(BoundError::Diverged {
            t,
            horizon: horizon.as_f64(),
        });
    }
    let l = im.depth as f64;
    let base = im.bar_beta.powf(2.0 - l) - (l - 2.0) * im.bar_s * t;
    Ok(base.powf(1.0 / (2.0 - l)))
}

/// `e^{u^L/ŝ} w(u)`, which stays finite for large `u`.
fn w_scaled(im: &BoundIntermediates, u: f64) -> Result<f64> {
    let l = im.depth as f64;
    let x = u.powf(l) / im.hat_s;
    let g1 = upper_gamma_scaled(GammaArgs::new((2.0 - l) / l, x)?)?;
    let g2 = upper_gamma_scaled(GammaArgs::new(2.0 / l, x)?)?;
    Ok(-(im.bar_one / im.bar_s) * g1 - im.rho * (im.hat_s / im.bar_s) * g2)
}

/// `w(u) = -(1̄/s̄) Γ((2-L)/L, u^L/ŝ) - ρ (ŝ/s̄) Γ(2/L, u^L/ŝ)`.
pub fn w_of_u(im: &BoundIntermediates, u: f64) -> Result<f64> {
    if !(u > 0.0) {
        return Err(BoundError::Domain(format!("u = {u} must be positive")));
    }
    let l = im.depth as f64;
    let x = u.powf(l) / im.hat_s;
    let g1 = upper_gamma(GammaArgs::new((2.0 - l) / l, x)?)?;
    let g2 = upper_gamma(GammaArgs::new(2.0 / l, x)?)?;
    Ok(-(im.bar_one / im.bar_s) * g1 - im.rho * (im.hat_s / im.bar_s) * g2)
}

pub fn anchor_point(im: &BoundIntermediates, anchor: VAnchor) -> f64 {
    match anchor {
        VAnchor::Beta => im.beta,
        VAnchor::BarBeta => im.bar_beta,
    }
}

/// Envelope on the `ε`-derivatives of the layer norms:
/// `((L-1)/L) ŝ^{(2-L)/L} u^{L-1} [w(u) - w(anchor)] e^{u^L/ŝ}`.
pub fn v_of_t(im: &BoundIntermediates, t: f64, anchor: VAnchor) -> Result<f64> {
    let u = u_of_t(im, t)?;
    v_of_u(im, u, anchor)
}

pub fn v_of_u(im: &BoundIntermediates, u: f64, anchor: VAnchor) -> Result<f64> {
    let l = im.depth as f64;
    let a = anchor_point(im, anchor);
    let xu = u.powf(l) / im.hat_s;
    let xa = a.powf(l) / im.hat_s;
    let diff = w_scaled(im, u)? - w_scaled(im, a)? * (xu - xa).exp();
    Ok((l - 1.0) / l * im.hat_s.powf((2.0 - l) / l) * u.powf(l - 1.0) * diff)
}

/// One evaluation of the bound at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundBreakdown {
    pub t: f64,
    pub u: f64,
    pub v: f64,
    pub w_at_u: f64,
    /// `w` at the configured anchor (`β` by default).
    pub w_at_beta: f64,
    pub upsilon: f64,
    /// `Δ_{κ,β}(t) ε^κ / γ`.
    pub delta_term: f64,
    pub train_margin_risk: Option<f64>,
    pub total: f64,
}

/// `R̂_γ + Υ_κ + Φ_κ v u^{L-1} ε^κ / γ` at time `t`.
pub fn full_bound(cfg: &BoundConfig, t: f64, train_margin_risk: Option<f64>) -> Result<BoundBreakdown> {
    let im = compute_intermediates(cfg)?;
    bound_at(cfg, &im, t, train_margin_risk)
}

/// [`full_bound`] with precomputed intermediates.
pub fn bound_at(
    cfg: &BoundConfig,
    im: &BoundIntermediates,
    t: f64,
    train_margin_risk: Option<f64>,
) -> Result<BoundBreakdown> {
    let u = u_of_t(im, t)?;
    let v = v_of_u(im, u, cfg.v_anchor)?;
    let ups = upsilon(cfg.kappa, cfg.p, cfg.d, cfg.delta, cfg.m);
    let delta_term = if cfg.epsilon == 0.0 {
        0.0
    } else {
        im.phi_kappa * v * u.powi(cfg.depth as i32 - 1) * cfg.epsilon.powi(cfg.kappa as i32) / cfg.gamma
    };
    Ok(BoundBreakdown {
        t,
        u,
        v,
        w_at_u: w_of_u(im, u)?,
        w_at_beta: w_of_u(im, anchor_point(im, cfg.v_anchor))?,
        upsilon: ups,
        delta_term,
        train_margin_risk,
        total: train_margin_risk.unwrap_or(0.0) + ups + delta_term,
    })
}

/// Squared strongest-mode magnitude of a linear two-layer net,
/// `s e^{2st} / (e^{2st} - 1 + s/β²)`, solving `z' = 2z(s - z)`, `z(0) = β²`.
pub fn linear_mode_sq(t: f64, s: f64, beta: f64) -> Result<f64> {
    let b2 = beta * beta;
    if !(b2 < s && beta > 0.0) {
        return Err(BoundError::Domain(format!("need 0 < β² < s, got β² = {b2}, s = {s}")));
    }
    Ok(s / (1.0 + (s / b2 - 1.0) * (-2.0 * s * t).exp()))
}

/// Time for a linear two-layer net to learn fraction `α` of the strongest mode:
/// `(1/2s) ln(α(s - β²) / ((1 - α) β²))`.
pub fn train_time_shallow(alpha: f64, s: f64, beta: f64) -> Result<f64> {
    let b2 = beta * beta;
    if !(alpha >= b2 / s && alpha < 1.0) {
        return Err(BoundError::Domain(format!(
            "alpha = {alpha} outside [β²/s, 1) = [{}, 1)",
            b2 / s
        )));
    }
    Ok((alpha * (s - b2) / ((1.0 - alpha) * b2)).ln() / (2.0 * s))
}

/// Deep (`L ≥ 3`) learning time via `2F1(1, 2/L - 1, 2/L; ·)`.
pub fn train_time_deep(depth: usize, alpha: f64, s: f64, beta: f64) -> Result<f64> {
    if depth < 3 {
        return Err(BoundError::Domain(format!("depth {depth} < 3")));
    }
    let l = depth as f64;
    let z0 = beta.powf(l) / s;
    if !(alpha >= z0 && alpha < 1.0) {
        return Err(BoundError::Domain(format!("alpha = {alpha} outside [β^L/s, 1) = [{z0}, 1)")));
    }
    let f0 = hyp2f1_learning(depth as u32, z0)?;
    let fa = hyp2f1_learning(depth as u32, alpha)?;
    Ok((beta.powf(2.0 - l) * f0 - (alpha * s).powf(2.0 / l - 1.0) * fa) / (s * (l - 2.0)))
}

/// `β → 0` limit of the deviation term at `t*_α` with `α = rβ²/s` and `γ = α/q`
/// (two layers, `v` anchored at `β`):
/// `(1̄ s s̄_ρ² / (2 s̄_1³)) q r^{s̄/s - 1} Λ ln(s̄_ρ²/s̄_1² r^{s̄/s}) ε^κ`.
#[allow(clippy::too_many_arguments)]
pub fn asymptotic_limit_term(
    kappa: u8,
    depth: usize,
    q: f64,
    r: f64,
    s: f64,
    rho: f64,
    epsilon: f64,
    d: usize,
    rule: LambdaRule,
) -> Result<f64> {
    if depth != 2 {
        return Err(BoundError::Domain(format!("limit term is defined for depth 2, got {depth}")));
    }
    if !(r > 1.0) {
        return Err(BoundError::Domain(format!("r = {r} must exceed 1")));
    }
    if epsilon == 0.0 {
        return Ok(0.0);
    }
    let s1 = bar_s_of_r(depth, epsilon, s, rho, 0.0, 1.0);
    let sr = bar_s_of_r(depth, epsilon, s, rho, 0.0, rho);
    let lambda = match rule {
        LambdaRule::PhiKappa => phi_kappa(kappa, depth, d, rho),
        LambdaRule::Unit => 1.0,
    };
    let e = s1 / s;
    Ok(s * sr * sr / (2.0 * s1.powi(3))
        * q
        * r.powf(e - 1.0)
        * lambda
        * (sr * sr / (s1 * s1) * r.powf(e)).ln()
        * epsilon.powi(kappa as i32))
}

/// Sharper two-layer norm envelope from the linear system `g1' = s̄² g2`, `g2' = g1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TightEnvelope {
    pub g1: f64,
    pub g2: f64,
    /// `β + (g1(t) - g1(0))/s̄`, the resulting input-layer norm bound.
    pub w1_bound: f64,
    pub g1_exact: f64,
    pub g2_exact: f64,
    /// Closed forms as commonly written (`g1` carries the prefactor `β sqrt(s̄_ρ - s̄_1)`).
    pub g1_closed_as_written: f64,
    pub g2_closed_as_written: f64,
}

impl TightEnvelope {
    /// Relative gap between the as-written `g1` closed form and the integrated `g1`.
    pub fn g1_discrepancy(&self) -> f64 {
        (self.g1_closed_as_written - self.g1).abs() / self.g1.abs()
    }
}

const TIGHT_STEPS_PER_UNIT: f64 = 2000.0;

pub fn tight_u_bound_shallow(im: &BoundIntermediates, t: f64) -> Result<TightEnvelope> {
    if im.depth != 2 {
        return Err(BoundError::Domain("tight envelope is two-layer only".into()));
    }
    if !(im.rho > 1.0) {
        return Err(BoundError::Domain(format!("rho = {} must exceed 1", im.rho)));
    }
    let sb = im.bar_s;
    let g10 = im.beta * im.bar_s_rho;
    let steps = ((t * sb * TIGHT_STEPS_PER_UNIT).ceil() as usize).max(1);
    let y = rk4(|_, y| vec![sb * sb * y[1], y[0]], &[g10, im.beta], 0.0, t, steps);
    let amp = (im.bar_beta * im.bar_beta - im.beta * im.beta).sqrt();
    let phase = (im.bar_s / im.bar_s_rho).atanh() + sb * t;
    Ok(TightEnvelope {
        g1: y[0],
        g2: y[1],
        w1_bound: im.beta + (y[0] - g10) / sb,
        g1_exact: sb * amp * phase.cosh(),
        g2_exact: amp * phase.sinh(),
        g1_closed_as_written: im.beta * (im.bar_s_rho - im.bar_s).sqrt() * phase.cosh(),
        g2_closed_as_written: amp * phase.sinh(),
    })
}

/// Ceilings on the gap between a trained net and its proxy, per unit input norm
/// (`pointwise`) and over the whole training set (`train`, an l2 norm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationCeiling {
    pub pointwise: f64,
    pub train: f64,
}

/// Deviation ceilings given envelope values `u`, `v`.
///
/// With the linear correction (`κ = 2`) the gap is second order in `ε`:
/// `(L-1)(L+1+ρ(L-1)) u^{L-1} v ‖x‖ ε²` and `2(L-1)(1+ρ(L-1)) u^{L-1} v sqrt(m) ε²`.
/// Without it (`κ = 1`): `L u^{L-1} v ‖x‖ ε` and `(1+(L-1)ρ) u^{L-1} v sqrt(m) ε`.
pub fn deviation_ceiling(kappa: u8, depth: usize, rho: f64, u: f64, v: f64, epsilon: f64, m: usize) -> DeviationCeiling {
    let l = depth as f64;
    let core = u.powi(depth as i32 - 1) * v;
    let sm = (m as f64).sqrt();
    if kappa == 2 {
        DeviationCeiling {
            pointwise: (l - 1.0) * (l + 1.0 + rho * (l - 1.0)) * core * epsilon * epsilon,
            train: 2.0 * (l - 1.0) * (1.0 + rho * (l - 1.0)) * core * sm * epsilon * epsilon,
        }
    } else {
        DeviationCeiling {
            pointwise: l * core * epsilon,
            train: (1.0 + (l - 1.0) * rho) * core * sm * epsilon,
        }
    }
}

/// Ceilings on the loss residual: `‖Ξ‖_F ≤ (1+ρβ^L)/sqrt(m)` and `‖ΞX̃ᵀ‖_F ≤ s + ρβ^L`.
pub fn residual_ceilings(depth: usize, rho: f64, beta: f64, s: f64, m: usize) -> (f64, f64) {
    let rb = rho * beta.powi(depth as i32);
    ((1.0 + rb) / (m as f64).sqrt(), s + rb)
}

/// Log-spaced grid of `n` points on `[t_min, t_max]`.
pub fn log_grid(t_min: f64, t_max: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![t_min];
    }
    let (a, b) = (t_min.ln(), t_max.ln());
    (0..n).map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp()).collect()
}

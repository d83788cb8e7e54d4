//! `selftest`: the oracle and invariant suite on small inputs, no dataset needed.

use std::fmt::Write as _;

use nearlin_core::abound::{
    blowup_time, compute_intermediates, log_grid, residual_ceilings, u_of_t, v_of_t, w_of_u, BoundConfig,
    BoundError, BoundIntermediates, Horizon, VAnchor,
};
use nearlin_core::dataio::{synthetic_gaussian, WhitenedDataset};
use nearlin_core::densela::frobenius_norm;
use nearlin_core::netflow::{
    grad_mse, gradient_pair, loss, train, InitMode, InitSpec, NetworkWeights, StepRule, TrainConfig,
};
use nearlin_core::ode::rk4_path;
use nearlin_core::proxy::{build_proxy, deviation_report, BoundInputs, DeviationReport, ProxyKind};
use nearlin_core::specfun::{expint_e1, hyp2f1_learning, upper_gamma, GammaArgs};

use crate::error::CliError;
use crate::oracle;

pub type WImpl = fn(&BoundIntermediates, f64) -> Result<f64, BoundError>;

/// Implementations under test; replaced by a faulty one to check the suite notices.
#[derive(Clone, Copy)]
pub struct SelftestOptions {
    pub w_impl: WImpl,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        Self { w_impl: w_of_u }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed error or ratio.
    pub worst: f64,
    pub limit: f64,
    /// Inputs of the worst case.
    pub at: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            writeln!(s, "{tag} {:<28} worst {:.6e} limit {:.1e} at {}", c.name, c.worst, c.limit, c.at).unwrap();
        }
        let n_fail = self.failures().count();
        writeln!(s, "{} checks, {} failed", self.checks.len(), n_fail).unwrap();
        s
    }
}

/// Tracks the worst value seen and where.
struct Worst {
    value: f64,
    at: String,
}

impl Worst {
    fn new() -> Self {
        Self {
            value: f64::NEG_INFINITY,
            at: "-".into(),
        }
    }

    fn see(&mut self, v: f64, at: impl FnOnce() -> String) {
        if !(v <= self.value) {
            self.value = v;
            self.at = at();
        }
    }

    fn check(self, name: &'static str, limit: f64) -> CheckResult {
        CheckResult {
            name,
            passed: self.value <= limit,
            worst: self.value,
            limit,
            at: self.at,
        }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs()
    }
}

fn gamma_grid() -> Vec<(f64, f64)> {
    let avals = [-0.9, -0.5, -1.0 / 3.0, -0.25, -0.05, 0.0, 0.25, 1.0 / 3.0, 0.5, 1.0];
    let xs = log_grid(1e-3, 40.0, 10);
    avals.iter().flat_map(|&a| xs.iter().map(move |&x| (a, x))).collect()
}

pub fn check_upper_gamma() -> CheckResult {
    let mut w = Worst::new();
    for (a, x) in gamma_grid() {
        let v = upper_gamma(GammaArgs::new(a, x).expect("grid in domain")).unwrap_or(f64::NAN);
        w.see(rel(v, oracle::upper_gamma(a, x)), || format!("a={a} x={x}"));
    }
    w.check("upper_gamma_vs_quadrature", 1e-10)
}

pub fn check_gamma_recurrence() -> CheckResult {
    let mut w = Worst::new();
    for (a, x) in gamma_grid().into_iter().filter(|(a, _)| *a <= 0.0) {
        let g = |a: f64| upper_gamma(GammaArgs::new(a, x).expect("grid in domain")).unwrap_or(f64::NAN);
        let lhs = g(a + 1.0);
        let rhs = a * g(a) + x.powf(a) * (-x).exp();
        w.see(rel(rhs, lhs), || format!("a={a} x={x}"));
    }
    w.check("upper_gamma_recurrence", 1e-10)
}

pub fn check_e1() -> CheckResult {
    let mut w = Worst::new();
    for x in log_grid(1e-4, 50.0, 100) {
        w.see(rel(expint_e1(x).unwrap_or(f64::NAN), oracle::expint_e1(x)), || format!("x={x}"));
    }
    w.check("e1_vs_quadrature", 1e-10)
}

pub fn check_hyp2f1() -> CheckResult {
    let mut w = Worst::new();
    for l in [3u32, 4] {
        for k in 0..50 {
            let z = 0.99 * k as f64 / 49.0;
            let v = hyp2f1_learning(l, z).unwrap_or(f64::NAN);
            w.see(rel(v, oracle::hyp2f1_learning(l, z)), || format!("L={l} z={z}"));
        }
    }
    w.check("hyp2f1_vs_series", 1e-8)
}

fn sample_bound(depth: usize, rho: f64, epsilon: f64, beta: f64) -> BoundConfig {
    BoundConfig {
        depth,
        d: 49,
        m: 60000,
        beta,
        epsilon,
        gamma: 1e-3,
        delta: 0.01,
        kappa: 2,
        p: 32,
        rho,
        s: 0.63,
        n1: None,
        v_anchor: VAnchor::BarBeta,
    }
}

/// Two-layer `w` against its exponential-integral form
/// `(1̄/s̄) Ei(-u²/ŝ) - ρ(ŝ/s̄) e^{-u²/ŝ}` on `[β̄, 5 sqrt(ŝ)]`.
pub fn check_w_consistency(opts: &SelftestOptions) -> CheckResult {
    let mut w = Worst::new();
    for (rho, eps) in [(1.0, 0.001), (4.0, 0.01), (2.5, 0.3)] {
        let im = compute_intermediates(&sample_bound(2, rho, eps, 0.001)).expect("valid sample");
        for u in log_grid(im.bar_beta, 5.0 * im.hat_s.sqrt(), 100) {
            let x = u * u / im.hat_s;
            let ei = -oracle::expint_e1(x);
            let alt = im.bar_one / im.bar_s * ei - im.rho * im.hat_s / im.bar_s * (-x).exp();
            let v = (opts.w_impl)(&im, u).unwrap_or(f64::NAN);
            w.see(rel(v, alt), || format!("rho={rho} eps={eps} u={u}"));
        }
    }
    w.check("w_gamma_vs_ei_form", 1e-9)
}

/// Right-hand side of the envelope system: `u' = s̄ u^{L-1}`,
/// `v' = v((L-1) s̄ u^{L-2} + (1+(L-1)ρ) u^{2L-2}) + (L-1) u^{L-1} (1̄ + ρ u^L)`.
pub fn envelope_rhs(im: &BoundIntermediates, y: &[f64]) -> Vec<f64> {
    let l = im.depth as f64;
    let (u, v) = (y[0], y[1]);
    let ul1 = u.powf(l - 1.0);
    vec![
        im.bar_s * ul1,
        v * ((l - 1.0) * im.bar_s * u.powf(l - 2.0) + (1.0 + (l - 1.0) * im.rho) * ul1 * ul1)
            + (l - 1.0) * ul1 * (im.bar_one + im.rho * u.powf(l)),
    ]
}

/// Worst relative error of `(u, v)` against RK4 on 30 points of `[0, t_max]`.
pub fn envelope_ode_error(im: &BoundIntermediates, t_max: f64, steps_per_unit: f64) -> (f64, f64, f64) {
    let times: Vec<f64> = (1..=30).map(|k| t_max * k as f64 / 30.0).collect();
    let path = rk4_path(|_, y| envelope_rhs(im, y), &[im.bar_beta, 0.0], 0.0, &times, steps_per_unit);
    let mut worst = (0.0, 0.0, 0.0);
    for (t, y) in times.iter().zip(&path) {
        let u = u_of_t(im, *t).unwrap_or(f64::NAN);
        let v = v_of_t(im, *t, VAnchor::BarBeta).unwrap_or(f64::NAN);
        let e = rel(u, y[0]).max(rel(v, y[1]));
        if !(e <= worst.0) {
            worst = (e, *t, y[1]);
        }
    }
    worst
}

pub fn check_envelope_ode() -> CheckResult {
    let mut w = Worst::new();
    for (depth, beta, rho, eps) in [(2usize, 0.05, 2.0, 0.01), (3, 0.3, 1.5, 0.05), (4, 0.5, 1.2, 0.1)] {
        let im = compute_intermediates(&sample_bound(depth, rho, eps, beta)).expect("valid sample");
        let t_max = match blowup_time(&im) {
            Horizon::Infinite => 6.0,
            Horizon::Finite(h) => 0.9 * h,
        };
        let steps = 40000.0 / t_max.max(1.0);
        let (e, t, _) = envelope_ode_error(&im, t_max, steps);
        w.see(e, || format!("L={depth} t={t}"));
    }
    w.check("envelope_vs_rk4", 1e-5)
}

fn random_net(d: usize, widths: &[usize], epsilon: f64, seed: u64) -> NetworkWeights {
    InitSpec {
        beta: 1.0,
        mode: InitMode::Dense,
        seed,
        widths: widths.to_vec(),
    }
    .init(d, epsilon)
    .expect("valid spec")
}

/// Relative error of backprop against central differences on small random nets.
pub fn check_gradients() -> CheckResult {
    let mut w = Worst::new();
    for k in 0..20u64 {
        let depth = 2 + (k % 2) as usize;
        let d = 3 + (k % 4) as usize;
        let widths: Vec<usize> = (0..depth - 1).map(|i| 2 + ((k as usize + 3 * i) % 7)).collect();
        let eps = [0.0, 0.1, 0.5, 1.0][(k % 4) as usize];
        let teacher: Vec<f64> = (0..d).map(|i| 1.0 - 0.3 * i as f64).collect();
        let ds = synthetic_gaussian(d, 12 + d, 100 + k, &teacher).expect("m ≥ d");
        let net = random_net(d, &widths, eps, k);
        let g = grad_mse(&net, &ds.x_tilde, &ds.y).expect("shapes match");
        let mut num = 0.0;
        let mut den = 0.0;
        for (l, gl) in g.iter().enumerate() {
            for idx in 0..gl.as_slice().len() {
                let f = |delta: f64| {
                    let mut p = net.clone();
                    p.layers[l].as_mut_slice()[idx] += delta;
                    loss(&p, &ds.x_tilde, &ds.y).expect("shapes match")
                };
                let fd = oracle::central_diff(f, 0.0, 1e-6);
                num += (fd - gl.as_slice()[idx]).powi(2);
                den += gl.as_slice()[idx].powi(2);
            }
        }
        w.see((num / den).sqrt(), || format!("instance {k} L={depth} widths={widths:?} eps={eps}"));
    }
    w.check("backprop_vs_finite_diff", 1e-5)
}

/// `⟨∇, ∇^X⟩` for linear nets, as a fraction of `‖∇‖ ‖∇^X‖`; must not be negative.
pub fn check_alignment(instances: u64) -> CheckResult {
    let mut w = Worst::new();
    for k in 0..instances {
        let depth = 2 + (k % 3) as usize;
        let d = 2 + (k % 6) as usize;
        let widths: Vec<usize> = (0..depth - 1).map(|i| 1 + ((k as usize + 5 * i) % 8)).collect();
        let teacher: Vec<f64> = (0..d).map(|i| ((i * 7 + k as usize) % 5) as f64 - 2.0).collect();
        let m = d + 3 + (k % 20) as usize;
        let Ok(ds) = synthetic_gaussian(d, m, 500 + k, &teacher) else { continue };
        let net = random_net(d, &widths, 0.0, 1000 + k);
        let (g, gx) = gradient_pair(&net, &ds.x_tilde, &ds.y).expect("shapes match");
        let dot: f64 = g.iter().zip(&gx).map(|(a, b)| a.frobenius_dot(b).expect("shapes match")).sum();
        let na: f64 = g.iter().map(|a| frobenius_norm(a).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = gx.iter().map(|a| frobenius_norm(a).powi(2)).sum::<f64>().sqrt();
        let scale = (na * nb).max(f64::MIN_POSITIVE);
        w.see(-dot / scale, || format!("instance {k} L={depth} widths={widths:?} m={m}"));
    }
    w.check("linear_alignment_nonnegative", 1e-10)
}

/// Per log point: measured norms against the envelopes, and the deviation of the
/// `K1`/`K2` proxies from the trained net against their ceilings.
#[derive(Debug, Clone)]
pub struct DeviationRun {
    pub weight_ratio: f64,
    pub input_ratio: f64,
    pub xi_ratio: f64,
    pub xi_proj_ratio: f64,
    /// `(t, kind, report)`.
    pub deviations: Vec<(f64, ProxyKind, DeviationReport)>,
}

impl DeviationRun {
    /// Largest measured/ceiling ratio over the deviation reports of `kind`.
    pub fn deviation_ratio(&self, kind: ProxyKind) -> f64 {
        self.deviations
            .iter()
            .filter(|(_, k, _)| *k == kind)
            .map(|(_, _, r)| (r.sup_observed / r.lemma_bound_pointwise).max(r.train_l2 / r.lemma_bound_train))
            .fold(0.0, f64::max)
    }
}

/// Twin-trains (`ε` and `0`, same fixed steps) and evaluates every deviation check.
pub fn deviation_run(
    ds: &WhitenedDataset,
    test: &nearlin_core::dataio::EvalSet,
    init: &InitSpec,
    epsilon: f64,
    cfg: &TrainConfig,
) -> Result<DeviationRun, CliError> {
    let times: Vec<f64> = {
        let n = (cfg.t_end / cfg.log_interval + 1e-9).floor() as usize;
        (0..=n).map(|k| k as f64 * cfg.log_interval).collect()
    };
    let cfg = TrainConfig {
        snapshot_times: times,
        ..cfg.clone()
    };
    let nonlin = train(ds, init, epsilon, &cfg)?;
    let mut lin_cfg = cfg.clone();
    if matches!(cfg.step, StepRule::Adaptive { .. }) {
        lin_cfg.step = StepRule::Replay {
            steps: nonlin.step_sizes.clone(),
        };
    }
    let lin = train(ds, init, 0.0, &lin_cfg)?;
    let bc = BoundConfig {
        depth: init.depth(),
        d: ds.d,
        m: ds.m,
        beta: init.beta,
        epsilon,
        gamma: 1.0,
        delta: 0.5,
        kappa: 2,
        p: 1,
        rho: nonlin.rho,
        s: ds.s,
        n1: None,
        v_anchor: VAnchor::BarBeta,
    };
    let im = compute_intermediates(&bc)?;
    let (xi_cap, xi_proj_cap) = residual_ceilings(im.depth, im.rho, im.beta, im.s, ds.m);
    let mut run = DeviationRun {
        weight_ratio: 0.0,
        input_ratio: 0.0,
        xi_ratio: 0.0,
        xi_proj_ratio: 0.0,
        deviations: Vec::new(),
    };
    let horizon = blowup_time(&im);
    for (k, &t) in nonlin.times.iter().enumerate() {
        run.xi_ratio = run.xi_ratio.max(nonlin.xi_norms[k] / xi_cap);
        run.xi_proj_ratio = run.xi_proj_ratio.max(nonlin.xi_proj_norms[k] / xi_proj_cap);
        if !horizon.contains(t) {
            continue;
        }
        let u = u_of_t(&im, t)?;
        for norms in &nonlin.weight_spectral_norms {
            run.weight_ratio = run.weight_ratio.max(norms[k] / u);
        }
        run.input_ratio = run.input_ratio.max(nonlin.input_layer_data_norm[k] / (im.rho * u));
    }
    let train_set = ds.train_set();
    for (sn, sl) in nonlin.snapshots.iter().zip(&lin.snapshots) {
        if !horizon.contains(sn.t) || epsilon == 0.0 {
            continue;
        }
        let u = u_of_t(&im, sn.t)?;
        let v = v_of_t(&im, sn.t, VAnchor::BarBeta)?;
        let inputs = BoundInputs {
            depth: im.depth,
            rho: im.rho,
            u,
            v,
        };
        for kind in [ProxyKind::K1, ProxyKind::K2] {
            let proxy = build_proxy(kind, &sl.weights, Some(&sn.weights), epsilon, Some(&ds.x_tilde))?;
            let r = deviation_report(&sn.weights, &proxy, &train_set, test, inputs)?;
            run.deviations.push((sn.t, kind, r));
        }
    }
    Ok(run)
}

fn synthetic_deviation_checks() -> Result<Vec<CheckResult>, CliError> {
    let mut env = Worst::new();
    let mut resid = Worst::new();
    let mut dev1 = Worst::new();
    let mut dev2 = Worst::new();
    for (k, (depth, eps, mode)) in [
        (2usize, 0.1, InitMode::Dense),
        (2, 0.5, InitMode::RankOneInput),
        (3, 0.2, InitMode::Dense),
        (2, 1.0, InitMode::Dense),
    ]
    .into_iter()
    .enumerate()
    {
        let d = 5;
        let teacher = [1.0, -0.5, 0.25, 0.0, 2.0];
        let all = synthetic_gaussian(d, 260, 40 + k as u64, &teacher)?;
        let ds = synthetic_gaussian(d, 200, 40 + k as u64, &teacher)?;
        let test = all.train_set();
        let init = InitSpec {
            beta: 0.2,
            mode,
            seed: k as u64,
            widths: vec![6; depth - 1],
        };
        let cfg = TrainConfig {
            step: StepRule::Fixed { lr: 1e-3 },
            t_end: 3.0,
            log_interval: 0.25,
            record_alignment: false,
            ..Default::default()
        };
        let run = deviation_run(&ds, &test, &init, eps, &cfg)?;
        let at = || format!("L={depth} eps={eps} mode={mode:?}");
        env.see(run.weight_ratio.max(run.input_ratio) - 1.0, at);
        resid.see(run.xi_ratio.max(run.xi_proj_ratio) - 1.0, at);
        dev1.see(run.deviation_ratio(ProxyKind::K1) - 1.0, at);
        dev2.see(run.deviation_ratio(ProxyKind::K2) - 1.0, at);
    }
    Ok(vec![
        env.check("norm_envelope_synthetic", 1e-6),
        resid.check("residual_ceiling_synthetic", 1e-6),
        dev1.check("k1_deviation_synthetic", 0.0),
        dev2.check("k2_deviation_synthetic", 0.0),
    ])
}

pub fn run(opts: &SelftestOptions) -> Result<SelftestReport, CliError> {
    let mut checks = vec![
        check_upper_gamma(),
        check_gamma_recurrence(),
        check_e1(),
        check_hyp2f1(),
        check_w_consistency(opts),
        check_envelope_ode(),
        check_gradients(),
        check_alignment(100),
    ];
    checks.extend(synthetic_deviation_checks()?);
    Ok(SelftestReport { checks })
}

//! Leaky-ReLU networks, their squared-loss gradients, and gradient-flow
//! emulation by full-batch explicit Euler steps on whitened data.
//!
//! Two evaluation paths exist. [`forward`] and [`grad_mse`] work on feature-major
//! `d x k` inputs with the exact [`matmul`] and serve as the reference. The
//! [`train`] loop keeps the data sample-major and runs blocked products, which
//! is what makes 60000-sample runs affordable.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::WhitenedDataset;
use crate::densela::{
    frobenius_norm, gemm, matmul, matmul_blocked, spectral_norm, sym_eig, vector_norm, DenseMatrix, LinalgError,
    StridedRef,
};
use crate::risk::{empirical_risk, MarginConfig, RiskKind};

#[derive(Debug, Error, Clone)]
pub enum NetError {
    #[error("layer {layer} expects {expected} inputs but the previous layer has {found} outputs")]
    LayerChain {
        layer: usize,
        expected: usize,
        found: usize,
    },
    #[error("final layer must have one output, found {0}")]
    OutputDim(usize),
    #[error("network needs at least one layer")]
    Empty,
    #[error("epsilon = {0} outside [0, 1]")]
    Epsilon(f64),
    #[error("input has {found} features, network expects {expected}")]
    InputDim { expected: usize, found: usize },
    #[error("labels have {found} entries for {expected} samples")]
    LabelCount { expected: usize, found: usize },
    #[error("invalid init: {0}")]
    Init(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training diverged at t = {t}: loss is not finite")]
    Diverged {
        t: f64,
        last_finite: Box<NetworkWeights>,
    },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, NetError>;

/// `φ^ε(x) = x - ε min(0, x)`: slope 1 on the right, `1 - ε` on the left.
pub fn phi_eps(epsilon: f64, x: f64) -> f64 {
    x - epsilon * x.min(0.0)
}

/// Derivative of [`phi_eps`]; at exactly zero the right derivative 1 is used.
pub fn phi_eps_deriv(epsilon: f64, x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        1.0 - epsilon
    }
}

/// Layer matrices `W_1 (n_1 x d), ..., W_L (1 x n_{L-1})` with slope gap `ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkWeights {
    pub layers: Vec<DenseMatrix>,
    pub epsilon: f64,
}

impl NetworkWeights {
    pub fn new(layers: Vec<DenseMatrix>, epsilon: f64) -> Result<Self> {
        let w = Self { layers, epsilon };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(NetError::Empty);
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(NetError::Epsilon(self.epsilon));
        }
        for l in 1..self.layers.len() {
            let expected = self.layers[l].cols();
            let found = self.layers[l - 1].rows();
            if expected != found {
                return Err(NetError::LayerChain {
                    layer: l + 1,
                    expected,
                    found,
                });
            }
        }
        let out = self.layers.last().expect("non-empty").rows();
        if out != 1 {
            return Err(NetError::OutputDim(out));
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols()
    }

    /// The same weights under a different slope gap.
    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        Self {
            layers: self.layers.clone(),
            epsilon,
        }
    }

    pub fn spectral_norms(&self) -> Result<Vec<f64>> {
        self.layers.iter().map(robust_spectral_norm).collect()
    }

    /// `‖W_1‖_F / ‖W_1‖`, the square root of the input layer's stable rank.
    pub fn rho(&self) -> Result<f64> {
        let w1 = &self.layers[0];
        Ok(frobenius_norm(w1) / robust_spectral_norm(w1)?)
    }

    /// `W_L ··· W_1` as a `1 x d` row.
    pub fn end_to_end(&self) -> DenseMatrix {
        let mut p = self.layers.last().expect("non-empty").clone();
        for w in self.layers.iter().rev().skip(1) {
            p = matmul(&p, w).expect("validated chain");
        }
        p
    }
}

const SPEC_TOL: f64 = 1e-13;
const SPEC_MAX_ITER: usize = 20_000;

/// Power iteration, falling back to a Jacobi eigendecomposition of the smaller Gram
/// matrix when the top singular values are too close for the iteration to settle.
pub fn robust_spectral_norm(w: &DenseMatrix) -> Result<f64> {
    match spectral_norm(w, SPEC_TOL, SPEC_MAX_ITER) {
        Ok(s) => Ok(s.value),
        Err(LinalgError::ZeroMatrix) => Ok(0.0),
        Err(LinalgError::NotConverged { .. }) => {
            let gram = if w.rows() <= w.cols() {
                matmul(w, &w.transpose())?
            } else {
                matmul(&w.transpose(), w)?
            };
            let eig = sym_eig(&gram, 1e-15)?;
            Ok(eig.values[0].max(0.0).sqrt())
        }
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Dense,
    RankOneInput,
}

/// Seeded initialization rescaled so every layer has spectral norm exactly `β`.
///
/// Entries are drawn uniformly from `±1/sqrt(fan_in)`; in rank-one mode the input
/// layer is the outer product of two such draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    pub beta: f64,
    pub mode: InitMode,
    pub seed: u64,
    /// Hidden widths `n_1, ..., n_{L-1}`.
    pub widths: Vec<usize>,
}

impl InitSpec {
    pub fn depth(&self) -> usize {
        self.widths.len() + 1
    }

    pub fn init(&self, d: usize, epsilon: f64) -> Result<NetworkWeights> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(NetError::Init(format!("beta = {} must be positive", self.beta)));
        }
        if d == 0 || self.widths.contains(&0) {
            return Err(NetError::Init("zero width".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut dims = vec![d];
        dims.extend(&self.widths);
        dims.push(1);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = if l == 0 && self.mode == InitMode::RankOneInput {
                let a: Vec<f64> = (0..fan_out).map(|_| rng.random_range(-bound..bound)).collect();
                let b: Vec<f64> = (0..fan_in).map(|_| rng.random_range(-bound..bound)).collect();
                DenseMatrix::from_fn(fan_out, fan_in, |i, j| a[i] * b[j])
            } else {
                DenseMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-bound..bound))
            };
            let norm = robust_spectral_norm(&w)?;
            if norm == 0.0 {
                return Err(NetError::Init("degenerate draw".into()));
            }
            layers.push(w.scale(self.beta / norm));
        }
        NetworkWeights::new(layers, epsilon)
    }
}

/// Per-layer caches from [`forward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Pre-activations `W_l x_{l-1}` of the hidden layers.
    pub pre: Vec<DenseMatrix>,
    /// Post-activations `x_l = φ^ε(W_l x_{l-1})`; `post[0]` is the input itself.
    pub post: Vec<DenseMatrix>,
    /// `1 x k` outputs.
    pub output: DenseMatrix,
}

/// Evaluates the network on the columns of `x`.
pub fn forward(weights: &NetworkWeights, x: &DenseMatrix) -> Result<ForwardPass> {
    if x.rows() != weights.input_dim() {
        return Err(NetError::InputDim {
            expected: weights.input_dim(),
            found: x.rows(),
        });
    }
    let eps = weights.epsilon;
    let mut pre = Vec::new();
    let mut post = vec![x.clone()];
    let l_count = weights.depth();
    for w in &weights.layers[..l_count - 1] {
        let h = matmul(w, post.last().expect("input"))?;
        post.push(h.map(|v| phi_eps(eps, v)));
        pre.push(h);
    }
    let output = matmul(&weights.layers[l_count - 1], post.last().expect("input"))?;
    Ok(ForwardPass { pre, post, output })
}

/// Network outputs on the columns of `x` via blocked products; agrees with
/// [`forward`] up to rounding and is much faster on large batches.
pub fn predict(weights: &NetworkWeights, x: &DenseMatrix) -> Result<Vec<f64>> {
    if x.rows() != weights.input_dim() {
        return Err(NetError::InputDim {
            expected: weights.input_dim(),
            found: x.rows(),
        });
    }
    let eps = weights.epsilon;
    let l_count = weights.depth();
    let mut h = matmul_blocked(&weights.layers[0], x)?;
    for w in &weights.layers[1..l_count] {
        h = matmul_blocked(w, &h.map(|v| phi_eps(eps, v)))?;
    }
    Ok(h.into_vec())
}

/// Gradients of a scalar objective given `out_grad = ∂objective/∂f` (a `1 x k` row).
pub fn backprop(weights: &NetworkWeights, pass: &ForwardPass, out_grad: &DenseMatrix) -> Result<Vec<DenseMatrix>> {
    let l_count = weights.depth();
    let mut grads = vec![DenseMatrix::zeros(0, 0); l_count];
    let mut delta = out_grad.clone();
    for l in (0..l_count).rev() {
        grads[l] = matmul(&delta, &pass.post[l].transpose())?;
        if l > 0 {
            let back = matmul(&weights.layers[l].transpose(), &delta)?;
            let slope = pass.pre[l - 1].map(|v| phi_eps_deriv(weights.epsilon, v));
            delta = back.hadamard(&slope)?;
        }
    }
    Ok(grads)
}

fn check_labels(x: &DenseMatrix, y: &DenseMatrix) -> Result<()> {
    if y.rows() != 1 || y.cols() != x.cols() {
        return Err(NetError::LabelCount {
            expected: x.cols(),
            found: y.cols() * y.rows(),
        });
    }
    Ok(())
}

/// `(1/2m) ‖Y - f(X̃)‖²`.
pub fn loss(weights: &NetworkWeights, x_tilde: &DenseMatrix, y: &DenseMatrix) -> Result<f64> {
    check_labels(x_tilde, y)?;
    let f = forward(weights, x_tilde)?.output;
    let m = x_tilde.cols() as f64;
    Ok(frobenius_norm(&y.sub(&f)?).powi(2) / (2.0 * m))
}

/// Gradients of `(1/2m) ‖Y - f(X̃)‖²` with respect to each `W_l`.
pub fn grad_mse(weights: &NetworkWeights, x_tilde: &DenseMatrix, y: &DenseMatrix) -> Result<Vec<DenseMatrix>> {
    check_labels(x_tilde, y)?;
    let pass = forward(weights, x_tilde)?;
    let m = x_tilde.cols() as f64;
    let r = pass.output.sub(y)?.scale(1.0 / m);
    backprop(weights, &pass, &r)
}

/// `(1/2m) ‖(Y - f(X̃)) X̃ᵀ‖²`.
pub fn projected_loss(weights: &NetworkWeights, x_tilde: &DenseMatrix, y: &DenseMatrix) -> Result<f64> {
    check_labels(x_tilde, y)?;
    let f = forward(weights, x_tilde)?.output;
    let m = x_tilde.cols() as f64;
    let z = matmul(&y.sub(&f)?, &x_tilde.transpose())?;
    Ok(frobenius_norm(&z).powi(2) / (2.0 * m))
}

/// `Σ_l tr[∇^X_l ∇_lᵀ]` between loss gradients and projected-loss gradients.
pub fn gradient_alignment(weights: &NetworkWeights, x_tilde: &DenseMatrix, y: &DenseMatrix) -> Result<f64> {
    let (g, gx) = gradient_pair(weights, x_tilde, y)?;
    Ok(g.iter()
        .zip(&gx)
        .map(|(a, b)| a.frobenius_dot(b).expect("same shapes"))
        .sum())
}

/// Loss gradients and projected-loss gradients, in that order.
pub fn gradient_pair(
    weights: &NetworkWeights,
    x_tilde: &DenseMatrix,
    y: &DenseMatrix,
) -> Result<(Vec<DenseMatrix>, Vec<DenseMatrix>)> {
    check_labels(x_tilde, y)?;
    let pass = forward(weights, x_tilde)?;
    let m = x_tilde.cols() as f64;
    let r = pass.output.sub(y)?.scale(1.0 / m);
    let rx = matmul(&matmul(&r, &x_tilde.transpose())?, x_tilde)?;
    Ok((backprop(weights, &pass, &r)?, backprop(weights, &pass, &rx)?))
}

/// How the Euler step size is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepRule {
    /// Constant step; continuous time is `steps × lr`.
    Fixed { lr: f64 },
    /// Step chosen so no layer changes by more than `max_rel_change` of its Frobenius
    /// norm, clamped to `[lr_min, lr_max]`.
    Adaptive {
        lr_min: f64,
        lr_max: f64,
        max_rel_change: f64,
    },
    /// Exact step sizes taken from an earlier run's `step_sizes`, so two runs share
    /// one time grid.
    Replay { steps: Vec<f64> },
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Fixed { lr: 0.001 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub step: StepRule,
    pub t_end: f64,
    pub log_interval: f64,
    /// Extra logging times on top of the uniform grid.
    #[serde(default)]
    pub extra_log_times: Vec<f64>,
    /// Times at which full weights are kept; each is also a log time.
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    /// Margins at which train margin risk is logged.
    #[serde(default)]
    pub gammas: Vec<f64>,
    #[serde(default = "yes")]
    pub record_alignment: bool,
    /// Use the closed-form gradient of a linear net (only when `ε = 0`).
    #[serde(default = "yes")]
    pub linear_fast_path: bool,
}

fn yes() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            step: StepRule::default(),
            t_end: 1.0,
            log_interval: 0.1,
            extra_log_times: Vec::new(),
            snapshot_times: Vec::new(),
            gammas: Vec::new(),
            record_alignment: true,
            linear_fast_path: true,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        match &self.step {
            StepRule::Fixed { lr } if !(*lr > 0.0 && lr.is_finite()) => {
                return Err(NetError::Config(format!("lr = {lr} must be positive")))
            }
            StepRule::Replay { steps } if steps.iter().any(|h| !(*h > 0.0 && h.is_finite())) => {
                return Err(NetError::Config("replayed step sizes must be positive".into()))
            }
            StepRule::Adaptive {
                lr_min,
                lr_max,
                max_rel_change,
            } if !(*lr_min > 0.0 && lr_max >= lr_min && *max_rel_change > 0.0) => {
                return Err(NetError::Config("adaptive step bounds must be positive and ordered".into()))
            }
            _ => {}
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(NetError::Config(format!("t_end = {} must be positive", self.t_end)));
        }
        if !(self.log_interval > 0.0) {
            return Err(NetError::Config("log_interval must be positive".into()));
        }
        if let Some(g) = self.gammas.iter().find(|g| !(**g > 0.0)) {
            return Err(NetError::Config(format!("gamma = {g} must be positive")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub weights: NetworkWeights,
}

/// Time-indexed record of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub epsilon: f64,
    pub beta: f64,
    /// `ρ` of the initial input layer.
    pub rho: f64,
    pub times: Vec<f64>,
    pub steps: Vec<u64>,
    pub losses: Vec<f64>,
    pub projected_losses: Vec<f64>,
    /// Train misclassification risk.
    pub train_risks: Vec<f64>,
    pub gammas: Vec<f64>,
    /// `margin_risks[g][k]` is the train margin risk at `gammas[g]` and `times[k]`.
    pub margin_risks: Vec<Vec<f64>>,
    /// `weight_spectral_norms[l][k]` is `‖W_{l+1}(t_k)‖`.
    pub weight_spectral_norms: Vec<Vec<f64>>,
    /// `(1/√m) ‖W_1 X̃‖_F`.
    pub input_layer_data_norm: Vec<f64>,
    /// `‖Ξ‖_F` with `Ξ = (Y - f)/m`.
    pub xi_norms: Vec<f64>,
    /// `‖Ξ X̃ᵀ‖_F`.
    pub xi_proj_norms: Vec<f64>,
    /// Empty when alignment was not recorded.
    pub alignment_values: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    /// Every Euler step size taken, in order. Empty for fixed-step runs.
    #[serde(default)]
    pub step_sizes: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn snapshot_at(&self, t: f64) -> Option<&NetworkWeights> {
        self.snapshots
            .iter()
            .find(|s| (s.t - t).abs() <= 1e-9 * t.abs().max(1.0))
            .map(|s| &s.weights)
    }

    /// Index of the logged time closest to `t`.
    pub fn nearest_index(&self, t: f64) -> Option<usize> {
        (0..self.times.len()).min_by(|&a, &b| {
            (self.times[a] - t).abs().total_cmp(&(self.times[b] - t).abs())
        })
    }

    pub fn csv_header(&self) -> String {
        let mut cols = vec!["t".to_string(), "loss".into(), "projected_loss".into(), "train_risk".into()];
        cols.extend(self.gammas.iter().map(|g| format!("margin_risk@{g:e}")));
        cols.extend((1..=self.weight_spectral_norms.len()).map(|l| format!("specnorm_W{l}")));
        cols.push("input_data_norm".into());
        cols.push("xi_norm".into());
        cols.push("xi_proj_norm".into());
        cols.push("alignment".into());
        cols.join(",")
    }

    /// One CSV row per log point, 17 significant digits.
    pub fn csv_rows(&self) -> Vec<String> {
        (0..self.len())
            .map(|k| {
                let mut row = vec![
                    fmt17(self.times[k]),
                    fmt17(self.losses[k]),
                    fmt17(self.projected_losses[k]),
                    fmt17(self.train_risks[k]),
                ];
                row.extend(self.margin_risks.iter().map(|r| fmt17(r[k])));
                row.extend(self.weight_spectral_norms.iter().map(|r| fmt17(r[k])));
                row.push(fmt17(self.input_layer_data_norm[k]));
                row.push(fmt17(self.xi_norms[k]));
                row.push(fmt17(self.xi_proj_norms[k]));
                row.push(self.alignment_values.get(k).map_or_else(String::new, |v| fmt17(*v)));
                row.join(",")
            })
            .collect()
    }
}

/// Formats a float with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// A projected-loss increase beyond the allowed slack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotoneViolation {
    pub t: f64,
    pub previous: f64,
    pub value: f64,
}

/// Logged points where `values[k] > values[k-1] + slack`.
pub fn monotone_violations(times: &[f64], values: &[f64], slack: f64) -> Vec<MonotoneViolation> {
    values
        .windows(2)
        .zip(&times[1..])
        .filter(|(w, _)| w[1] > w[0] + slack)
        .map(|(w, &t)| MonotoneViolation {
            t,
            previous: w[0],
            value: w[1],
        })
        .collect()
}

/// Logged points where `values[k] > values[0] + slack`.
pub fn initial_value_violations(times: &[f64], values: &[f64], slack: f64) -> Vec<MonotoneViolation> {
    let Some(&first) = values.first() else {
        return Vec::new();
    };
    values
        .iter()
        .zip(times)
        .skip(1)
        .filter(|(v, _)| **v > first + slack)
        .map(|(&value, &t)| MonotoneViolation {
            t,
            previous: first,
            value,
        })
        .collect()
}

/// Sample-major training state.
struct Kernel<'a> {
    m: usize,
    d: usize,
    /// `m x d`
    xt: Vec<f64>,
    y: &'a [f64],
    /// Layer input dimensions `n_0 = d, n_1, ..., n_{L-1}`.
    dims: Vec<usize>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    out: Vec<f64>,
    resid: Vec<f64>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
}

impl<'a> Kernel<'a> {
    fn new(ds: &'a WhitenedDataset, weights: &NetworkWeights) -> Self {
        let (d, m) = (ds.d, ds.m);
        let xt = ds.x_tilde.transpose().into_vec();
        let mut dims = vec![d];
        dims.extend(weights.layers[..weights.depth() - 1].iter().map(|w| w.rows()));
        let hidden = &dims[1..];
        Kernel {
            m,
            d,
            xt,
            y: ds.y.as_slice(),
            pre: hidden.iter().map(|&n| vec![0.0; m * n]).collect(),
            post: hidden.iter().map(|&n| vec![0.0; m * n]).collect(),
            out: vec![0.0; m],
            resid: vec![0.0; m],
            delta: vec![0.0; m * hidden.iter().copied().max().unwrap_or(0)],
            delta_next: vec![0.0; m * hidden.iter().copied().max().unwrap_or(0)],
            dims,
        }
    }

    fn input(&self, l: usize) -> &[f64] {
        if l == 0 {
            &self.xt
        } else {
            &self.post[l - 1]
        }
    }

    /// Forward pass; returns the loss and fills `resid = (f - Y)/m`.
    fn forward(&mut self, w: &NetworkWeights) -> f64 {
        let m = self.m;
        let eps = w.epsilon;
        let l_count = w.depth();
        for l in 0..l_count - 1 {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let mut h = std::mem::take(&mut self.pre[l]);
            gemm(
                m,
                n_in,
                n_out,
                StridedRef::row_major(self.input(l), n_in),
                StridedRef::transposed(w.layers[l].as_slice(), n_in),
                &mut h,
                0.0,
            );
            for (a, &v) in self.post[l].iter_mut().zip(&h) {
                *a = phi_eps(eps, v);
            }
            self.pre[l] = h;
        }
        let n_in = self.dims[l_count - 1];
        let mut out = std::mem::take(&mut self.out);
        gemm(
            m,
            n_in,
            1,
            StridedRef::row_major(self.input(l_count - 1), n_in),
            StridedRef::transposed(w.layers[l_count - 1].as_slice(), n_in),
            &mut out,
            0.0,
        );
        self.out = out;
        let inv_m = 1.0 / m as f64;
        let mut sq = 0.0;
        for ((r, &f), &y) in self.resid.iter_mut().zip(&self.out).zip(self.y) {
            let e = f - y;
            sq += e * e;
            *r = e * inv_m;
        }
        sq * 0.5 * inv_m
    }

    /// Backpropagates `out_grad` (length `m`) through the cached forward pass.
    fn backward(&mut self, w: &NetworkWeights, out_grad: &[f64], grads: &mut [DenseMatrix]) {
        let m = self.m;
        let eps = w.epsilon;
        let l_count = w.depth();
        let top = l_count - 1;
        let n_top = self.dims[top];
        gemm(
            1,
            m,
            n_top,
            StridedRef::row_major(out_grad, m),
            StridedRef::row_major(self.input(top), n_top),
            grads[top].as_mut_slice(),
            0.0,
        );
        if top == 0 {
            return;
        }
        // delta_{L-1} = out_grad ⊗ W_L, masked by the activation slope.
        let w_top = w.layers[top].as_slice();
        for k in 0..m {
            let g = out_grad[k];
            let row = &mut self.delta[k * n_top..(k + 1) * n_top];
            let h = &self.pre[top - 1][k * n_top..(k + 1) * n_top];
            for ((dv, &wv), &hv) in row.iter_mut().zip(w_top).zip(h) {
                *dv = g * wv * phi_eps_deriv(eps, hv);
            }
        }
        for l in (0..top).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            gemm(
                n_out,
                m,
                n_in,
                StridedRef::transposed(&self.delta[..m * n_out], n_out),
                StridedRef::row_major(self.input(l), n_in),
                grads[l].as_mut_slice(),
                0.0,
            );
            if l > 0 {
                gemm(
                    m,
                    n_out,
                    n_in,
                    StridedRef::row_major(&self.delta[..m * n_out], n_out),
                    StridedRef::row_major(w.layers[l].as_slice(), n_in),
                    &mut self.delta_next[..m * n_in],
                    0.0,
                );
                for (dv, &hv) in self.delta_next[..m * n_in].iter_mut().zip(&self.pre[l - 1]) {
                    *dv *= phi_eps_deriv(eps, hv);
                }
                std::mem::swap(&mut self.delta, &mut self.delta_next);
            }
        }
    }

    /// `Ξ X̃ᵀ` up to sign: `resid · X̃ᵀ` as a length-`d` vector.
    fn resid_times_xt(&self) -> Vec<f64> {
        let mut q = vec![0.0; self.d];
        gemm(
            1,
            self.m,
            self.d,
            StridedRef::row_major(&self.resid, self.m),
            StridedRef::row_major(&self.xt, self.d),
            &mut q,
            0.0,
        );
        q
    }

    /// `q X̃` for a length-`d` row `q`.
    fn row_times_x(&self, q: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        gemm(
            self.m,
            self.d,
            1,
            StridedRef::row_major(&self.xt, self.d),
            StridedRef::row_major(q, 1),
            &mut out,
            0.0,
        );
        out
    }

    /// `(1/√m) ‖W_1 X̃‖_F` from the cached first pre-activation.
    fn input_layer_data_norm(&self, w: &NetworkWeights) -> f64 {
        let src = if w.depth() == 1 { &self.out } else { &self.pre[0] };
        vector_norm(src) / (self.m as f64).sqrt()
    }
}

/// Closed-form gradient for `ε = 0`: with `P = W_L ··· W_1`, `G = X̃X̃ᵀ/m` and
/// `c = YX̃ᵀ/m`, the loss is `½(‖Y‖²/m - 2Pc + PGPᵀ)` and `∂/∂P = PG - c`.
struct LinearShortcut {
    gram: DenseMatrix,
    c: DenseMatrix,
    y_sq: f64,
}

impl LinearShortcut {
    fn new(ds: &WhitenedDataset) -> Self {
        let (d, m) = (ds.d, ds.m);
        let mut g = vec![0.0; d * d];
        gemm(
            d,
            m,
            d,
            StridedRef::row_major(ds.x_tilde.as_slice(), m),
            StridedRef::transposed(ds.x_tilde.as_slice(), m),
            &mut g,
            0.0,
        );
        let gram = DenseMatrix::new(d, d, g).expect("square").scale(1.0 / m as f64);
        let c = DenseMatrix::row_vector(ds.linear_target());
        let y_sq = ds.y.as_slice().iter().map(|v| v * v).sum::<f64>() / m as f64;
        Self { gram, c, y_sq }
    }

    fn loss_and_grads(&self, w: &NetworkWeights, grads: &mut [DenseMatrix]) -> f64 {
        let l_count = w.depth();
        // right[l] = W_{l-1} ··· W_1 (identity for l = 0).
        let mut right: Vec<Option<DenseMatrix>> = vec![None];
        for l in 1..l_count {
            let next = match &right[l - 1] {
                None => w.layers[0].clone(),
                Some(r) => matmul(&w.layers[l - 1], r).expect("chain"),
            };
            right.push(Some(next));
        }
        let p = match &right[l_count - 1] {
            None => w.layers[0].clone(),
            Some(r) => matmul(&w.layers[l_count - 1], r).expect("chain"),
        };
        let pg = matmul(&p, &self.gram).expect("shape");
        let g = pg.sub(&self.c).expect("shape");
        let loss = 0.5 * (self.y_sq - 2.0 * p.frobenius_dot(&self.c).expect("shape") + pg.frobenius_dot(&p).expect("shape"));
        // left = W_L ··· W_{l+1}, accumulated from the top.
        let mut left: Option<DenseMatrix> = None;
        for l in (0..l_count).rev() {
            let gr = match &right[l] {
                None => g.clone(),
                Some(r) => matmul(&g, &r.transpose()).expect("shape"),
            };
            grads[l] = match &left {
                None => gr,
                Some(lt) => matmul(&lt.transpose(), &gr).expect("shape"),
            };
            left = Some(match left {
                None => w.layers[l].clone(),
                Some(lt) => matmul(&lt, &w.layers[l]).expect("chain"),
            });
        }
        loss
    }
}

struct Recorder {
    traj: Trajectory,
    margins: Vec<MarginConfig>,
}

impl Recorder {
    fn record(
        &mut self,
        kernel: &mut Kernel,
        w: &NetworkWeights,
        grads: &[DenseMatrix],
        t: f64,
        step: u64,
        loss: f64,
        alignment: bool,
        snapshot: bool,
    ) -> Result<()> {
        let m = kernel.m as f64;
        let q = kernel.resid_times_xt();
        let xi_proj = vector_norm(&q);
        let tr = &mut self.traj;
        tr.times.push(t);
        tr.steps.push(step);
        tr.losses.push(loss);
        tr.projected_losses.push(0.5 * m * xi_proj * xi_proj);
        tr.xi_norms.push(vector_norm(&kernel.resid));
        tr.xi_proj_norms.push(xi_proj);
        tr.train_risks.push(
            empirical_risk(&kernel.out, kernel.y, RiskKind::Misclass, None).expect("shapes"),
        );
        for (series, mc) in tr.margin_risks.iter_mut().zip(&self.margins) {
            series.push(empirical_risk(&kernel.out, kernel.y, RiskKind::Margin, Some(*mc)).expect("shapes"));
        }
        for (series, layer) in tr.weight_spectral_norms.iter_mut().zip(&w.layers) {
            series.push(robust_spectral_norm(layer)?);
        }
        tr.input_layer_data_norm.push(kernel.input_layer_data_norm(w));
        if alignment {
            let rx = kernel.row_times_x(&q);
            let mut gx: Vec<DenseMatrix> = grads.iter().map(|g| DenseMatrix::zeros(g.rows(), g.cols())).collect();
            kernel.backward(w, &rx, &mut gx);
            let value = grads
                .iter()
                .zip(&gx)
                .map(|(a, b)| a.frobenius_dot(b).expect("shapes"))
                .sum();
            tr.alignment_values.push(value);
        }
        if snapshot {
            tr.snapshots.push(Snapshot {
                t,
                weights: w.clone(),
            });
        }
        Ok(())
    }
}

/// Runs gradient-flow emulation from `init` and logs a [`Trajectory`].
pub fn train(ds: &WhitenedDataset, init: &InitSpec, epsilon: f64, cfg: &TrainConfig) -> Result<Trajectory> {
    let weights = init.init(ds.d, epsilon)?;
    train_from(ds, weights, init.beta, cfg)
}

/// Like [`train`] but from explicit initial weights.
pub fn train_from(ds: &WhitenedDataset, mut w: NetworkWeights, beta: f64, cfg: &TrainConfig) -> Result<Trajectory> {
    cfg.validate()?;
    w.validate()?;
    if w.input_dim() != ds.d {
        return Err(NetError::InputDim {
            expected: w.input_dim(),
            found: ds.d,
        });
    }
    let margins = cfg
        .gammas
        .iter()
        .map(|&g| MarginConfig::new(g).map_err(|e| NetError::Config(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let l_count = w.depth();
    let mut rec = Recorder {
        traj: Trajectory {
            epsilon: w.epsilon,
            beta,
            rho: w.rho()?,
            times: Vec::new(),
            steps: Vec::new(),
            losses: Vec::new(),
            projected_losses: Vec::new(),
            train_risks: Vec::new(),
            gammas: cfg.gammas.clone(),
            margin_risks: vec![Vec::new(); cfg.gammas.len()],
            weight_spectral_norms: vec![Vec::new(); l_count],
            input_layer_data_norm: Vec::new(),
            xi_norms: Vec::new(),
            xi_proj_norms: Vec::new(),
            alignment_values: Vec::new(),
            snapshots: Vec::new(),
            step_sizes: Vec::new(),
        },
        margins,
    };

    let mut kernel = Kernel::new(ds, &w);
    let shortcut = (w.epsilon == 0.0 && cfg.linear_fast_path).then(|| LinearShortcut::new(ds));
    let mut grads: Vec<DenseMatrix> = w.layers.iter().map(|l| DenseMatrix::zeros(l.rows(), l.cols())).collect();

    // Event times: uniform log grid, extras, snapshots, and the end point.
    let n_grid = (cfg.t_end / cfg.log_interval + 1e-9).floor() as usize;
    let mut events: Vec<f64> = (0..=n_grid).map(|k| k as f64 * cfg.log_interval).collect();
    events.extend(cfg.extra_log_times.iter().copied().filter(|&t| t >= 0.0 && t <= cfg.t_end));
    events.extend(cfg.snapshot_times.iter().copied().filter(|&t| t >= 0.0 && t <= cfg.t_end));
    events.push(cfg.t_end);

    match &cfg.step {
        StepRule::Fixed { lr } => {
            let lr = *lr;
            let to_step = |t: f64| (t / lr).round() as u64;
            let log_steps: BTreeSet<u64> = events.iter().map(|&t| to_step(t)).collect();
            let snap_steps: BTreeSet<u64> = cfg.snapshot_times.iter().map(|&t| to_step(t)).collect();
            let last = to_step(cfg.t_end);
            let mut prev = w.clone();
            for k in 0..=last {
                let t = k as f64 * lr;
                let is_log = log_steps.contains(&k);
                let loss = step_gradients(&mut kernel, shortcut.as_ref(), &w, &mut grads, is_log);
                if !loss.is_finite() {
                    return Err(NetError::Diverged {
                        t,
                        last_finite: Box::new(prev),
                    });
                }
                if is_log {
                    rec.record(&mut kernel, &w, &grads, t, k, loss, cfg.record_alignment, snap_steps.contains(&k))?;
                }
                if k == last {
                    break;
                }
                prev.clone_from(&w);
                apply_step(&mut w, &grads, lr);
            }
        }
        rule @ (StepRule::Adaptive { .. } | StepRule::Replay { .. }) => {
            let mut events = events;
            events.sort_by(f64::total_cmp);
            events.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
            let snaps = &cfg.snapshot_times;
            let is_snap = |t: f64| snaps.iter().any(|&s| (s - t).abs() <= 1e-12 * s.abs().max(1.0));
            let mut t = 0.0;
            let mut k: u64 = 0;
            let mut next = 0;
            let mut prev = w.clone();
            loop {
                let is_log = next < events.len() && t >= events[next] - 1e-12 * events[next].abs().max(1.0);
                let loss = step_gradients(&mut kernel, shortcut.as_ref(), &w, &mut grads, is_log);
                if !loss.is_finite() {
                    return Err(NetError::Diverged {
                        t,
                        last_finite: Box::new(prev),
                    });
                }
                if is_log {
                    let target = events[next];
                    rec.record(&mut kernel, &w, &grads, target, k, loss, cfg.record_alignment, is_snap(target))?;
                    next += 1;
                    t = target;
                }
                if next >= events.len() {
                    break;
                }
                let h = match rule {
                    StepRule::Replay { steps } => match steps.get(k as usize) {
                        Some(&h) => h,
                        None => {
                            return Err(NetError::Config(format!(
                                "replay schedule ran out after {k} steps at t = {t}"
                            )))
                        }
                    },
                    StepRule::Adaptive {
                        lr_min,
                        lr_max,
                        max_rel_change,
                    } => {
                        let mut h = *lr_max;
                        for (layer, g) in w.layers.iter().zip(&grads) {
                            let gn = frobenius_norm(g);
                            if gn > 0.0 {
                                h = h.min(max_rel_change * frobenius_norm(layer) / gn);
                            }
                        }
                        h.max(*lr_min).min(events[next] - t)
                    }
                    StepRule::Fixed { .. } => unreachable!(),
                };
                rec.traj.step_sizes.push(h);
                prev.clone_from(&w);
                apply_step(&mut w, &grads, h);
                t += h;
                k += 1;
            }
        }
    }
    Ok(rec.traj)
}

/// Fills `grads` with loss gradients at `w` and returns the loss. On log steps the
/// full forward pass always runs so that logged statistics come from the data.
fn step_gradients(
    kernel: &mut Kernel,
    shortcut: Option<&LinearShortcut>,
    w: &NetworkWeights,
    grads: &mut [DenseMatrix],
    full_forward: bool,
) -> f64 {
    match shortcut {
        Some(sc) => {
            let loss = sc.loss_and_grads(w, grads);
            if full_forward {
                kernel.forward(w)
            } else {
                loss
            }
        }
        None => {
            let loss = kernel.forward(w);
            let resid = std::mem::take(&mut kernel.resid);
            kernel.backward(w, &resid, grads);
            kernel.resid = resid;
            loss
        }
    }
}

fn apply_step(w: &mut NetworkWeights, grads: &[DenseMatrix], h: f64) {
    for (layer, g) in w.layers.iter_mut().zip(grads) {
        for (a, &b) in layer.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *a -= h * b;
        }
    }
}

//! Proxy models built from linearly trained weights, their deviation from the
//! trained leaky-ReLU net, and the empirical "optimistic" risk estimate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abound::{deviation_ceiling, DeviationCeiling};
use crate::dataio::EvalSet;
use crate::densela::{matmul_blocked, sym_eig, DenseMatrix, LinalgError};
use crate::netflow::{predict, NetError, NetworkWeights, Trajectory};
use crate::risk::{empirical_risk, MarginConfig, RiskKind};

#[derive(Debug, Error)]
pub enum ProxyError {
    #[error("{0} proxy needs {1}")]
    Missing(&'static str, &'static str),
    #[error("proxy and model disagree: {0}")]
    Mismatch(String),
    #[error("invalid margin gamma = {0}")]
    BadGamma(f64),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, ProxyError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyKind {
    /// Same architecture and `ε`, linearly trained weights.
    K1,
    /// `K1` plus a linear correction fitted on the training set.
    K2,
    /// Linearly trained weights evaluated as a linear net.
    Linear,
}

impl ProxyKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProxyKind::K1 => "k1",
            ProxyKind::K2 => "k2",
            ProxyKind::Linear => "linear",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyModel {
    pub kind: ProxyKind,
    pub theta_lin: NetworkWeights,
    pub epsilon: f64,
    /// `1 x d`, present for `K2` only.
    pub correction: Option<DenseMatrix>,
}

/// `(X̃ X̃ᵀ)^{-1}` for full-row-rank `X̃`.
fn gram_inverse(x_tilde: &DenseMatrix) -> Result<DenseMatrix> {
    let gram = matmul_blocked(x_tilde, &x_tilde.transpose())?;
    let sym = DenseMatrix::from_fn(gram.rows(), gram.cols(), |i, j| 0.5 * (gram[(i, j)] + gram[(j, i)]));
    let eig = sym_eig(&sym, 1e-15)?;
    let largest = eig.values[0];
    let smallest = *eig.values.last().expect("non-empty");
    if !(smallest > 1e-12 * largest) {
        return Err(LinalgError::RankDeficient {
            smallest,
            largest,
            ratio: smallest / largest,
        }
        .into());
    }
    Ok(eig.reconstruct_with(|l| 1.0 / l))
}

/// Fits `K2` corrections against one fixed training input matrix, factoring the
/// gram matrix once.
pub struct K2Fitter<'a> {
    x_tilde: &'a DenseMatrix,
    gram_inv: DenseMatrix,
}

impl<'a> K2Fitter<'a> {
    pub fn new(x_tilde: &'a DenseMatrix) -> Result<Self> {
        Ok(Self {
            x_tilde,
            gram_inv: gram_inverse(x_tilde)?,
        })
    }

    /// `(f^ε_{θ^ε}(X̃) - f^ε_{θ⁰}(X̃)) X̃⁺` as a `1 x d` row.
    fn correction(&self, nonlin: &NetworkWeights, theta_lin: &NetworkWeights) -> Result<DenseMatrix> {
        let x = self.x_tilde;
        let f = predict(nonlin, x)?;
        let g = predict(theta_lin, x)?;
        let r = DenseMatrix::row_vector(f.iter().zip(&g).map(|(a, b)| a - b).collect());
        let rx = matmul_blocked(&r, &x.transpose())?;
        Ok(matmul_blocked(&rx, &self.gram_inv)?)
    }

    pub fn build(&self, theta_lin: &NetworkWeights, theta_nonlin: &NetworkWeights, epsilon: f64) -> Result<ProxyModel> {
        if theta_nonlin.epsilon != epsilon {
            return Err(ProxyError::Mismatch(format!(
                "model epsilon {} vs proxy epsilon {epsilon}",
                theta_nonlin.epsilon
            )));
        }
        let theta_lin = theta_lin.with_epsilon(epsilon);
        let correction = Some(self.correction(theta_nonlin, &theta_lin)?);
        Ok(ProxyModel {
            kind: ProxyKind::K2,
            theta_lin,
            epsilon,
            correction,
        })
    }
}

/// Builds a proxy from the linearly trained weights `theta_lin`.
///
/// `K2` needs the trained nonlinear weights and the training inputs; see [`K2Fitter`]
/// for building many `K2` proxies on one training set.
pub fn build_proxy(
    kind: ProxyKind,
    theta_lin: &NetworkWeights,
    theta_nonlin: Option<&NetworkWeights>,
    epsilon: f64,
    x_tilde: Option<&DenseMatrix>,
) -> Result<ProxyModel> {
    match kind {
        ProxyKind::K2 => {
            let nonlin = theta_nonlin.ok_or(ProxyError::Missing("k2", "the trained nonlinear weights"))?;
            let x = x_tilde.ok_or(ProxyError::Missing("k2", "the training inputs"))?;
            K2Fitter::new(x)?.build(theta_lin, nonlin, epsilon)
        }
        ProxyKind::K1 | ProxyKind::Linear => Ok(ProxyModel {
            kind,
            theta_lin: theta_lin.with_epsilon(epsilon),
            epsilon,
            correction: None,
        }),
    }
}

impl ProxyModel {
    /// Proxy outputs on the columns of `x`.
    pub fn evaluate(&self, x: &DenseMatrix) -> Result<Vec<f64>> {
        let mut out = match self.kind {
            ProxyKind::Linear => predict(&self.theta_lin.with_epsilon(0.0), x)?,
            _ => predict(&self.theta_lin, x)?,
        };
        if let Some(c) = &self.correction {
            let lin = matmul_blocked(c, x)?;
            for (o, l) in out.iter_mut().zip(lin.as_slice()) {
                *o += l;
            }
        }
        Ok(out)
    }

    /// Exponent of `ε` in the deviation ceiling; the linear proxy has none.
    pub fn epsilon_power(&self) -> Option<u8> {
        match self.kind {
            ProxyKind::K1 => Some(1),
            ProxyKind::K2 => Some(2),
            ProxyKind::Linear => None,
        }
    }
}

/// Envelope values at the evaluation time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    pub depth: usize,
    pub rho: f64,
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    /// Mean `|f - g|` over the test split.
    pub mean_abs_test: f64,
    /// `(1/m) ‖f(X̃) - g(X̃)‖_1` on the training split.
    pub mean_abs_train: f64,
    /// `‖f(X̃) - g(X̃)‖_2` on the training split.
    pub train_l2: f64,
    /// Largest `|f(x) - g(x)| / ‖x‖` over both splits.
    pub sup_observed: f64,
    /// Ceiling on `|f(x) - g(x)| / ‖x‖`; infinite for the linear proxy.
    pub lemma_bound_pointwise: f64,
    /// Ceiling on `train_l2`; infinite for the linear proxy.
    pub lemma_bound_train: f64,
    /// 0 for the linear proxy.
    pub epsilon_power: u8,
}

fn column_norms(x: &DenseMatrix) -> Vec<f64> {
    let mut acc = vec![0.0; x.cols()];
    for i in 0..x.rows() {
        for (a, v) in acc.iter_mut().zip(x.row(i)) {
            *a += v * v;
        }
    }
    acc.into_iter().map(f64::sqrt).collect()
}

fn sup_ratio(f: &[f64], g: &[f64], norms: &[f64]) -> f64 {
    f.iter()
        .zip(g)
        .zip(norms)
        .filter(|(_, n)| **n > 0.0)
        .map(|((a, b), n)| (a - b).abs() / n)
        .fold(0.0, f64::max)
}

fn mean_abs(f: &[f64], g: &[f64]) -> f64 {
    f.iter().zip(g).map(|(a, b)| (a - b).abs()).sum::<f64>() / f.len().max(1) as f64
}

/// Measured gap between the trained net and its proxy, next to the theoretical ceilings.
pub fn deviation_report(
    model: &NetworkWeights,
    proxy: &ProxyModel,
    train: &EvalSet,
    test: &EvalSet,
    bound: BoundInputs,
) -> Result<DeviationReport> {
    if model.epsilon != proxy.epsilon {
        return Err(ProxyError::Mismatch(format!(
            "model epsilon {} vs proxy epsilon {}",
            model.epsilon, proxy.epsilon
        )));
    }
    let f_train = predict(model, &train.x_tilde)?;
    let g_train = proxy.evaluate(&train.x_tilde)?;
    let f_test = predict(model, &test.x_tilde)?;
    let g_test = proxy.evaluate(&test.x_tilde)?;
    let sup = sup_ratio(&f_train, &g_train, &column_norms(&train.x_tilde))
        .max(sup_ratio(&f_test, &g_test, &column_norms(&test.x_tilde)));
    let train_l2 = f_train
        .iter()
        .zip(&g_train)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let ceiling = match proxy.epsilon_power() {
        Some(k) => deviation_ceiling(k, bound.depth, bound.rho, bound.u, bound.v, model.epsilon, train.len()),
        None => DeviationCeiling {
            pointwise: f64::INFINITY,
            train: f64::INFINITY,
        },
    };
    Ok(DeviationReport {
        mean_abs_test: mean_abs(&f_test, &g_test),
        mean_abs_train: mean_abs(&f_train, &g_train),
        train_l2,
        sup_observed: sup,
        lemma_bound_pointwise: ceiling.pointwise,
        lemma_bound_train: ceiling.train,
        epsilon_power: proxy.epsilon_power().unwrap_or(0),
    })
}

/// Outputs of a model and its proxy on both splits, reusable across margins.
#[derive(Debug, Clone)]
pub struct PairedOutputs {
    pub f_train: Vec<f64>,
    pub g_train: Vec<f64>,
    pub f_test: Vec<f64>,
    pub g_test: Vec<f64>,
    pub y_train: Vec<f64>,
    pub y_test: Vec<f64>,
}

impl PairedOutputs {
    pub fn compute(model: &NetworkWeights, proxy: &ProxyModel, train: &EvalSet, test: &EvalSet) -> Result<Self> {
        Ok(Self {
            f_train: predict(model, &train.x_tilde)?,
            g_train: proxy.evaluate(&train.x_tilde)?,
            f_test: predict(model, &test.x_tilde)?,
            g_test: proxy.evaluate(&test.x_tilde)?,
            y_train: train.y.as_slice().to_vec(),
            y_test: test.y.as_slice().to_vec(),
        })
    }

    pub fn test_risk(&self) -> f64 {
        empirical_risk(&self.f_test, &self.y_test, RiskKind::Misclass, None).expect("matched lengths")
    }

    /// Mean absolute model/proxy gap on the test and train splits.
    pub fn gaps(&self) -> (f64, f64) {
        (mean_abs(&self.f_test, &self.g_test), mean_abs(&self.f_train, &self.g_train))
    }

    pub fn optimistic(&self, gamma: f64) -> Result<OptimisticBreakdown> {
        let mc = MarginConfig::new(gamma).map_err(|_| ProxyError::BadGamma(gamma))?;
        let risk = |out: &[f64], y: &[f64], kind| empirical_risk(out, y, kind, Some(mc)).expect("matched lengths");
        let train_margin_risk = risk(&self.f_train, &self.y_train, RiskKind::Margin);
        let proxy_gap = risk(&self.g_test, &self.y_test, RiskKind::MarginCont)
            - risk(&self.g_train, &self.y_train, RiskKind::MarginCont);
        let (dev_test, dev_train) = self.gaps();
        let deviation_term = (dev_test + dev_train) / gamma;
        Ok(OptimisticBreakdown {
            gamma,
            train_margin_risk,
            proxy_gap,
            deviation_term,
            total: train_margin_risk + proxy_gap + deviation_term,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimisticBreakdown {
    pub gamma: f64,
    /// `R̂_γ(f)` on the training split.
    pub train_margin_risk: f64,
    /// `R^C_γ(g) - R̂^C_γ(g)`, test minus train ramp risk of the proxy.
    pub proxy_gap: f64,
    /// `(E|g - f| + (1/m)‖g(X) - f(X)‖_1) / γ`.
    pub deviation_term: f64,
    pub total: f64,
}

/// Empirical upper estimate of the model's risk, every term measured with the
/// test split standing in for the data distribution.
pub fn optimistic_bound(
    model: &NetworkWeights,
    proxy: &ProxyModel,
    train: &EvalSet,
    test: &EvalSet,
    gamma: f64,
) -> Result<OptimisticBreakdown> {
    PairedOutputs::compute(model, proxy, train, test)?.optimistic(gamma)
}

/// Training loss of the zero predictor with `±1` labels.
pub const ZERO_MODEL_LOSS: f64 = 0.5;

/// Boundaries between the three training phases; `None` when not reached.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phases {
    /// Train risk has reached the linear optimum's risk while the loss is still
    /// at the zero-model level.
    pub t1: Option<f64>,
    /// Loss has dropped below `(1 - tol)` times the linear optimum's loss.
    pub t2: Option<f64>,
}

impl Phases {
    /// 1, 2 or 3 for time `t`.
    pub fn phase_at(&self, t: f64) -> u8 {
        match (self.t1, self.t2) {
            (_, Some(t2)) if t >= t2 => 3,
            (Some(t1), _) if t >= t1 => 2,
            _ => 1,
        }
    }

    pub fn in_order(&self) -> bool {
        matches!((self.t1, self.t2), (Some(a), Some(b)) if a < b)
    }

    pub fn describe(&self) -> String {
        match (self.t1, self.t2) {
            (Some(a), Some(b)) => format!("phase 2 starts at t = {a}, phase 3 at t = {b}"),
            (Some(a), None) => format!("phase 2 starts at t = {a}; loss never beat the linear optimum"),
            (None, Some(b)) => format!("risk never reached the linear optimum at zero-model loss; phase 3 at t = {b}"),
            (None, None) => "no phase boundary detected".into(),
        }
    }
}

pub fn phase_detector(traj: &Trajectory, linear_optimum_loss: f64, linear_optimum_risk: f64, tol: f64) -> Phases {
    phases_from_series(&traj.times, &traj.losses, &traj.train_risks, linear_optimum_loss, linear_optimum_risk, tol)
}

pub fn phases_from_series(
    times: &[f64],
    losses: &[f64],
    risks: &[f64],
    linear_optimum_loss: f64,
    linear_optimum_risk: f64,
    tol: f64,
) -> Phases {
    let t1 = (0..times.len())
        .find(|&k| risks[k] <= linear_optimum_risk + tol && losses[k] >= ZERO_MODEL_LOSS - tol)
        .map(|k| times[k]);
    let t2 = (0..times.len())
        .find(|&k| losses[k] < (1.0 - tol) * linear_optimum_loss)
        .map(|k| times[k]);
    Phases { t1, t2 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synthetic_gaussian;
    use crate::densela::{frobenius_norm, matmul};
    use crate::netflow::{InitMode, InitSpec};

    fn nets(d: usize, eps: f64) -> (NetworkWeights, NetworkWeights) {
        let spec = |seed| InitSpec {
            beta: 0.7,
            mode: InitMode::Dense,
            seed,
            widths: vec![5],
        };
        (spec(1).init(d, 0.0).unwrap(), spec(2).init(d, eps).unwrap())
    }

    #[test]
    fn k2_interpolates_when_square() {
        let ds = synthetic_gaussian(6, 6, 3, &[1.0, 0.0, 0.0, -1.0, 0.5, 0.2]).unwrap();
        let (lin, non) = nets(6, 0.3);
        let p = build_proxy(ProxyKind::K2, &lin, Some(&non), 0.3, Some(&ds.x_tilde)).unwrap();
        assert_eq!(p.correction.as_ref().unwrap().shape(), (1, 6));
        let f = predict(&non, &ds.x_tilde).unwrap();
        let g = p.evaluate(&ds.x_tilde).unwrap();
        for (a, b) in f.iter().zip(&g) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn k2_residual_is_projection_complement() {
        let ds = synthetic_gaussian(4, 30, 9, &[1.0, 0.0, -1.0, 0.5]).unwrap();
        let (lin, non) = nets(4, 0.5);
        let p = build_proxy(ProxyKind::K2, &lin, Some(&non), 0.5, Some(&ds.x_tilde)).unwrap();
        let f = predict(&non, &ds.x_tilde).unwrap();
        let g0 = predict(&lin.with_epsilon(0.5), &ds.x_tilde).unwrap();
        let g = p.evaluate(&ds.x_tilde).unwrap();
        // X̃⁺ = X̃ᵀ/m for whitened data
        let r = DenseMatrix::row_vector(f.iter().zip(&g0).map(|(a, b)| a - b).collect());
        let proj = matmul(&ds.x_tilde.transpose(), &ds.x_tilde).unwrap().scale(1.0 / 30.0);
        let expected = matmul(&r, &proj.sub(&DenseMatrix::identity(30)).unwrap()).unwrap();
        for k in 0..30 {
            assert!((g[k] - f[k] - expected[(0, k)]).abs() < 1e-12);
        }
    }

    #[test]
    fn correction_is_least_squares_optimal() {
        let ds = synthetic_gaussian(4, 30, 9, &[1.0, 0.0, -1.0, 0.5]).unwrap();
        let (lin, non) = nets(4, 0.5);
        let p = build_proxy(ProxyKind::K2, &lin, Some(&non), 0.5, Some(&ds.x_tilde)).unwrap();
        let f = predict(&non, &ds.x_tilde).unwrap();
        let sq = |c: &DenseMatrix| {
            let mut q = p.clone();
            q.correction = Some(c.clone());
            let g = q.evaluate(&ds.x_tilde).unwrap();
            f.iter().zip(&g).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        };
        let c = p.correction.clone().unwrap();
        let base = sq(&c);
        for j in 0..4 {
            let mut bumped = c.clone();
            bumped.as_mut_slice()[j] += 1e-3;
            assert!(sq(&bumped) > base);
        }
        assert!(frobenius_norm(&c) > 0.0);
    }

    #[test]
    fn zero_epsilon_k1_is_exact() {
        let ds = synthetic_gaussian(3, 20, 4, &[1.0, 1.0, 0.0]).unwrap();
        let (lin, _) = nets(3, 0.0);
        let p = build_proxy(ProxyKind::K1, &lin, None, 0.0, None).unwrap();
        let set = ds.train_set();
        let rep = deviation_report(&lin, &p, &set, &set, BoundInputs { depth: 2, rho: 1.0, u: 1.0, v: 1.0 }).unwrap();
        assert_eq!(rep.sup_observed, 0.0);
        assert_eq!(rep.mean_abs_train, 0.0);
        assert!(matches!(
            build_proxy(ProxyKind::K2, &lin, None, 0.0, None),
            Err(ProxyError::Missing(..))
        ));
    }

    #[test]
    fn self_proxy_has_no_deviation_term() {
        let ds = synthetic_gaussian(3, 40, 4, &[1.0, -1.0, 0.0]).unwrap();
        let (_, non) = nets(3, 0.2);
        let p = build_proxy(ProxyKind::K1, &non, None, 0.2, None).unwrap();
        let set = ds.train_set();
        let b = optimistic_bound(&non, &p, &set, &set, 0.1).unwrap();
        assert_eq!(b.deviation_term, 0.0);
        assert_eq!(b.proxy_gap, 0.0);
        assert_eq!(b.total, b.train_margin_risk);
    }

    #[test]
    fn phase_boundaries() {
        let times = [0.0, 1.0, 2.0, 3.0, 4.0];
        let losses = [0.5, 0.499, 0.35, 0.3, 0.25];
        let risks = [0.5, 0.2, 0.2, 0.19, 0.15];
        let ph = phases_from_series(&times, &losses, &risks, 0.3, 0.2, 0.01);
        assert_eq!(ph.t1, Some(1.0));
        assert_eq!(ph.t2, Some(4.0));
        assert_eq!(ph.phase_at(2.5), 2);
        assert!(ph.in_order());
        let lin = phases_from_series(&times, &[0.5, 0.499, 0.35, 0.3, 0.3], &risks, 0.3, 0.2, 0.01);
        assert_eq!(lin.t2, None);
    }
}

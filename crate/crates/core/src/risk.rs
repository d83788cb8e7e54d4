//! Pointwise binary losses and their empirical averages.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiskError {
    #[error("outputs have {outputs} entries but labels have {labels}")]
    ShapeMismatch { outputs: usize, labels: usize },
    #[error("margin gamma = {0} must be positive")]
    BadGamma(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginConfig {
    gamma: f64,
}

impl MarginConfig {
    pub fn new(gamma: f64) -> Result<Self, RiskError> {
        if gamma > 0.0 && gamma.is_finite() {
            Ok(Self { gamma })
        } else {
            Err(RiskError::BadGamma(gamma))
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskKind {
    Misclass,
    Margin,
    MarginCont,
}

fn sgn(y: f64) -> f64 {
    if y < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// `1[z y < 0]`; a zero output counts as correct.
pub fn r_misclass(z: f64, y: f64) -> f64 {
    if z * y < 0.0 {
        1.0
    } else {
        0.0
    }
}

/// `1[z sgn(y) < γ]`.
pub fn r_margin(z: f64, y: f64, gamma: f64) -> f64 {
    if z * sgn(y) < gamma {
        1.0
    } else {
        0.0
    }
}

/// Ramp loss: 1 below zero margin, `1 - zy/γ` on `[0, γ]`, 0 above.
pub fn r_margin_cont(z: f64, y: f64, gamma: f64) -> f64 {
    let zy = z * y;
    if zy < 0.0 {
        1.0
    } else if zy <= gamma {
        1.0 - zy / gamma
    } else {
        0.0
    }
}

/// Mean pointwise loss over paired outputs and labels.
pub fn empirical_risk(
    outputs: &[f64],
    labels: &[f64],
    kind: RiskKind,
    margin: Option<MarginConfig>,
) -> Result<f64, RiskError> {
    if outputs.len() != labels.len() {
        return Err(RiskError::ShapeMismatch {
            outputs: outputs.len(),
            labels: labels.len(),
        });
    }
    if outputs.is_empty() {
        return Ok(0.0);
    }
    let gamma = match (kind, margin) {
        (RiskKind::Misclass, _) => 0.0,
        (_, Some(m)) => m.gamma(),
        (_, None) => return Err(RiskError::BadGamma(0.0)),
    };
    let total: f64 = outputs
        .iter()
        .zip(labels)
        .map(|(&z, &y)| match kind {
            RiskKind::Misclass => r_misclass(z, y),
            RiskKind::Margin => r_margin(z, y, gamma),
            RiskKind::MarginCont => r_margin_cont(z, y, gamma),
        })
        .sum();
    Ok(total / outputs.len() as f64)
}

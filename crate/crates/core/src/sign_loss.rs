//! Multi-label Sign Loss.
//!
//! Each label's binary cross-entropy is scaled by a coefficient that is
//! `y - 2py + p^2` (that is `(y - p)^2` for binary `y`) while the prediction
//! is on the right side of 0.5, and exactly 1 once `|y - p| >= 0.5`. Already
//! correct labels therefore contribute little, and the loss jumps by 0.75 at
//! the decision boundary.

use crate::error::{Error, Result};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before any logarithm.
pub const EPS: f64 = 1e-7;

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(EPS, 1.0 - EPS)
}

/// Per-label coefficient.
#[inline]
pub fn sign_coeff(p: f64, y: f64) -> f64 {
    if (y - p).abs() < 0.5 {
        y - 2.0 * p * y + p * p
    } else {
        1.0
    }
}

/// `-[y ln p + (1 - y) ln(1 - p)]` on the clamped probability.
#[inline]
pub fn bce(p: f64, y: f64) -> f64 {
    let p = clamp_prob(p);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// d BCE / dp on the clamped probability.
#[inline]
pub fn bce_grad(p: f64, y: f64) -> f64 {
    let p = clamp_prob(p);
    (p - y) / (p * (1.0 - p))
}

/// Loss of one label: `sign_coeff * bce`, evaluated at the clamped `p`.
#[inline]
pub fn sign_loss_term(p: f64, y: f64) -> f64 {
    let p = clamp_prob(p);
    sign_coeff(p, y) * bce(p, y)
}

/// d(sign_coeff * bce)/dp with the branch indicator held fixed. At exactly
/// `|y - p| = 0.5` the far branch (coefficient 1) applies.
#[inline]
pub fn sign_loss_term_grad(p: f64, y: f64) -> f64 {
    let p = clamp_prob(p);
    if (y - p).abs() < 0.5 {
        let d = y - p;
        -2.0 * d * bce(p, y) + d * d * bce_grad(p, y)
    } else {
        bce_grad(p, y)
    }
}

/// Predicted probabilities and binary targets, both `[batch x labels]`
/// stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBatch {
    probs: Vec<f64>,
    targets: Vec<f64>,
    batch: usize,
    labels: usize,
}

impl LossBatch {
    pub fn new(probs: Vec<f64>, targets: Vec<f64>, batch: usize, labels: usize) -> Result<Self> {
        if probs.len() != batch * labels || targets.len() != batch * labels {
            return Err(Error::Shape(format!(
                "loss batch {batch}x{labels} got {} probabilities and {} targets",
                probs.len(),
                targets.len()
            )));
        }
        if batch == 0 || labels == 0 {
            return Err(Error::Shape("empty loss batch".into()));
        }
        if let Some(y) = targets.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::Validation(format!("target {y} is not binary")));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Validation(format!("probability {p} outside [0, 1]")));
        }
        Ok(LossBatch {
            probs: probs.into_iter().map(clamp_prob).collect(),
            targets,
            batch,
            labels,
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    /// Mean over the batch of the per-record label sums.
    pub total: f64,
    /// `[batch x labels]`, row-major.
    pub per_label: Vec<f64>,
}

pub fn sign_loss(batch: &LossBatch) -> LossValue {
    reduce(batch, sign_loss_term)
}

/// Plain binary cross-entropy with the same reduction, for comparison runs.
pub fn bce_loss(batch: &LossBatch) -> LossValue {
    reduce(batch, bce)
}

fn reduce(batch: &LossBatch, term: impl Fn(f64, f64) -> f64) -> LossValue {
    let per_label: Vec<f64> = batch
        .probs
        .iter()
        .zip(&batch.targets)
        .map(|(&p, &y)| term(p, y))
        .collect();
    let total = per_label
        .chunks(batch.labels)
        .map(|row| row.iter().sum::<f64>())
        .sum::<f64>()
        / batch.batch as f64;
    LossValue { total, per_label }
}

/// d total / d p for every entry, `[batch x labels]`.
pub fn sign_loss_grad(batch: &LossBatch) -> Vec<f64> {
    let scale = 1.0 / batch.batch as f64;
    batch
        .probs
        .iter()
        .zip(&batch.targets)
        .map(|(&p, &y)| scale * sign_loss_term_grad(p, y))
        .collect()
}

pub fn bce_loss_grad(batch: &LossBatch) -> Vec<f64> {
    let scale = 1.0 / batch.batch as f64;
    batch
        .probs
        .iter()
        .zip(&batch.targets)
        .map(|(&p, &y)| scale * bce_grad(p, y))
        .collect()
}

//! Debiased pseudo-labeling.
//!
//! A running estimate `p̂` of the model's mean (debiased) prediction on
//! unlabeled data drives two corrections:
//!
//! * pseudo-labels are taken from `f − λ·log p̂`, which removes the classifier's
//!   response bias toward classes it already over-predicts;
//! * the unlabeled loss is cross-entropy on `z − Δ` with `Δ_j = λ·log(1/p̂_j)`,
//!   demanding larger margins against over-predicted classes.
//!
//! With `λ = 0` both reduce to plain confidence-thresholded pseudo-labeling.
//! Distribution alignment and logit adjustment are provided as baselines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{argmax, log_sum_exp, softmax, Matrix};

/// Lower bound applied to `p̂` (and to DA denominators) before renormalizing.
pub const P_HAT_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasState {
    pub p_hat: Vec<f64>,
    /// Momentum `m ∈ [0,1)` of the marginal estimate.
    pub momentum: f64,
    /// Strength of the logit correction used for pseudo-labeling.
    pub lambda_debias: f64,
    /// Scale of the adaptive margins.
    pub lambda_margin: f64,
}

impl DebiasState {
    /// Uniform `p̂ = 1/C`.
    pub fn new(classes: usize, momentum: f64, lambda_debias: f64, lambda_margin: f64) -> Result<Self> {
        if classes == 0 {
            return Err(Error::InvalidArgument("class count must be positive".into()));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must be in [0,1), got {momentum}"
            )));
        }
        if !(lambda_debias >= 0.0) || !(lambda_margin >= 0.0) {
            return Err(Error::InvalidArgument("debias factors must be >= 0".into()));
        }
        Ok(Self {
            p_hat: vec![1.0 / classes as f64; classes],
            momentum,
            lambda_debias,
            lambda_margin,
        })
    }

    pub fn classes(&self) -> usize {
        self.p_hat.len()
    }

    /// `p̂ ← m·p̂ + (1−m)·mean_rows(batch_probs)`, then floored and renormalized.
    ///
    /// An empty batch leaves the state unchanged.
    pub fn update(&mut self, batch_probs: &Matrix) -> Result<()> {
        if batch_probs.rows() == 0 {
            return Ok(());
        }
        if batch_probs.cols() != self.classes() {
            return Err(Error::shape("update_p_hat", self.classes(), batch_probs.cols()));
        }
        let mean = batch_probs.column_means();
        let m = self.momentum;
        for (p, q) in self.p_hat.iter_mut().zip(&mean) {
            *p = m * *p + (1.0 - m) * q;
        }
        floor_and_normalize(&mut self.p_hat);
        Ok(())
    }

    /// `log p̂`, checking the positivity invariant.
    fn log_p_hat(&self) -> Result<Vec<f64>> {
        if let Some(bad) = self.p_hat.iter().find(|&&p| !(p > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "invariant violated: p_hat entry {bad} is not positive"
            )));
        }
        Ok(self.p_hat.iter().map(|p| p.ln()).collect())
    }
}

fn floor_and_normalize(p: &mut [f64]) {
    for v in p.iter_mut() {
        if !(*v >= P_HAT_FLOOR) {
            *v = P_HAT_FLOOR;
        }
    }
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= sum);
}

/// Per-class margins `Δ_j = λ_margin · log(1/p̂_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Margins(pub Vec<f64>);

impl Margins {
    pub fn zeros(classes: usize) -> Self {
        Self(vec![0.0; classes])
    }
}

/// `f − λ_debias · log p̂`.
pub fn debias_logits(logits: &[f64], state: &DebiasState) -> Result<Vec<f64>> {
    if logits.len() != state.classes() {
        return Err(Error::shape("debias_logits", state.classes(), logits.len()));
    }
    if state.lambda_debias == 0.0 {
        return Ok(logits.to_vec());
    }
    let log_p = state.log_p_hat()?;
    Ok(logits
        .iter()
        .zip(&log_p)
        .map(|(f, lp)| f - state.lambda_debias * lp)
        .collect())
}

pub fn adaptive_margins(state: &DebiasState) -> Result<Margins> {
    if state.lambda_margin == 0.0 {
        return Ok(Margins::zeros(state.classes()));
    }
    let log_p = state.log_p_hat()?;
    Ok(Margins(log_p.iter().map(|lp| -state.lambda_margin * lp).collect()))
}

/// Softmax cross-entropy and its gradient on the logits.
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let loss = log_sum_exp(logits) - logits[label];
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    (loss, grad)
}

/// Cross-entropy on margin-shifted logits `z − Δ`. The gradient with respect to
/// `z` is `softmax(z − Δ) − onehot(label)`.
pub fn marginal_loss(logits: &[f64], label: usize, margins: &Margins) -> (f64, Vec<f64>) {
    let shifted: Vec<f64> = logits.iter().zip(&margins.0).map(|(z, d)| z - d).collect();
    cross_entropy(&shifted, label)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub label: usize,
    pub confidence: f64,
    pub accepted: bool,
}

/// Argmax label, accepted when its probability is at least `tau`.
pub fn pseudo_label(probs: &[f64], tau: f64) -> PseudoLabel {
    let label = argmax(probs).unwrap_or(0);
    let confidence = probs.get(label).copied().unwrap_or(0.0);
    PseudoLabel {
        label,
        confidence,
        accepted: confidence >= tau,
    }
}

/// Distribution alignment baseline: `normalize(probs · target / p̂)`.
pub fn distribution_alignment(probs: &[f64], target: &[f64], p_hat: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = probs
        .iter()
        .zip(target)
        .zip(p_hat)
        .map(|((p, t), q)| p * t / q.max(P_HAT_FLOOR))
        .collect();
    let sum: f64 = out.iter().sum();
    if sum > 0.0 {
        out.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Logit adjustment baseline: `z − τ_la · log(prior)`.
pub fn logit_adjust(logits: &[f64], prior: &[f64], tau_la: f64) -> Vec<f64> {
    logits
        .iter()
        .zip(prior)
        .map(|(z, p)| z - tau_la * p.max(P_HAT_FLOOR).ln())
        .collect()
}

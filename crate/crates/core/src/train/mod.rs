//! Confidence-thresholded self-training with optional debiasing, plus the
//! zero-shot bootstrap built on a frozen biased teacher.

mod loader;
mod run;
mod step;
mod zsl;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use loader::{CyclingLoader, Draw};
pub use run::{evaluate, train_run, EpochRecord, Evaluation, MetricsRow, RunMetrics, TrainData, TrainOutcome};
pub use step::{
    pseudo_label_batch, supervised_loss, train_step, unsupervised_loss, MethodContext, PseudoBatch, RunState,
    StepStats, UnsupervisedLoss,
};
pub use zsl::{
    clip_fallback_labels, confident, make_biased_teacher, zsl_bootstrap, zsl_run, Bootstrap, FrozenTeacher,
    TeacherConfig, ZslConfig, MIN_TEACHER_IMBALANCE,
};

use crate::data::Augmentor;
use crate::error::{Error, Result};

/// How unlabeled rows are pseudo-labeled and weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// Plain thresholded pseudo-labeling.
    FixMatch,
    /// Debiased pseudo-labels and adaptive margins.
    DebiasPl,
    /// Distribution alignment toward the labeled class marginal.
    FixMatchDa,
    /// Logit adjustment by the labeled class prior.
    FixMatchLa,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::FixMatch,
        Method::DebiasPl,
        Method::FixMatchDa,
        Method::FixMatchLa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::FixMatch => "fixmatch",
            Method::DebiasPl => "debiaspl",
            Method::FixMatchDa => "fixmatch+da",
            Method::FixMatchLa => "fixmatch+la",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "unknown method `{s}` (fixmatch, debiaspl, fixmatch+da, fixmatch+la)"
            ))
        })
    }
}

/// Which weights produce pseudo-labels for the weak view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PseudoSource {
    Student,
    Ema,
}

impl PseudoSource {
    pub fn name(self) -> &'static str {
        match self {
            PseudoSource::Student => "student",
            PseudoSource::Ema => "ema",
        }
    }
}

impl FromStr for PseudoSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "student" => Ok(PseudoSource::Student),
            "ema" => Ok(PseudoSource::Ema),
            _ => Err(Error::InvalidArgument(format!(
                "unknown pseudo-label source `{s}` (student, ema)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    /// Labeled batch size `B`.
    pub batch_size: usize,
    /// Unlabeled rows per labeled row.
    pub mu: usize,
    /// Confidence threshold.
    pub tau: f64,
    pub lambda_u: f64,
    pub total_steps: usize,
    pub base_lr: f64,
    pub seed: u64,
    pub eval_every: usize,
    /// Only used by [`Method::DebiasPl`].
    pub lambda_debias: f64,
    /// Only used by [`Method::DebiasPl`].
    pub lambda_margin: f64,
    /// Momentum of the marginal estimate `p̂`.
    pub p_hat_momentum: f64,
    /// Strength of the logit-adjustment baseline.
    pub tau_la: f64,
    pub hidden: Vec<usize>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub ema_decay: f64,
    pub pseudo_source: PseudoSource,
    pub augment: Augmentor,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::DebiasPl,
            batch_size: 16,
            mu: 7,
            tau: 0.95,
            lambda_u: 1.0,
            total_steps: 3000,
            base_lr: 0.03,
            seed: 1,
            eval_every: 100,
            lambda_debias: 0.5,
            lambda_margin: 0.5,
            p_hat_momentum: 0.999,
            tau_la: 1.0,
            hidden: vec![64, 64],
            momentum: 0.9,
            weight_decay: 5e-4,
            ema_decay: 0.999,
            pseudo_source: PseudoSource::Student,
            augment: Augmentor::default(),
        }
    }
}

impl TrainConfig {
    /// Checks every constraint; errors name the config key.
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &'static str, message: String| {
            Err(Error::Config {
                key: key.into(),
                message,
            })
        };
        if self.batch_size == 0 {
            return bad("train.batch_size", "must be >= 1".into());
        }
        if self.mu < 1 {
            return bad("train.mu", format!("must satisfy μ >= 1, got {}", self.mu));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("train.tau", format!("must satisfy τ ∈ (0,1], got {}", self.tau));
        }
        if !(self.lambda_u >= 0.0) {
            return bad(
                "train.lambda_u",
                format!("must satisfy λ_u >= 0, got {}", self.lambda_u),
            );
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("train.base_lr", format!("must be positive, got {}", self.base_lr));
        }
        if self.eval_every == 0 {
            return bad("train.eval_every", "must be >= 1".into());
        }
        if !(self.lambda_debias >= 0.0) {
            return bad(
                "debias.lambda_debias",
                format!("must be >= 0, got {}", self.lambda_debias),
            );
        }
        if !(self.lambda_margin >= 0.0) {
            return bad(
                "debias.lambda_margin",
                format!("must be >= 0, got {}", self.lambda_margin),
            );
        }
        if !(0.0..1.0).contains(&self.p_hat_momentum) {
            return bad(
                "debias.momentum",
                format!("must satisfy m ∈ [0,1), got {}", self.p_hat_momentum),
            );
        }
        if !(self.tau_la >= 0.0) {
            return bad("train.tau_la", format!("must be >= 0, got {}", self.tau_la));
        }
        if self.hidden.contains(&0) {
            return bad("model.hidden", "widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("optim.momentum", format!("must be in [0,1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return bad("optim.weight_decay", format!("must be >= 0, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad("model.ema_decay", format!("must be in [0,1), got {}", self.ema_decay));
        }
        self.augment.validate().map_err(|e| Error::Config {
            key: "aug".into(),
            message: e.to_string(),
        })
    }

    /// `(λ_debias, λ_margin)` actually applied: zero for every method but DebiasPL.
    pub fn effective_lambdas(&self) -> (f64, f64) {
        match self.method {
            Method::DebiasPl => (self.lambda_debias, self.lambda_margin),
            _ => (0.0, 0.0),
        }
    }

    /// Unlabeled batch width `μB`.
    pub fn unlabeled_batch(&self) -> usize {
        self.mu * self.batch_size
    }
}

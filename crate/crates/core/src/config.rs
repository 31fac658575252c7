//! Experiment configuration as flat `section.key = value` lines.
//!
//! `#` starts a comment; blank lines are ignored. Every key has a default, so an
//! empty file is a complete configuration. [`ExperimentConfig::to_text`] writes
//! every key and parses back to the same value.

use std::fmt::Display;
use std::str::FromStr;

use crate::data::{Augmentor, DatasetSpec, DomainShift, ImbalanceSpec};
use crate::error::{Error, Result};
use crate::train::{Method, PseudoSource, TeacherConfig, TrainConfig, ZslConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DatasetSpec,
    pub labeled: ImbalanceSpec,
    pub unlabeled: ImbalanceSpec,
    pub test_per_class: usize,
    pub method: Method,
    pub batch_size: usize,
    pub mu: usize,
    pub tau: f64,
    pub lambda_u: f64,
    pub steps: usize,
    pub base_lr: f64,
    pub eval_every: usize,
    pub tau_la: f64,
    pub pseudo_source: PseudoSource,
    /// Label rejected unlabeled rows with the biased teacher when it is confident.
    pub clip_fallback: bool,
    /// Drives both debias factors unless they are set individually.
    pub lambda: f64,
    pub lambda_debias: Option<f64>,
    pub lambda_margin: Option<f64>,
    pub p_hat_momentum: f64,
    pub hidden: Vec<usize>,
    pub ema_decay: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub augment: Augmentor,
    pub zsl: ZslSetup,
    pub seeds: Vec<u64>,
    pub out: String,
}

/// Source domain and teacher training for the zero-shot pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct ZslSetup {
    pub tau_clip: f64,
    pub source: ImbalanceSpec,
    pub target_per_class: usize,
    /// Rotation of the first two source coordinates, radians.
    pub shift_angle: f64,
    /// Norm of the source translation, spread evenly over all coordinates.
    pub shift_offset: f64,
    pub teacher_steps: usize,
    pub teacher_hidden: Vec<usize>,
    pub teacher_lr: f64,
    pub teacher_batch: usize,
}

/// Learning rate of the benchmark; the small MLP converges too slowly at the
/// library default within the step budget.
const BENCH_LR: f64 = 0.1;

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            data: DatasetSpec {
                classes: 10,
                dim: 8,
                centroid_separation: 4.0,
                cluster_scale: 1.0,
                seed: 0,
            },
            labeled: ImbalanceSpec {
                gamma: 100.0,
                n_max: 50,
            },
            unlabeled: ImbalanceSpec {
                gamma: 100.0,
                n_max: 500,
            },
            test_per_class: 200,
            method: train.method,
            batch_size: train.batch_size,
            mu: train.mu,
            tau: train.tau,
            lambda_u: train.lambda_u,
            steps: train.total_steps,
            base_lr: BENCH_LR,
            eval_every: train.eval_every,
            tau_la: train.tau_la,
            pseudo_source: train.pseudo_source,
            clip_fallback: false,
            lambda: 0.5,
            lambda_debias: None,
            lambda_margin: None,
            p_hat_momentum: train.p_hat_momentum,
            hidden: train.hidden,
            ema_decay: train.ema_decay,
            momentum: train.momentum,
            weight_decay: train.weight_decay,
            augment: Augmentor {
                weak_noise: 0.3,
                strong_noise: 0.8,
                mask_fraction: 0.0,
            },
            zsl: ZslSetup::default(),
            seeds: vec![1],
            out: "runs".into(),
        }
    }
}

impl Default for ZslSetup {
    fn default() -> Self {
        let t = TeacherConfig::default();
        Self {
            tau_clip: ZslConfig::default().tau_clip,
            source: ImbalanceSpec {
                gamma: 50.0,
                n_max: 400,
            },
            target_per_class: 200,
            shift_angle: 0.6,
            shift_offset: 1.0,
            teacher_steps: 300,
            teacher_hidden: t.hidden,
            teacher_lr: t.base_lr,
            teacher_batch: t.batch_size,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, raw: &str, what: &str) -> Result<T> {
    raw.parse().map_err(|_| Error::Config {
        key: key.into(),
        message: format!("expected {what}, got `{raw}`"),
    })
}

fn parse_list<T: FromStr>(key: &str, raw: &str, what: &str) -> Result<Vec<T>> {
    if raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',').map(|v| parse_value(key, v.trim(), what)).collect()
}

fn parse_bool(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config {
            key: key.into(),
            message: format!("expected a boolean, got `{raw}`"),
        }),
    }
}

fn join<T: Display>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Parses and validates; unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Format {
                what: "config",
                message: format!("line {}: expected `key = value`, got `{line}`", n + 1),
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `key = value` assignment without validating the whole config.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        const NUM: &str = "a number";
        const INT: &str = "a non-negative integer";
        match key {
            "data.classes" => self.data.classes = parse_value(key, v, INT)?,
            "data.dim" => self.data.dim = parse_value(key, v, INT)?,
            "data.separation" => self.data.centroid_separation = parse_value(key, v, NUM)?,
            "data.scale" => self.data.cluster_scale = parse_value(key, v, NUM)?,
            "data.seed" => self.data.seed = parse_value(key, v, INT)?,
            "labeled.gamma" => self.labeled.gamma = parse_value(key, v, NUM)?,
            "labeled.n_max" => self.labeled.n_max = parse_value(key, v, INT)?,
            "unlabeled.gamma" => self.unlabeled.gamma = parse_value(key, v, NUM)?,
            "unlabeled.n_max" => self.unlabeled.n_max = parse_value(key, v, INT)?,
            "test.per_class" => self.test_per_class = parse_value(key, v, INT)?,
            "train.method" => {
                self.method = v.parse().map_err(|e: Error| Error::Config {
                    key: key.into(),
                    message: e.to_string(),
                })?
            }
            "train.batch_size" => self.batch_size = parse_value(key, v, INT)?,
            "train.mu" => self.mu = parse_value(key, v, INT)?,
            "train.tau" => self.tau = parse_value(key, v, NUM)?,
            "train.lambda_u" => self.lambda_u = parse_value(key, v, NUM)?,
            "train.steps" => self.steps = parse_value(key, v, INT)?,
            "train.base_lr" => self.base_lr = parse_value(key, v, NUM)?,
            "train.eval_every" => self.eval_every = parse_value(key, v, INT)?,
            "train.tau_la" => self.tau_la = parse_value(key, v, NUM)?,
            "train.pseudo_source" => {
                self.pseudo_source = v.parse().map_err(|e: Error| Error::Config {
                    key: key.into(),
                    message: e.to_string(),
                })?
            }
            "train.clip_fallback" => self.clip_fallback = parse_bool(key, v)?,
            "debias.lambda" => self.lambda = parse_value(key, v, NUM)?,
            "debias.lambda_debias" => self.lambda_debias = Some(parse_value(key, v, NUM)?),
            "debias.lambda_margin" => self.lambda_margin = Some(parse_value(key, v, NUM)?),
            "debias.momentum" => self.p_hat_momentum = parse_value(key, v, NUM)?,
            "model.hidden" => self.hidden = parse_list(key, v, "comma-separated widths")?,
            "model.ema_decay" => self.ema_decay = parse_value(key, v, NUM)?,
            "optim.momentum" => self.momentum = parse_value(key, v, NUM)?,
            "optim.weight_decay" => self.weight_decay = parse_value(key, v, NUM)?,
            "aug.weak_noise" => self.augment.weak_noise = parse_value(key, v, NUM)?,
            "aug.strong_noise" => self.augment.strong_noise = parse_value(key, v, NUM)?,
            "aug.mask_fraction" => self.augment.mask_fraction = parse_value(key, v, NUM)?,
            "zsl.tau_clip" => self.zsl.tau_clip = parse_value(key, v, NUM)?,
            "zsl.source_gamma" => self.zsl.source.gamma = parse_value(key, v, NUM)?,
            "zsl.source_n_max" => self.zsl.source.n_max = parse_value(key, v, INT)?,
            "zsl.target_per_class" => self.zsl.target_per_class = parse_value(key, v, INT)?,
            "zsl.shift_angle" => self.zsl.shift_angle = parse_value(key, v, NUM)?,
            "zsl.shift_offset" => self.zsl.shift_offset = parse_value(key, v, NUM)?,
            "zsl.teacher_steps" => self.zsl.teacher_steps = parse_value(key, v, INT)?,
            "zsl.teacher_hidden" => self.zsl.teacher_hidden = parse_list(key, v, "comma-separated widths")?,
            "zsl.teacher_lr" => self.zsl.teacher_lr = parse_value(key, v, NUM)?,
            "zsl.teacher_batch" => self.zsl.teacher_batch = parse_value(key, v, INT)?,
            "run.seeds" => self.seeds = parse_list(key, v, "comma-separated seeds")?,
            "run.out" => self.out = v.to_string(),
            _ => {
                return Err(Error::Config {
                    key: key.into(),
                    message: "unknown key".into(),
                })
            }
        }
        Ok(())
    }

    /// Every key in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut e = vec![
            ("data.classes", self.data.classes.to_string()),
            ("data.dim", self.data.dim.to_string()),
            ("data.separation", self.data.centroid_separation.to_string()),
            ("data.scale", self.data.cluster_scale.to_string()),
            ("data.seed", self.data.seed.to_string()),
            ("labeled.gamma", self.labeled.gamma.to_string()),
            ("labeled.n_max", self.labeled.n_max.to_string()),
            ("unlabeled.gamma", self.unlabeled.gamma.to_string()),
            ("unlabeled.n_max", self.unlabeled.n_max.to_string()),
            ("test.per_class", self.test_per_class.to_string()),
            ("train.method", self.method.to_string()),
            ("train.batch_size", self.batch_size.to_string()),
            ("train.mu", self.mu.to_string()),
            ("train.tau", self.tau.to_string()),
            ("train.lambda_u", self.lambda_u.to_string()),
            ("train.steps", self.steps.to_string()),
            ("train.base_lr", self.base_lr.to_string()),
            ("train.eval_every", self.eval_every.to_string()),
            ("train.tau_la", self.tau_la.to_string()),
            ("train.pseudo_source", self.pseudo_source.name().to_string()),
            ("train.clip_fallback", self.clip_fallback.to_string()),
            ("debias.lambda", self.lambda.to_string()),
        ];
        if let Some(v) = self.lambda_debias {
            e.push(("debias.lambda_debias", v.to_string()));
        }
        if let Some(v) = self.lambda_margin {
            e.push(("debias.lambda_margin", v.to_string()));
        }
        e.extend([
            ("debias.momentum", self.p_hat_momentum.to_string()),
            ("model.hidden", join(&self.hidden)),
            ("model.ema_decay", self.ema_decay.to_string()),
            ("optim.momentum", self.momentum.to_string()),
            ("optim.weight_decay", self.weight_decay.to_string()),
            ("aug.weak_noise", self.augment.weak_noise.to_string()),
            ("aug.strong_noise", self.augment.strong_noise.to_string()),
            ("aug.mask_fraction", self.augment.mask_fraction.to_string()),
            ("zsl.tau_clip", self.zsl.tau_clip.to_string()),
            ("zsl.source_gamma", self.zsl.source.gamma.to_string()),
            ("zsl.source_n_max", self.zsl.source.n_max.to_string()),
            ("zsl.target_per_class", self.zsl.target_per_class.to_string()),
            ("zsl.shift_angle", self.zsl.shift_angle.to_string()),
            ("zsl.shift_offset", self.zsl.shift_offset.to_string()),
            ("zsl.teacher_steps", self.zsl.teacher_steps.to_string()),
            ("zsl.teacher_hidden", join(&self.zsl.teacher_hidden)),
            ("zsl.teacher_lr", self.zsl.teacher_lr.to_string()),
            ("zsl.teacher_batch", self.zsl.teacher_batch.to_string()),
            ("run.seeds", join(&self.seeds)),
            ("run.out", self.out.clone()),
        ]);
        e
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| {
            Err(Error::Config {
                key: key.into(),
                message,
            })
        };
        let wrap = |key: &'static str| {
            move |e: Error| Error::Config {
                key: key.into(),
                message: e.to_string(),
            }
        };
        self.data.validate().map_err(wrap("data"))?;
        for (key, imb) in [
            ("labeled", &self.labeled),
            ("unlabeled", &self.unlabeled),
            ("zsl.source", &self.zsl.source),
        ] {
            if !(imb.gamma >= 1.0) {
                return bad(
                    &format!("{key}.gamma"),
                    format!("must satisfy γ >= 1, got {}", imb.gamma),
                );
            }
        }
        if self.labeled.n_max == 0 {
            return bad("labeled.n_max", "the labeled pool must not be empty".into());
        }
        if self.test_per_class == 0 {
            return bad("test.per_class", "must be >= 1".into());
        }
        self.train_config(self.seeds.first().copied().unwrap_or(0)).validate()?;
        if !(self.lambda >= 0.0) {
            return bad("debias.lambda", format!("must be >= 0, got {}", self.lambda));
        }
        if !(self.zsl.tau_clip > 0.0) {
            return bad("zsl.tau_clip", format!("must be positive, got {}", self.zsl.tau_clip));
        }
        if self.zsl.teacher_batch == 0 || self.zsl.teacher_hidden.contains(&0) {
            return bad("zsl.teacher_batch", "teacher batch and widths must be positive".into());
        }
        if !(self.zsl.teacher_lr > 0.0) {
            return bad(
                "zsl.teacher_lr",
                format!("must be positive, got {}", self.zsl.teacher_lr),
            );
        }
        if self.seeds.is_empty() {
            return bad("run.seeds", "at least one seed is required".into());
        }
        Ok(())
    }

    /// Trainer settings for one seed.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            method: self.method,
            batch_size: self.batch_size,
            mu: self.mu,
            tau: self.tau,
            lambda_u: self.lambda_u,
            total_steps: self.steps,
            base_lr: self.base_lr,
            seed,
            eval_every: self.eval_every,
            lambda_debias: self.lambda_debias.unwrap_or(self.lambda),
            lambda_margin: self.lambda_margin.unwrap_or(self.lambda),
            p_hat_momentum: self.p_hat_momentum,
            tau_la: self.tau_la,
            hidden: self.hidden.clone(),
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            ema_decay: self.ema_decay,
            pseudo_source: self.pseudo_source,
            augment: self.augment.clone(),
        }
    }

    pub fn teacher_config(&self, seed: u64) -> TeacherConfig {
        TeacherConfig {
            hidden: self.zsl.teacher_hidden.clone(),
            steps: self.zsl.teacher_steps,
            batch_size: self.zsl.teacher_batch,
            base_lr: self.zsl.teacher_lr,
            seed,
            require_bias: true,
        }
    }

    pub fn domain_shift(&self) -> DomainShift {
        let per_coord = self.zsl.shift_offset / (self.data.dim as f64).sqrt();
        DomainShift {
            angle: self.zsl.shift_angle,
            translation: vec![per_coord; self.data.dim],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_defaults() {
        let cfg = ExperimentConfig::parse("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        let t = cfg.train_config(1);
        assert_eq!((t.lambda_debias, t.lambda_margin), (0.5, 0.5));
        assert_eq!(t.tau, 0.95);
        assert_eq!(t.p_hat_momentum, 0.999);
        assert_eq!(t.mu, 7);
        assert_eq!(cfg.zsl.tau_clip, 0.95);
    }

    #[test]
    fn tau_constraint_is_named() {
        let msg = ExperimentConfig::parse("train.tau = 1.5").unwrap_err().to_string();
        assert!(msg.contains("train.tau") && msg.contains("τ ∈ (0,1]"), "{msg}");
    }

    #[test]
    fn unknown_key_rejected() {
        let msg = ExperimentConfig::parse("train.tua = 0.9").unwrap_err().to_string();
        assert!(msg.contains("train.tua") && msg.contains("unknown key"), "{msg}");
    }

    #[test]
    fn type_mismatch_names_key() {
        let msg = ExperimentConfig::parse("train.mu = seven").unwrap_err().to_string();
        assert!(msg.contains("train.mu") && msg.contains("seven"), "{msg}");
    }

    #[test]
    fn malformed_line_rejected() {
        assert!(ExperimentConfig::parse("train.mu 7").is_err());
    }

    #[test]
    fn comments_and_blank_lines() {
        let cfg = ExperimentConfig::parse("# header\n\ntrain.mu = 3  # fewer\n").unwrap();
        assert_eq!(cfg.mu, 3);
    }

    #[test]
    fn lambda_drives_both_factors_unless_overridden() {
        let cfg = ExperimentConfig::parse("debias.lambda = 1.0\ndebias.lambda_margin = 0.25").unwrap();
        let t = cfg.train_config(1);
        assert_eq!((t.lambda_debias, t.lambda_margin), (1.0, 0.25));
    }

    #[test]
    fn round_trip_is_identity() {
        let text = "train.method = fixmatch+la\ndebias.lambda_debias = 0.3\nmodel.hidden = 32,16\n\
                    run.seeds = 4,5,6\naug.mask_fraction = 0.1\ntrain.clip_fallback = true\ndata.separation = 4.25";
        let a = ExperimentConfig::parse(text).unwrap();
        let b = ExperimentConfig::parse(&a.to_text()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_text(), b.to_text());
        let d = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse(&d.to_text()).unwrap(), d);
    }
}

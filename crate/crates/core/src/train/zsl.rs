use serde::{Deserialize, Serialize};

use crate::analysis::{histogram, imbalance_ratio};
use crate::data::{shift_domain, Dataset, DomainShift};
use crate::error::{Error, Result};
use crate::nn::{cosine_lr, sgd_nesterov_step, MlpParams, OptimState};
use crate::numkit::{argmax, softmax_rows, stream, Matrix, SeededRng};
use crate::train::step::supervised_loss;
use crate::train::{train_run, CyclingLoader, TrainConfig, TrainData, TrainOutcome};

/// Teacher predictions on the target must be at least this imbalanced.
pub const MIN_TEACHER_IMBALANCE: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZslConfig {
    /// Teacher confidence a target row must exceed to be treated as labeled.
    pub tau_clip: f64,
}

impl Default for ZslConfig {
    fn default() -> Self {
        Self { tau_clip: 0.95 }
    }
}

/// How the stand-in teacher is trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherConfig {
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub seed: u64,
    /// Require target predictions to be at least [`MIN_TEACHER_IMBALANCE`] imbalanced.
    pub require_bias: bool,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            steps: 1500,
            batch_size: 64,
            base_lr: 0.03,
            seed: 1,
            require_bias: true,
        }
    }
}

/// A trained classifier that can only be queried.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenTeacher {
    params: MlpParams,
    /// Imbalance ratio of its argmax predictions on the target it was checked against.
    pub target_imbalance: f64,
}

impl FrozenTeacher {
    pub fn from_params(params: MlpParams) -> Self {
        Self {
            params,
            target_imbalance: f64::NAN,
        }
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        softmax_rows(&self.params.forward(x)?)
    }

    /// `(argmax, confidence)` per row.
    pub fn predict(&self, x: &Matrix) -> Result<(Vec<usize>, Vec<f64>)> {
        let probs = self.predict_proba(x)?;
        Ok(probs
            .iter_rows()
            .map(|r| {
                let a = argmax(r).unwrap_or(0);
                (a, r[a])
            })
            .unzip())
    }
}

fn fit_supervised(ds: &Dataset, tcfg: &TeacherConfig) -> Result<MlpParams> {
    let labeled = ds.labeled_indices();
    if labeled.is_empty() {
        return Err(Error::InvalidArgument("teacher source has no labeled rows".into()));
    }
    let mut dims = vec![ds.dim()];
    dims.extend_from_slice(&tcfg.hidden);
    dims.push(ds.classes());
    let mut rng = SeededRng::new(tcfg.seed, stream::TEACHER);
    let mut params = MlpParams::init(&dims, &mut rng)?;
    let mut opt = OptimState::new(&params, 0.9, 5e-4, tcfg.base_lr)?;
    let mut loader = CyclingLoader::new(labeled, rng);
    for step in 0..tcfg.steps {
        let idx: Vec<usize> = loader.next_batch(tcfg.batch_size).iter().map(|d| d.index).collect();
        let y: Vec<usize> = idx.iter().map(|&i| ds.training_label(i).expect("labeled")).collect();
        let (loss, grads) = supervised_loss(&params, &ds.features().select_rows(&idx), &y)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        let lr = cosine_lr(step, tcfg.steps, tcfg.base_lr)?;
        sgd_nesterov_step(&mut params, &grads, &mut opt, lr)?;
    }
    Ok(params)
}

/// Trains a supervised model on `shift`-transformed `source` rows, then freezes it.
///
/// The check uses only the teacher's own argmax predictions on `target`
/// (no target labels): their class histogram must reach
/// [`MIN_TEACHER_IMBALANCE`] when `require_bias` is set.
pub fn make_biased_teacher(
    source: &Dataset,
    shift: &DomainShift,
    tcfg: &TeacherConfig,
    target: &Matrix,
) -> Result<FrozenTeacher> {
    let shifted = shift_domain(source, shift)?;
    let params = fit_supervised(&shifted, tcfg)?;
    let mut teacher = FrozenTeacher::from_params(params);
    let (preds, _) = teacher.predict(target)?;
    let ratio = imbalance_ratio(&histogram(&preds, source.classes()));
    teacher.target_imbalance = ratio;
    if tcfg.require_bias && !(ratio > MIN_TEACHER_IMBALANCE) {
        return Err(Error::TeacherNotBiased {
            ratio,
            required: MIN_TEACHER_IMBALANCE,
        });
    }
    Ok(teacher)
}

/// Strict comparator used for teacher pseudo-labels.
pub fn confident(confidence: &[f64], tau_clip: f64) -> Vec<bool> {
    confidence.iter().map(|&c| c > tau_clip).collect()
}

#[derive(Debug, Clone)]
pub struct Bootstrap {
    /// The target with teacher-labeled rows marked labeled.
    pub dataset: Dataset,
    /// Accepted rows per teacher label.
    pub accepted_counts: Vec<usize>,
}

/// Marks target rows the teacher is confident about as labeled with its argmax.
pub fn zsl_bootstrap(target: &Dataset, teacher: &FrozenTeacher, zcfg: &ZslConfig) -> Result<Bootstrap> {
    let (labels, conf) = teacher.predict(target.features())?;
    let keep = confident(&conf, zcfg.tau_clip);
    let assigned: Vec<(usize, usize)> = (0..target.len()).filter(|&i| keep[i]).map(|i| (i, labels[i])).collect();
    if assigned.is_empty() {
        return Err(Error::ThresholdTooHigh {
            tau_clip: zcfg.tau_clip,
        });
    }
    let accepted: Vec<usize> = assigned.iter().map(|&(_, l)| l).collect();
    Ok(Bootstrap {
        accepted_counts: histogram(&accepted, target.classes()),
        dataset: target.with_assigned_labels(&assigned)?,
    })
}

/// Teacher labels for unlabeled rows of `ds` it is confident about, for use
/// when the student rejects its own pseudo-label. Labeled rows map to `None`.
pub fn clip_fallback_labels(teacher: &FrozenTeacher, ds: &Dataset, tau_clip: f64) -> Result<Vec<Option<usize>>> {
    let (labels, conf) = teacher.predict(ds.features())?;
    let keep = confident(&conf, tau_clip);
    Ok((0..ds.len())
        .map(|i| (!ds.is_labeled(i) && keep[i]).then_some(labels[i]))
        .collect())
}

/// Bootstraps `target` from the teacher and self-trains on it. The target's
/// ground truth is read only to score the student.
pub fn zsl_run(
    target: &Dataset,
    teacher: &FrozenTeacher,
    zcfg: &ZslConfig,
    cfg: &TrainConfig,
) -> Result<(Bootstrap, TrainOutcome)> {
    let boot = zsl_bootstrap(target, teacher, zcfg)?;
    let out = train_run(
        TrainData {
            train: &boot.dataset,
            test: target,
            fallback: None,
        },
        cfg,
    )?;
    Ok((boot, out))
}

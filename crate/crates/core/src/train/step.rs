use crate::analysis::histogram;
use crate::debias::{
    adaptive_margins, cross_entropy, debias_logits, distribution_alignment, logit_adjust, marginal_loss, pseudo_label,
    DebiasState, Margins,
};
use crate::error::{Error, Result};
use crate::nn::{cosine_lr, sgd_nesterov_step, EmaTeacher, Gradients, MlpParams, OptimState};
use crate::numkit::{softmax_rows, stream, Matrix, SeededRng};
use crate::train::{Method, PseudoSource, TrainConfig};

/// Per-run inputs to pseudo-labeling that do not change between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodContext {
    pub method: Method,
    pub tau: f64,
    pub tau_la: f64,
    /// Class frequencies of the labeled set: the DA target and the LA prior.
    pub prior: Vec<f64>,
}

impl MethodContext {
    pub fn new(cfg: &TrainConfig, labeled_counts: &[usize]) -> Self {
        let total: usize = labeled_counts.iter().sum();
        let prior = labeled_counts
            .iter()
            .map(|&c| {
                if total == 0 {
                    1.0 / labeled_counts.len() as f64
                } else {
                    c as f64 / total as f64
                }
            })
            .collect();
        Self {
            method: cfg.method,
            tau: cfg.tau,
            tau_la: cfg.tau_la,
            prior,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoBatch {
    pub labels: Vec<usize>,
    pub confidence: Vec<f64>,
    pub accepted: Vec<bool>,
}

impl PseudoBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn accepted_count(&self) -> usize {
        self.accepted.iter().filter(|&&a| a).count()
    }
}

/// Pseudo-labels for a batch of weak-view logits, updating `p̂` on the way.
///
/// Per method:
/// * fixmatch / debiaspl: `softmax(f − λ·log p̂)` thresholded, then `p̂` absorbs
///   those probabilities (the fixmatch state carries `λ = 0`);
/// * fixmatch+da: `p̂` absorbs the raw probabilities, which are then aligned to the prior;
/// * fixmatch+la: `softmax(f − τ_la·log prior)`, and `p̂` tracks those probabilities.
pub fn pseudo_label_batch(weak_logits: &Matrix, state: &mut DebiasState, ctx: &MethodContext) -> Result<PseudoBatch> {
    let probs = match ctx.method {
        Method::FixMatch | Method::DebiasPl => {
            let mut adjusted = weak_logits.clone();
            for r in 0..adjusted.rows() {
                let d = debias_logits(weak_logits.row(r), state)?;
                adjusted.row_mut(r).copy_from_slice(&d);
            }
            let probs = softmax_rows(&adjusted)?;
            state.update(&probs)?;
            probs
        }
        Method::FixMatchDa => {
            let raw = softmax_rows(weak_logits)?;
            state.update(&raw)?;
            let mut aligned = raw.clone();
            for r in 0..raw.rows() {
                let a = distribution_alignment(raw.row(r), &ctx.prior, &state.p_hat);
                aligned.row_mut(r).copy_from_slice(&a);
            }
            aligned
        }
        Method::FixMatchLa => {
            let mut adjusted = weak_logits.clone();
            for r in 0..adjusted.rows() {
                let a = logit_adjust(weak_logits.row(r), &ctx.prior, ctx.tau_la);
                adjusted.row_mut(r).copy_from_slice(&a);
            }
            let probs = softmax_rows(&adjusted)?;
            state.update(&probs)?;
            probs
        }
    };
    let mut out = PseudoBatch {
        labels: Vec::with_capacity(probs.rows()),
        confidence: Vec::with_capacity(probs.rows()),
        accepted: Vec::with_capacity(probs.rows()),
    };
    for row in probs.iter_rows() {
        let pl = pseudo_label(row, ctx.tau);
        out.labels.push(pl.label);
        out.confidence.push(pl.confidence);
        out.accepted.push(pl.accepted);
    }
    Ok(out)
}

/// Mean cross-entropy over the batch and its parameter gradients.
pub fn supervised_loss(params: &MlpParams, x: &Matrix, y: &[usize]) -> Result<(f64, Gradients)> {
    if x.rows() == 0 {
        return Err(Error::InvalidArgument("supervised batch is empty".into()));
    }
    if y.len() != x.rows() {
        return Err(Error::shape("supervised labels", x.rows(), y.len()));
    }
    let (logits, cache) = params.forward_cached(x)?;
    let n = x.rows() as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for (r, &label) in y.iter().enumerate() {
        let (l, g) = cross_entropy(logits.row(r), label);
        loss += l;
        for (o, v) in grad.row_mut(r).iter_mut().zip(g) {
            *o = v / n;
        }
    }
    Ok((loss / n, params.backward_cached(&cache, &grad)?))
}

#[derive(Debug, Clone)]
pub struct UnsupervisedLoss {
    pub loss: f64,
    pub grads: Gradients,
    pub mask_rate: f64,
    /// Histogram of accepted pseudo-labels.
    pub accepted_hist: Vec<usize>,
}

/// Masked marginal loss on the strong view, divided by the full batch width.
pub fn unsupervised_loss(
    params: &MlpParams,
    strong: &Matrix,
    pseudo: &PseudoBatch,
    margins: &Margins,
) -> Result<UnsupervisedLoss> {
    if strong.rows() != pseudo.len() {
        return Err(Error::shape("unsupervised batch", pseudo.len(), strong.rows()));
    }
    let classes = params.output_dim();
    let n = strong.rows();
    let accepted: Vec<usize> = (0..n)
        .filter(|&i| pseudo.accepted[i])
        .map(|i| pseudo.labels[i])
        .collect();
    let accepted_hist = histogram(&accepted, classes);
    if accepted.is_empty() {
        return Ok(UnsupervisedLoss {
            loss: 0.0,
            grads: params.zeros_like(),
            mask_rate: 0.0,
            accepted_hist,
        });
    }
    let (logits, cache) = params.forward_cached(strong)?;
    let width = n as f64;
    let mut grad = Matrix::zeros(n, classes);
    let mut loss = 0.0;
    for r in (0..n).filter(|&r| pseudo.accepted[r]) {
        let (l, g) = marginal_loss(logits.row(r), pseudo.labels[r], margins);
        loss += l;
        for (o, v) in grad.row_mut(r).iter_mut().zip(g) {
            *o = v / width;
        }
    }
    Ok(UnsupervisedLoss {
        loss: loss / width,
        grads: params.backward_cached(&cache, &grad)?,
        mask_rate: accepted.len() as f64 / width,
        accepted_hist,
    })
}

/// Everything that evolves during a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    pub student: MlpParams,
    pub optim: OptimState,
    pub ema: EmaTeacher,
    pub debias: DebiasState,
    pub step: usize,
    labeled_aug: SeededRng,
    unlabeled_aug: SeededRng,
}

impl RunState {
    /// Fresh state; every random component derives from `cfg.seed`.
    pub fn new(cfg: &TrainConfig, input_dim: usize, classes: usize) -> Result<Self> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(&cfg.hidden);
        dims.push(classes);
        let student = MlpParams::init(&dims, &mut SeededRng::new(cfg.seed, stream::INIT))?;
        let (ld, lm) = cfg.effective_lambdas();
        Ok(Self {
            optim: OptimState::new(&student, cfg.momentum, cfg.weight_decay, cfg.base_lr)?,
            ema: EmaTeacher::new(&student, cfg.ema_decay)?,
            debias: DebiasState::new(classes, cfg.p_hat_momentum, ld, lm)?,
            student,
            step: 0,
            labeled_aug: SeededRng::new(cfg.seed, stream::AUGMENT),
            unlabeled_aug: SeededRng::new(cfg.seed, stream::UNLABELED_AUGMENT),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub lr: f64,
    pub loss_s: f64,
    pub loss_u: f64,
    pub mask_rate: f64,
    /// Pseudo-label of every unlabeled row, accepted or not.
    pub pseudo_labels: Vec<usize>,
    pub accepted: Vec<bool>,
}

/// One update.
///
/// Order: augment, pseudo-label the weak unlabeled view, update `p̂`, derive the
/// margins from the updated `p̂`, take one optimizer step on
/// `L_s + λ_u·L_u`, then update the EMA copy.
///
/// `fallback[i]`, when given, labels unlabeled row `i` whenever its own
/// pseudo-label is rejected.
pub fn train_step(
    state: &mut RunState,
    cfg: &TrainConfig,
    ctx: &MethodContext,
    x: &Matrix,
    y: &[usize],
    u: &Matrix,
    fallback: Option<&[Option<usize>]>,
) -> Result<StepStats> {
    if state.step >= cfg.total_steps {
        return Err(Error::InvalidArgument(format!(
            "step {} is past the configured {} steps",
            state.step, cfg.total_steps
        )));
    }
    let step = state.step;
    let diverged = |e: Error| match e {
        Error::NonFiniteLogits => Error::Diverged { step },
        other => other,
    };
    let x_weak = cfg.augment.weak(x, &mut state.labeled_aug);
    let u_strong = cfg.augment.strong(u, &mut state.unlabeled_aug);
    let u_weak = cfg.augment.weak(u, &mut state.unlabeled_aug);

    let teacher = match cfg.pseudo_source {
        PseudoSource::Student => &state.student,
        PseudoSource::Ema => &state.ema.shadow,
    };
    let weak_logits = teacher.forward(&u_weak)?;
    let mut pseudo = pseudo_label_batch(&weak_logits, &mut state.debias, ctx).map_err(diverged)?;
    if let Some(fb) = fallback {
        if fb.len() != u.rows() {
            return Err(Error::shape("fallback labels", u.rows(), fb.len()));
        }
        for (i, label) in fb.iter().enumerate() {
            if let (false, Some(l)) = (pseudo.accepted[i], label) {
                pseudo.labels[i] = *l;
                pseudo.accepted[i] = true;
            }
        }
    }
    let margins = adaptive_margins(&state.debias)?;

    let (loss_s, mut grads) = supervised_loss(&state.student, &x_weak, y)?;
    let unsup = unsupervised_loss(&state.student, &u_strong, &pseudo, &margins)?;
    let total = loss_s + cfg.lambda_u * unsup.loss;
    if !total.is_finite() {
        return Err(Error::Diverged { step });
    }
    if cfg.lambda_u != 0.0 {
        grads.add_scaled(&unsup.grads, cfg.lambda_u)?;
    }
    let lr = cosine_lr(step, cfg.total_steps, cfg.base_lr)?;
    sgd_nesterov_step(&mut state.student, &grads, &mut state.optim, lr)?;
    state.ema.update(&state.student)?;
    state.step += 1;
    Ok(StepStats {
        lr,
        loss_s,
        loss_u: unsup.loss,
        mask_rate: unsup.mask_rate,
        pseudo_labels: pseudo.labels,
        accepted: pseudo.accepted,
    })
}

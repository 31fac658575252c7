use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::analysis::{cell, confusion, format_ratio, histogram, imbalance_ratio, ConfusionMatrix};
use crate::data::io::format_f64;
use crate::data::Dataset;
use crate::debias::DebiasState;
use crate::error::{Error, Result};
use crate::nn::MlpParams;
use crate::numkit::{argmax_rows, stream, SeededRng};
use crate::train::step::{train_step, MethodContext, RunState};
use crate::train::{CyclingLoader, TrainConfig};

/// Inputs to [`train_run`].
///
/// Training reads labels of `train` only through [`Dataset::training_label`];
/// ground truth is read only when scoring `test`.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    /// Per-row labels of `train` used for rejected unlabeled rows.
    pub fallback: Option<&'a [Option<usize>]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Agreement with the training labels of the labeled rows.
    pub train_acc: Option<f64>,
    pub test_acc: f64,
    pub balanced_test_acc: f64,
    pub confusion: ConfusionMatrix,
}

/// Scores `params` on the labeled rows of `train` and on all of `test`.
pub fn evaluate(params: &MlpParams, train: &Dataset, test: &Dataset) -> Result<Evaluation> {
    let labeled = train.labeled_indices();
    let train_acc = if labeled.is_empty() {
        None
    } else {
        let preds = argmax_rows(&params.forward(&train.features().select_rows(&labeled))?)?;
        let hits = labeled
            .iter()
            .zip(&preds)
            .filter(|(&i, &p)| train.training_label(i) == Some(p))
            .count();
        Some(hits as f64 / labeled.len() as f64)
    };
    let preds = argmax_rows(&params.forward(test.features())?)?;
    let cm = confusion(
        &preds,
        &vec![true; preds.len()],
        test.evaluation_labels(),
        test.classes(),
    )?;
    Ok(Evaluation {
        train_acc,
        test_acc: cm.accuracy().unwrap_or(0.0),
        balanced_test_acc: cm.balanced_accuracy().unwrap_or(0.0),
        confusion: cm,
    })
}

/// One line of `metrics.csv`. Losses, mask rate and imbalance ratio summarize the
/// steps since the previous row; accuracies score the EMA model after `step` updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub lr: f64,
    pub loss_s: f64,
    pub loss_u: f64,
    pub mask_rate: f64,
    pub train_acc: Option<f64>,
    pub test_acc: f64,
    pub balanced_test_acc: f64,
    /// Of all pseudo-labels produced in the window, accepted or not.
    pub imbalance_ratio: f64,
}

/// Pseudo-labels produced during one pass over the unlabeled pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// False for the pass still in progress when training stopped.
    pub complete: bool,
    pub histogram: Vec<usize>,
    pub accepted_histogram: Vec<usize>,
}

impl EpochRecord {
    pub fn imbalance_ratio(&self) -> f64 {
        imbalance_ratio(&self.histogram)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub rows: Vec<MetricsRow>,
    pub epochs: Vec<EpochRecord>,
    /// `(step, p̂)` before the first update and after every step.
    pub p_hat: Vec<(usize, Vec<f64>)>,
    pub initial: Evaluation,
    pub final_eval: Evaluation,
}

impl RunMetrics {
    pub fn complete_epochs(&self) -> impl Iterator<Item = &EpochRecord> {
        self.epochs.iter().filter(|e| e.complete)
    }

    /// Imbalance ratio of the last complete pass, or of the partial one if none completed.
    pub fn final_imbalance_ratio(&self) -> Option<f64> {
        self.complete_epochs()
            .last()
            .or(self.epochs.last())
            .map(EpochRecord::imbalance_ratio)
    }

    /// Mean imbalance ratio of the first and of the last quarter of complete
    /// passes (at least one pass each); `None` with fewer than two passes.
    pub fn quarter_imbalance(&self) -> Option<(f64, f64)> {
        let ratios: Vec<f64> = self.complete_epochs().map(EpochRecord::imbalance_ratio).collect();
        if ratios.len() < 2 {
            return None;
        }
        let q = (ratios.len() / 4).max(1);
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        Some((mean(&ratios[..q]), mean(&ratios[ratios.len() - q..])))
    }

    pub fn write_metrics_csv(&self, w: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record([
            "step",
            "lr",
            "loss_s",
            "loss_u",
            "mask_rate",
            "train_acc",
            "test_acc",
            "balanced_test_acc",
            "imbalance_ratio",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.step.to_string(),
                format_f64(r.lr),
                format_f64(r.loss_s),
                format_f64(r.loss_u),
                format_f64(r.mask_rate),
                cell(r.train_acc),
                format_f64(r.test_acc),
                format_f64(r.balanced_test_acc),
                format_ratio(r.imbalance_ratio),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<metrics.csv>", e))
    }

    /// `step,p_0,…,p_{C-1}`.
    pub fn write_p_hat_csv(&self, w: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        let classes = self.p_hat.first().map_or(0, |(_, p)| p.len());
        let mut header = vec!["step".to_string()];
        header.extend((0..classes).map(|c| format!("p_{c}")));
        w.write_record(&header)?;
        for (step, p) in &self.p_hat {
            let mut rec = vec![step.to_string()];
            rec.extend(p.iter().map(|&v| format_f64(v)));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<p_hat.csv>", e))
    }

    /// `epoch,complete,imbalance_ratio,h_0..,a_0..` with `h` all and `a` accepted pseudo-labels.
    pub fn write_epochs_csv(&self, w: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        let classes = self.epochs.first().map_or(0, |e| e.histogram.len());
        let mut header = vec!["epoch".to_string(), "complete".into(), "imbalance_ratio".into()];
        header.extend((0..classes).map(|c| format!("h_{c}")));
        header.extend((0..classes).map(|c| format!("a_{c}")));
        w.write_record(&header)?;
        for e in &self.epochs {
            let mut rec = vec![
                e.epoch.to_string(),
                u8::from(e.complete).to_string(),
                format_ratio(e.imbalance_ratio()),
            ];
            rec.extend(e.histogram.iter().map(usize::to_string));
            rec.extend(e.accepted_histogram.iter().map(usize::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<epochs.csv>", e))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub student: MlpParams,
    pub ema: MlpParams,
    pub debias: DebiasState,
    pub metrics: RunMetrics,
}

#[derive(Default)]
struct Window {
    steps: usize,
    lr: f64,
    loss_s: f64,
    loss_u: f64,
    mask_rate: f64,
    labels: Vec<usize>,
}

/// Runs `cfg.total_steps` updates, drawing labeled and unlabeled batches from
/// independently reshuffled loaders, and scores the EMA model every
/// `cfg.eval_every` steps and after the last one.
pub fn train_run(data: TrainData<'_>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train = data.train;
    let classes = train.classes();
    if data.test.classes() != classes || data.test.dim() != train.dim() {
        return Err(Error::shape(
            "test set",
            format!("{classes} classes, dim {}", train.dim()),
            format!("{} classes, dim {}", data.test.classes(), data.test.dim()),
        ));
    }
    if let Some(fb) = data.fallback {
        if fb.len() != train.len() {
            return Err(Error::shape("fallback labels", train.len(), fb.len()));
        }
    }
    let labeled = train.labeled_indices();
    if labeled.is_empty() {
        return Err(Error::InvalidArgument("labeled set is empty".into()));
    }
    let unlabeled = train.unlabeled_indices();
    let ctx = MethodContext::new(cfg, &train.labeled_counts());
    let mut state = RunState::new(cfg, train.dim(), classes)?;
    let mut labeled_loader = CyclingLoader::new(labeled, SeededRng::new(cfg.seed, stream::LOADER));
    let mut unlabeled_loader = CyclingLoader::new(unlabeled, SeededRng::new(cfg.seed, stream::UNLABELED_LOADER));

    let initial = evaluate(&state.ema.shadow, train, data.test)?;
    let mut rows = Vec::new();
    let mut epochs: Vec<EpochRecord> = Vec::new();
    let mut p_hat = vec![(0, state.debias.p_hat.clone())];
    let mut window = Window::default();
    let mut final_eval = initial.clone();

    for _ in 0..cfg.total_steps {
        let l_draws = labeled_loader.next_batch(cfg.batch_size);
        let u_draws = unlabeled_loader.next_batch(cfg.unlabeled_batch());
        let l_idx: Vec<usize> = l_draws.iter().map(|d| d.index).collect();
        let u_idx: Vec<usize> = u_draws.iter().map(|d| d.index).collect();
        let y: Vec<usize> = l_idx
            .iter()
            .map(|&i| train.training_label(i).expect("labeled loader yields labeled rows"))
            .collect();
        let x = train.features().select_rows(&l_idx);
        let u = train.features().select_rows(&u_idx);
        let fallback: Option<Vec<Option<usize>>> = data.fallback.map(|fb| u_idx.iter().map(|&i| fb[i]).collect());
        let stats = train_step(&mut state, cfg, &ctx, &x, &y, &u, fallback.as_deref())?;

        for ((draw, &label), &accepted) in u_draws.iter().zip(&stats.pseudo_labels).zip(&stats.accepted) {
            while epochs.len() <= draw.pass {
                epochs.push(EpochRecord {
                    epoch: epochs.len(),
                    complete: false,
                    histogram: vec![0; classes],
                    accepted_histogram: vec![0; classes],
                });
            }
            let e = &mut epochs[draw.pass];
            e.histogram[label] += 1;
            if accepted {
                e.accepted_histogram[label] += 1;
            }
        }
        p_hat.push((state.step, state.debias.p_hat.clone()));
        window.steps += 1;
        window.lr = stats.lr;
        window.loss_s += stats.loss_s;
        window.loss_u += stats.loss_u;
        window.mask_rate += stats.mask_rate;
        window.labels.extend_from_slice(&stats.pseudo_labels);

        if state.step % cfg.eval_every == 0 || state.step == cfg.total_steps {
            let eval = evaluate(&state.ema.shadow, train, data.test)?;
            let n = window.steps as f64;
            rows.push(MetricsRow {
                step: state.step,
                lr: window.lr,
                loss_s: window.loss_s / n,
                loss_u: window.loss_u / n,
                mask_rate: window.mask_rate / n,
                train_acc: eval.train_acc,
                test_acc: eval.test_acc,
                balanced_test_acc: eval.balanced_test_acc,
                imbalance_ratio: imbalance_ratio(&histogram(&window.labels, classes)),
            });
            final_eval = eval;
            window = Window::default();
        }
    }
    let done = unlabeled_loader.completed_passes();
    for e in &mut epochs {
        e.complete = e.epoch < done;
    }
    Ok(TrainOutcome {
        student: state.student,
        ema: state.ema.shadow,
        debias: state.debias,
        metrics: RunMetrics {
            rows,
            epochs,
            p_hat,
            initial,
            final_eval,
        },
    })
}

//! Builds benchmark data from an [`ExperimentConfig`], runs training pipelines
//! and writes run directories.
//!
//! Mixture geometry and the test set come from `data.seed`; the training pools,
//! initialization, augmentation and batch order come from the run seed.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analysis::{format_ratio, threshold_sweep, write_sweep_csv, SweepRow};
use crate::config::ExperimentConfig;
use crate::data::io::write_dataset;
use crate::data::{Dataset, ImbalanceSpec, MixtureModel};
use crate::error::{Error, Result};
use crate::nn::checkpoint;
use crate::numkit::{argmax_rows, stream, Matrix};
use crate::train::{
    clip_fallback_labels, evaluate, make_biased_teacher, train_run, zsl_run, Bootstrap, Evaluation, FrozenTeacher,
    Method, TrainData, TrainOutcome, ZslConfig,
};

/// Thresholds for the teacher confidence sweep.
pub const SWEEP_TAUS: [f64; 6] = [0.2, 0.4, 0.6, 0.8, 0.9, 0.95];

fn all_labeled(ds: &Dataset) -> Result<Dataset> {
    // the pool is generated to be labeled, so its truth is its training label
    let truth = ds.evaluation_labels();
    ds.with_assigned_labels(&truth.iter().copied().enumerate().collect::<Vec<_>>())
}

#[derive(Debug, Clone)]
pub struct SslData {
    pub model: MixtureModel,
    /// Labeled pool followed by the unlabeled pool.
    pub train: Dataset,
    pub test: Dataset,
}

pub fn build_ssl_data(cfg: &ExperimentConfig, seed: u64) -> Result<SslData> {
    let model = MixtureModel::new(cfg.data.clone())?;
    let labeled = all_labeled(&model.sample(&cfg.labeled, seed, stream::LABELED_POOL)?)?;
    let unlabeled = model.sample(&cfg.unlabeled, seed, stream::SAMPLES)?;
    let mut train = labeled.concat(&unlabeled)?;
    train.gamma = cfg.unlabeled.gamma;
    train.seed = seed;
    let test = model.sample(
        &ImbalanceSpec::balanced(cfg.test_per_class),
        cfg.data.seed,
        stream::TEST_SAMPLES,
    )?;
    Ok(SslData { model, train, test })
}

#[derive(Debug, Clone)]
pub struct ZslData {
    pub model: MixtureModel,
    /// Long-tailed labeled source before the domain shift.
    pub source: Dataset,
    /// Balanced, fully unlabeled target.
    pub target: Dataset,
}

pub fn build_zsl_data(cfg: &ExperimentConfig, seed: u64) -> Result<ZslData> {
    let model = MixtureModel::new(cfg.data.clone())?;
    let source = all_labeled(&model.sample(&cfg.zsl.source, seed, stream::SOURCE_SAMPLES)?)?;
    let target = model.sample(
        &ImbalanceSpec::balanced(cfg.zsl.target_per_class),
        seed,
        stream::SAMPLES,
    )?;
    Ok(ZslData { model, source, target })
}

pub fn build_teacher(cfg: &ExperimentConfig, data: &ZslData, seed: u64) -> Result<FrozenTeacher> {
    make_biased_teacher(
        &data.source,
        &cfg.domain_shift(),
        &cfg.teacher_config(seed),
        data.target.features(),
    )
}

#[derive(Debug, Clone)]
pub struct SslRun {
    pub seed: u64,
    pub data: SslData,
    pub outcome: TrainOutcome,
}

/// One semi-supervised run, optionally with teacher fallback labels.
pub fn run_ssl(cfg: &ExperimentConfig, seed: u64) -> Result<SslRun> {
    let data = build_ssl_data(cfg, seed)?;
    let fallback = if cfg.clip_fallback {
        let zdata = build_zsl_data(cfg, seed)?;
        let teacher = build_teacher(cfg, &zdata, seed)?;
        Some(clip_fallback_labels(&teacher, &data.train, cfg.zsl.tau_clip)?)
    } else {
        None
    };
    let outcome = train_run(
        TrainData {
            train: &data.train,
            test: &data.test,
            fallback: fallback.as_deref(),
        },
        &cfg.train_config(seed),
    )?;
    Ok(SslRun { seed, data, outcome })
}

#[derive(Debug, Clone)]
pub struct ZslRun {
    pub seed: u64,
    pub data: ZslData,
    pub teacher: FrozenTeacher,
    /// The teacher scored on the target.
    pub teacher_eval: Evaluation,
    pub bootstrap: Bootstrap,
    pub outcome: TrainOutcome,
}

/// Teacher construction, bootstrap and self-training on the target.
pub fn run_zsl(cfg: &ExperimentConfig, seed: u64) -> Result<ZslRun> {
    let data = build_zsl_data(cfg, seed)?;
    let teacher = build_teacher(cfg, &data, seed)?;
    let zcfg = ZslConfig {
        tau_clip: cfg.zsl.tau_clip,
    };
    let (bootstrap, outcome) = zsl_run(&data.target, &teacher, &zcfg, &cfg.train_config(seed))?;
    let teacher_eval = evaluate(teacher.params(), &bootstrap.dataset, &data.target)?;
    Ok(ZslRun {
        seed,
        data,
        teacher,
        teacher_eval,
        bootstrap,
        outcome,
    })
}

/// Confidence sweep of the teacher's pseudo-labels on the target.
pub fn teacher_sweep(teacher: &FrozenTeacher, target: &Dataset, taus: &[f64]) -> Result<Vec<SweepRow>> {
    threshold_sweep(
        &teacher.predict_proba(target.features())?,
        target.evaluation_labels(),
        taus,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub kind: String,
    pub method: String,
    pub seed: u64,
    pub data_seed: u64,
    pub steps: usize,
    pub initial_test_acc: f64,
    pub final_test_acc: f64,
    pub final_balanced_test_acc: f64,
    pub final_pseudo_label_imbalance: Option<String>,
    pub final_p_hat: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub teacher_balanced_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub teacher_target_imbalance: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap_counts: Option<Vec<usize>>,
    pub wall_time_s: f64,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

/// Per-row EMA predictions on a dataset: `index,predicted,confidence,label,is_labeled`.
pub fn write_predictions(params: &crate::nn::MlpParams, ds: &Dataset, path: &Path) -> Result<()> {
    let probs = crate::numkit::softmax_rows(&params.forward(ds.features())?)?;
    let preds = argmax_rows(&probs)?;
    let truth = ds.evaluation_labels();
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["index", "predicted", "confidence", "label", "is_labeled"])?;
    for (i, &p) in preds.iter().enumerate() {
        w.write_record([
            i.to_string(),
            p.to_string(),
            crate::data::io::format_f64(probs.get(i, p)),
            truth[i].to_string(),
            u8::from(ds.is_labeled(i)).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `config.snapshot`, `metrics.csv`, `p_hat.csv`, `epochs.csv`,
/// `confusion_final.csv`, checkpoints and test-set predictions.
fn write_outcome(dir: &Path, cfg: &ExperimentConfig, seed: u64, out: &TrainOutcome, test: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut snap = cfg.clone();
    snap.seeds = vec![seed];
    write_file(&dir.join("config.snapshot"), snap.to_text())?;
    out.metrics.write_metrics_csv(create(&dir.join("metrics.csv"))?)?;
    out.metrics.write_p_hat_csv(create(&dir.join("p_hat.csv"))?)?;
    out.metrics.write_epochs_csv(create(&dir.join("epochs.csv"))?)?;
    out.metrics
        .final_eval
        .confusion
        .write_csv(create(&dir.join("confusion_final.csv"))?)?;
    checkpoint::save(&out.student, &dir.join("student.ckpt"))?;
    checkpoint::save(&out.ema, &dir.join("ema.ckpt"))?;
    write_predictions(&out.ema, test, &dir.join("predictions_test.csv"))
}

fn summary(kind: &str, cfg: &ExperimentConfig, seed: u64, out: &TrainOutcome, wall: f64) -> RunSummary {
    RunSummary {
        kind: kind.into(),
        method: cfg.method.to_string(),
        seed,
        data_seed: cfg.data.seed,
        steps: cfg.steps,
        initial_test_acc: out.metrics.initial.test_acc,
        final_test_acc: out.metrics.final_eval.test_acc,
        final_balanced_test_acc: out.metrics.final_eval.balanced_test_acc,
        final_pseudo_label_imbalance: out.metrics.final_imbalance_ratio().map(format_ratio),
        final_p_hat: out.debias.p_hat.clone(),
        teacher_balanced_acc: None,
        teacher_target_imbalance: None,
        bootstrap_counts: None,
        wall_time_s: wall,
    }
}

fn write_summary(dir: &Path, s: &RunSummary) -> Result<()> {
    write_file(&dir.join("summary.json"), serde_json::to_string_pretty(s)?)
}

/// Post-run checks: every recorded `p̂` is on the simplex and both models are finite.
pub fn check_outcome(out: &TrainOutcome) -> Result<()> {
    for (step, p) in &out.metrics.p_hat {
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || p.iter().any(|&v| !(v >= 1e-9)) {
            return Err(Error::Invariant(format!(
                "p_hat at step {step} left the simplex (sum {sum})"
            )));
        }
    }
    if !out.student.is_finite() || !out.ema.is_finite() {
        return Err(Error::Invariant("non-finite parameters".into()));
    }
    Ok(())
}

/// Runs one SSL seed and writes its directory.
pub fn train_to_dir(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<(SslRun, RunSummary)> {
    let start = Instant::now();
    let run = run_ssl(cfg, seed)?;
    check_outcome(&run.outcome)?;
    write_outcome(dir, cfg, seed, &run.outcome, &run.data.test)?;
    write_dataset(&run.data.train, &dir.join("train.csv"))?;
    write_predictions(&run.outcome.ema, &run.data.train, &dir.join("predictions_train.csv"))?;
    let s = summary("ssl", cfg, seed, &run.outcome, start.elapsed().as_secs_f64());
    write_summary(dir, &s)?;
    Ok((run, s))
}

/// Runs one zero-shot seed and writes its directory, including the teacher's
/// confidence sweep on the target.
pub fn zsl_to_dir(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<(ZslRun, RunSummary)> {
    let start = Instant::now();
    let run = run_zsl(cfg, seed)?;
    check_outcome(&run.outcome)?;
    write_outcome(dir, cfg, seed, &run.outcome, &run.data.target)?;
    checkpoint::save(run.teacher.params(), &dir.join("teacher.ckpt"))?;
    write_dataset(&run.bootstrap.dataset, &dir.join("train.csv"))?;
    write_predictions(
        run.teacher.params(),
        &run.data.target,
        &dir.join("predictions_teacher.csv"),
    )?;
    let sweep = teacher_sweep(&run.teacher, &run.data.target, &SWEEP_TAUS)?;
    write_sweep_csv(&sweep, create(&dir.join("teacher_sweep.csv"))?)?;
    let mut s = summary("zsl", cfg, seed, &run.outcome, start.elapsed().as_secs_f64());
    s.teacher_balanced_acc = Some(run.teacher_eval.balanced_test_acc);
    s.teacher_target_imbalance = Some(format_ratio(run.teacher.target_imbalance));
    s.bootstrap_counts = Some(run.bootstrap.accepted_counts.clone());
    write_summary(dir, &s)?;
    Ok((run, s))
}

/// Writes the labeled+unlabeled training pool and the test set of one seed.
pub fn gen_data(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let data = build_ssl_data(cfg, seed)?;
    let train = dir.join("train.csv");
    let test = dir.join("test.csv");
    write_dataset(&data.train, &train)?;
    write_dataset(&data.test, &test)?;
    let mut snap = cfg.clone();
    snap.seeds = vec![seed];
    write_file(&dir.join("config.snapshot"), snap.to_text())?;
    Ok(vec![train, test])
}

/// Mean and sample standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One cell of a sweep grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub method: String,
    pub lambda: f64,
    pub seeds: Vec<u64>,
    pub balanced_acc: Vec<f64>,
    pub test_acc: Vec<f64>,
    pub final_imbalance: Vec<f64>,
}

impl SweepCell {
    pub fn balanced_mean_std(&self) -> (f64, f64) {
        mean_std(&self.balanced_acc)
    }
}

/// The configurations of a `method × λ` grid; λ only varies for DebiasPL.
pub fn sweep_grid(cfg: &ExperimentConfig, methods: &[Method], lambdas: &[f64]) -> Vec<(Method, f64, ExperimentConfig)> {
    let mut grid = Vec::new();
    for &m in methods {
        let ls: Vec<f64> = if m == Method::DebiasPl && !lambdas.is_empty() {
            lambdas.to_vec()
        } else {
            vec![cfg.lambda]
        };
        for l in ls {
            let mut c = cfg.clone();
            c.method = m;
            c.lambda = l;
            c.lambda_debias = None;
            c.lambda_margin = None;
            grid.push((m, l, c));
        }
    }
    grid
}

/// `method,lambda,n,balanced_acc_mean,balanced_acc_std,test_acc_mean,test_acc_std,imbalance_mean`.
pub fn write_sweep_table(cells: &[SweepCell], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record([
        "method",
        "lambda",
        "n",
        "balanced_acc_mean",
        "balanced_acc_std",
        "test_acc_mean",
        "test_acc_std",
        "imbalance_mean",
    ])?;
    for c in cells {
        let (bm, bs) = mean_std(&c.balanced_acc);
        let (tm, ts) = mean_std(&c.test_acc);
        let (im, _) = mean_std(&c.final_imbalance);
        w.write_record([
            c.method.clone(),
            c.lambda.to_string(),
            c.seeds.len().to_string(),
            format!("{:.4}", bm),
            format!("{:.4}", bs),
            format!("{:.4}", tm),
            format!("{:.4}", ts),
            format_ratio(im),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Human-readable `mean ± std` table of balanced accuracy (percent).
pub fn format_sweep_table(cells: &[SweepCell]) -> String {
    let mut out = format!(
        "{:<14} {:>7} {:>18} {:>18}\n",
        "method", "lambda", "balanced acc (%)", "accuracy (%)"
    );
    for c in cells {
        let (bm, bs) = mean_std(&c.balanced_acc);
        let (tm, ts) = mean_std(&c.test_acc);
        out += &format!(
            "{:<14} {:>7} {:>18} {:>18}\n",
            c.method,
            c.lambda,
            format!("{:.2} ± {:.2}", 100.0 * bm, 100.0 * bs),
            format!("{:.2} ± {:.2}", 100.0 * tm, 100.0 * ts)
        );
    }
    out
}

/// Rows of a predictions CSV written by [`write_predictions`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Predictions {
    pub predicted: Vec<usize>,
    pub confidence: Vec<f64>,
    pub label: Vec<usize>,
    pub is_labeled: Vec<bool>,
}

pub fn read_predictions(path: &Path) -> Result<Predictions> {
    let bad = |message: String| Error::Format {
        what: "predictions csv",
        message,
    };
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Predictions::default();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != 5 {
            return Err(bad(format!("row {line}: expected 5 fields, found {}", rec.len())));
        }
        let field = |i: usize| rec[i].to_string();
        out.predicted
            .push(field(1).parse().map_err(|e| bad(format!("row {line}: {e}")))?);
        out.confidence
            .push(field(2).parse().map_err(|e| bad(format!("row {line}: {e}")))?);
        out.label
            .push(field(3).parse().map_err(|e| bad(format!("row {line}: {e}")))?);
        out.is_labeled.push(&rec[4] == "1");
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportIndex {
    pub run: String,
    pub tau: f64,
    pub files: Vec<String>,
    pub notes: Vec<String>,
}

/// Bias diagnostics for a run directory, written to `out`.
///
/// For every `predictions_*.csv`, restricted to rows without a training label:
/// the histogram of all predictions, per-class precision/recall and the
/// confusion matrix of those with confidence ≥ `train.tau`, and a confidence
/// sweep. When `ema.ckpt` and `train.csv` exist, also the class-centroid cosine
/// similarity of the model's penultimate activations and of the raw features.
pub fn report(run_dir: &Path, out: &Path) -> Result<ReportIndex> {
    let snap = run_dir.join("config.snapshot");
    let cfg = ExperimentConfig::parse(&fs::read_to_string(&snap).map_err(|e| Error::io(&snap, e))?)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let classes = cfg.data.classes;
    let mut files = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(run_dir)
        .map_err(|e| Error::io(run_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("predictions_") && n.ends_with(".csv"))
        })
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(Error::Format {
            what: "run directory",
            message: format!("no predictions_*.csv in {}", run_dir.display()),
        });
    }
    for path in &entries {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("predictions");
        let name = stem.trim_start_matches("predictions_");
        let p = read_predictions(path)?;
        let rows: Vec<usize> = (0..p.predicted.len()).filter(|&i| !p.is_labeled[i]).collect();
        let pred: Vec<usize> = rows.iter().map(|&i| p.predicted[i]).collect();
        let conf: Vec<f64> = rows.iter().map(|&i| p.confidence[i]).collect();
        let truth: Vec<usize> = rows.iter().map(|&i| p.label[i]).collect();
        let accepted: Vec<bool> = conf.iter().map(|&c| c >= cfg.tau).collect();

        let f = format!("{name}_histogram.csv");
        crate::analysis::write_histogram_csv(&crate::analysis::histogram(&pred, classes), create(&out.join(&f))?)?;
        files.push(f);
        let f = format!("{name}_precision_recall.csv");
        crate::analysis::per_class_pr(&pred, &accepted, &truth, classes)?.write_csv(create(&out.join(&f))?)?;
        files.push(f);
        let f = format!("{name}_confusion.csv");
        crate::analysis::confusion(&pred, &accepted, &truth, classes)?.write_csv(create(&out.join(&f))?)?;
        files.push(f);
        let f = format!("{name}_sweep.csv");
        let sweep = crate::analysis::sweep_predictions(&pred, &conf, &truth, classes, &SWEEP_TAUS)?;
        write_sweep_csv(&sweep, create(&out.join(&f))?)?;
        files.push(f);
    }
    let mut notes = vec![format!("accepted = confidence >= {} (train.tau)", cfg.tau)];
    let (ckpt, train) = (run_dir.join("ema.ckpt"), run_dir.join("train.csv"));
    if ckpt.exists() && train.exists() {
        let params = checkpoint::load(&ckpt)?;
        let ds = crate::data::io::read_dataset(&train)?;
        let truth = ds.evaluation_labels();
        let emb = params.embed(ds.features())?;
        let f = "centroid_similarity_embedding.csv".to_string();
        crate::analysis::write_matrix_csv(
            &crate::analysis::centroid_similarity(&emb, truth, classes)?,
            create(&out.join(&f))?,
        )?;
        files.push(f);
        let f = "centroid_similarity_features.csv".to_string();
        crate::analysis::write_matrix_csv(
            &crate::analysis::centroid_similarity(ds.features(), truth, classes)?,
            create(&out.join(&f))?,
        )?;
        files.push(f);
        notes.push(
            "embedding centroids use the EMA model's last hidden layer as a stand-in for image embeddings".into(),
        );
    }
    let index = ReportIndex {
        run: run_dir.display().to_string(),
        tau: cfg.tau,
        files,
        notes,
    };
    write_file(&out.join("index.json"), serde_json::to_string_pretty(&index)?)?;
    Ok(index)
}

/// Histogram of a model's argmax over the rows of `x`.
pub fn prediction_histogram(params: &crate::nn::MlpParams, x: &Matrix, classes: usize) -> Result<Vec<usize>> {
    Ok(crate::analysis::histogram(&argmax_rows(&params.forward(x)?)?, classes))
}

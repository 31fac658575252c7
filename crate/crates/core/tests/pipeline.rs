use debiaspl_core::experiment::{build_ssl_data, report, train_to_dir};
use debiaspl_core::nn::checkpoint;
use debiaspl_core::train::{train_run, TrainData};
use debiaspl_core::{Dataset, ExperimentConfig, ImbalanceSpec, Matrix, Method, SeededRng};

fn small(method: Method) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        method,
        steps: 150,
        eval_every: 50,
        hidden: vec![16],
        test_per_class: 20,
        unlabeled: ImbalanceSpec { gamma: 10.0, n_max: 80 },
        labeled: ImbalanceSpec { gamma: 10.0, n_max: 10 },
        ..ExperimentConfig::default()
    };
    cfg.batch_size = 8;
    cfg.mu = 3;
    cfg
}

fn relabel_unlabeled(ds: &Dataset, mut f: impl FnMut(usize, &[f64], usize) -> (Vec<f64>, usize)) -> Dataset {
    let mask = ds.labeled_mask();
    let mut rows = Vec::with_capacity(ds.len());
    let mut labels = Vec::with_capacity(ds.len());
    for (i, &l) in ds.evaluation_labels().iter().enumerate() {
        let x = ds.features().row(i);
        let (x, l) = if mask[i] { (x.to_vec(), l) } else { f(i, x, l) };
        rows.push(x);
        labels.push(l);
    }
    Dataset::new(Matrix::from_rows(&rows).unwrap(), labels, mask, ds.classes()).unwrap()
}

#[test]
fn scrambled_unlabeled_truth_leaves_training_unchanged() {
    let cfg = small(Method::DebiasPl);
    let data = build_ssl_data(&cfg, 3).unwrap();
    let classes = data.train.classes();
    let scrambled = relabel_unlabeled(&data.train, |_, x, l| (x.to_vec(), (l + 3) % classes));
    let tc = cfg.train_config(3);
    let run = |train: &Dataset| {
        train_run(
            TrainData {
                train,
                test: &data.test,
                fallback: None,
            },
            &tc,
        )
        .unwrap()
    };
    let (a, b) = (run(&data.train), run(&scrambled));
    assert_eq!(a.student, b.student);
    assert_eq!(a.metrics.p_hat, b.metrics.p_hat);
    assert_eq!(a.metrics.epochs, b.metrics.epochs);
    assert_eq!(scrambled.audit().evaluation_reads(), 0);
}

#[test]
fn zero_unlabeled_weight_ignores_unlabeled_rows() {
    let mut cfg = small(Method::DebiasPl);
    cfg.lambda_u = 0.0;
    let data = build_ssl_data(&cfg, 4).unwrap();
    let mut rng = SeededRng::new(11, 0);
    let noise = relabel_unlabeled(&data.train, |_, x, l| {
        (x.iter().map(|_| 10.0 * rng.standard_normal()).collect(), l)
    });
    let run = |train: &Dataset, method| {
        let tc = ExperimentConfig { method, ..cfg.clone() }.train_config(4);
        train_run(
            TrainData {
                train,
                test: &data.test,
                fallback: None,
            },
            &tc,
        )
        .unwrap()
        .student
    };
    let base = run(&data.train, Method::DebiasPl);
    assert_eq!(base, run(&noise, Method::DebiasPl));
    for m in [Method::FixMatch, Method::FixMatchDa, Method::FixMatchLa] {
        assert_eq!(base, run(&data.train, m), "{m}");
    }
}

#[test]
fn zero_lambda_matches_fixmatch() {
    let data = build_ssl_data(&small(Method::FixMatch), 5).unwrap();
    let run = |cfg: ExperimentConfig| {
        train_run(
            TrainData {
                train: &data.train,
                test: &data.test,
                fallback: None,
            },
            &cfg.train_config(5),
        )
        .unwrap()
    };
    let plain = run(small(Method::FixMatch));
    let debiased = run(ExperimentConfig {
        lambda: 0.0,
        ..small(Method::DebiasPl)
    });
    assert_eq!(plain.student, debiased.student);
    assert_eq!(plain.metrics.rows, debiased.metrics.rows);
    let active = run(small(Method::DebiasPl));
    assert!(active.student.max_abs_diff(&plain.student) > 0.0);
}

#[test]
fn run_directory_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(Method::DebiasPl);
    let (run, summary) = train_to_dir(&cfg, 2, dir.path()).unwrap();
    assert_eq!(checkpoint::load(&dir.path().join("ema.ckpt")).unwrap(), run.outcome.ema);
    let snap = std::fs::read_to_string(dir.path().join("config.snapshot")).unwrap();
    let back = ExperimentConfig::parse(&snap).unwrap();
    assert_eq!(back.to_text(), snap);
    let (_, again) = train_to_dir(&back, 2, &dir.path().join("again")).unwrap();
    assert_eq!(
        std::fs::read(dir.path().join("metrics.csv")).unwrap(),
        std::fs::read(dir.path().join("again/metrics.csv")).unwrap()
    );
    assert_eq!(summary.final_p_hat, again.final_p_hat);
    let index = report(dir.path(), &dir.path().join("report")).unwrap();
    assert!(index.notes.iter().any(|n| n.contains("stand-in")));
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const FAST: [&str; 8] = [
    "--override",
    "train.steps=60",
    "--override",
    "train.eval_every=20",
    "--override",
    "model.hidden=16",
    "--override",
    "test.per_class=20",
];

fn debiaspl(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_debiaspl"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("DEBIASPL_OUT")
        .output()
        .expect("spawn debiaspl")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn with_fast<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = FAST.to_vec();
    v.extend_from_slice(args);
    v
}

#[test]
fn train_is_byte_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let o = debiaspl(dir.path(), &with_fast(&["--seed", "1", "train"]));
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let read = |d: &tempfile::TempDir| fs::read(d.path().join("debiaspl/seed1/metrics.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert!(a.path().join("debiaspl/seed1/config.snapshot").exists());
}

#[test]
fn snapshot_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = debiaspl(
        dir.path(),
        &with_fast(&["--method", "fixmatch+la", "--seed", "3", "train"]),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let run = dir.path().join("fixmatch+la/seed3");
    let again = tempfile::tempdir().unwrap();
    let snap = run.join("config.snapshot");
    let o = debiaspl(again.path(), &["--config", snap.to_str().unwrap(), "train"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(run.join("metrics.csv")).unwrap(),
        fs::read(again.path().join("fixmatch+la/seed3/metrics.csv")).unwrap()
    );
}

#[test]
fn zsl_threshold_above_one_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = debiaspl(dir.path(), &with_fast(&["--override", "zsl.tau_clip=1.1", "zsl"]));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("threshold too high"), "{}", stderr(&o));
}

#[test]
fn bad_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let o = debiaspl(dir.path(), &["--override", "train.tau=1.5", "train"]);
    assert!(!o.status.success());
    assert!(
        stderr(&o).contains("train.tau") && stderr(&o).contains("(0,1]"),
        "{}",
        stderr(&o)
    );

    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "train.taux = 0.9\n").unwrap();
    let o = debiaspl(dir.path(), &["--config", cfg.to_str().unwrap(), "train"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("train.taux"), "{}", stderr(&o));

    let o = debiaspl(dir.path(), &["analyze", dir.path().join("missing").to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn output_root_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_debiaspl"))
        .args(["--seed", "2", "gen-data"])
        .env("DEBIASPL_OUT", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("data/seed2/train.csv").exists());
    assert!(dir.path().join("data/seed2/test.csv").exists());
}

#[test]
fn zsl_then_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let o = debiaspl(
        dir.path(),
        &with_fast(&[
            "--override",
            "zsl.teacher_steps=150",
            "--override",
            "zsl.target_per_class=40",
            "zsl",
        ]),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let run = dir.path().join("zsl-debiaspl/seed1");
    assert!(run.join("teacher_sweep.csv").exists());
    let o = debiaspl(dir.path(), &["report", run.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let index = fs::read_to_string(run.join("report/index.json")).unwrap();
    assert!(index.contains("teacher_precision_recall.csv"), "{index}");
    assert!(index.contains("stand-in"), "{index}");
}

#[test]
fn sweep_emits_a_grid() {
    let dir = tempfile::tempdir().unwrap();
    let o = debiaspl(
        dir.path(),
        &with_fast(&["--seed", "1,2", "sweep", "--lambdas", "0,0.5", "--jobs", "2"]),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("sweep/summary.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4, "{csv}");
    assert!(lines[1].starts_with("fixmatch,0.5,2,"));
    assert!(lines[2].starts_with("debiaspl,0,2,"));
    assert!(lines[3].starts_with("debiaspl,0.5,2,"));
    // λ = 0 reduces to the baseline
    let bal = |l: &str| l.split(',').nth(3).unwrap().to_string();
    assert_eq!(bal(lines[1]), bal(lines[2]));
}

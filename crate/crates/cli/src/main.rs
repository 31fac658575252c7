//! Command-line entry point for the debiased pseudo-labeling experiments.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use debiaspl_core::analysis::format_ratio;
use debiaspl_core::experiment::{
    format_sweep_table, gen_data, report, sweep_grid, train_to_dir, write_sweep_table, zsl_to_dir, RunSummary,
    SweepCell,
};
use debiaspl_core::{ExperimentConfig, Method};

/// Debiased pseudo-labeling on synthetic long-tailed benchmarks.
///
/// Configuration is a flat `key = value` file with dotted sections; every key
/// has a default, so an empty or absent file runs the default benchmark.
/// Flags override the file, and `--override` overrides everything.
#[derive(Parser, Debug)]
#[command(name = "debiaspl", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Config file of `key = value` lines.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seeds to run, comma-separated (overrides `run.seeds`).
    #[arg(long, global = true, value_name = "N[,N...]", value_delimiter = ',')]
    seed: Vec<u64>,
    /// Output root (overrides `run.out`).
    #[arg(long, global = true, env = "DEBIASPL_OUT", value_name = "DIR")]
    out: Option<PathBuf>,
    /// fixmatch, debiaspl, fixmatch+da or fixmatch+la (overrides `train.method`).
    #[arg(long, global = true, value_name = "NAME")]
    method: Option<Method>,
    /// Debiasing weight λ (overrides `debias.lambda`).
    #[arg(long, global = true, value_name = "X")]
    lambda: Option<f64>,
    /// Any config key, e.g. `--override train.steps=500`; repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the labeled+unlabeled training pool and the test set.
    GenData,
    /// Semi-supervised training, one run directory per seed.
    Train,
    /// Biased teacher, confidence bootstrap and self-training on the target.
    Zsl,
    /// Bias diagnostics from a run directory's stored predictions.
    #[command(alias = "report")]
    Analyze(AnalyzeArgs),
    /// Seed × method × λ grid with a mean ± std summary table.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Run directories to analyze.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// λ values tried for debiaspl; other methods use `debias.lambda`.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.25, 0.5, 1.0])]
    lambdas: Vec<f64>,
    /// Methods in the grid.
    #[arg(long, value_delimiter = ',', default_values_t = vec![Method::FixMatch, Method::DebiasPl])]
    methods: Vec<Method>,
    /// Runs in parallel; defaults to the number of runs capped at available cores.
    #[arg(long)]
    jobs: Option<usize>,
}

fn load_config(g: &Global) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ExperimentConfig::parse(&text).with_context(|| format!("in {}", p.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if !g.seed.is_empty() {
        cfg.seeds = g.seed.clone();
    }
    if let Some(m) = g.method {
        cfg.method = m;
    }
    if let Some(l) = g.lambda {
        cfg.lambda = l;
    }
    for o in &g.overrides {
        let (k, v) = o
            .split_once('=')
            .with_context(|| format!("--override expects KEY=VALUE, got `{o}`"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    if let Some(out) = &g.out {
        cfg.out = out.display().to_string();
    }
    if cfg.seeds.is_empty() {
        bail!("no seeds given");
    }
    Ok(cfg)
}

fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed{seed}"))
}

fn print_summary(dir: &Path, s: &RunSummary) {
    println!(
        "{}: {} seed {} balanced acc {:.4} acc {:.4} pseudo-label imbalance {} ({:.1}s)",
        dir.display(),
        s.method,
        s.seed,
        s.final_balanced_test_acc,
        s.final_test_acc,
        s.final_pseudo_label_imbalance.as_deref().unwrap_or("-"),
        s.wall_time_s
    );
}

fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<()> {
    for &seed in &cfg.seeds {
        let dir = seed_dir(&Path::new(&cfg.out).join("data"), seed);
        for p in gen_data(cfg, seed, &dir)? {
            println!("{}", p.display());
        }
    }
    Ok(())
}

fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    let root = Path::new(&cfg.out).join(cfg.method.name());
    for &seed in &cfg.seeds {
        let dir = seed_dir(&root, seed);
        let (_, s) = train_to_dir(cfg, seed, &dir).with_context(|| format!("seed {seed}"))?;
        print_summary(&dir, &s);
    }
    Ok(())
}

fn cmd_zsl(cfg: &ExperimentConfig) -> Result<()> {
    let root = Path::new(&cfg.out).join(format!("zsl-{}", cfg.method.name()));
    for &seed in &cfg.seeds {
        let dir = seed_dir(&root, seed);
        let (run, s) = zsl_to_dir(cfg, seed, &dir).with_context(|| format!("seed {seed}"))?;
        println!(
            "{}: teacher balanced acc {:.4}, target prediction imbalance {}, bootstrapped {} rows",
            dir.display(),
            run.teacher_eval.balanced_test_acc,
            format_ratio(run.teacher.target_imbalance),
            run.bootstrap.accepted_counts.iter().sum::<usize>()
        );
        print_summary(&dir, &s);
    }
    Ok(())
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    for run in &args.runs {
        let out = run.join("report");
        let index = report(run, &out).with_context(|| format!("analyzing {}", run.display()))?;
        println!("{}: {} files", out.join("index.json").display(), index.files.len());
    }
    Ok(())
}

fn cell_dir(root: &Path, method: Method, lambda: f64) -> PathBuf {
    root.join(format!("{}_lambda{}", method.name(), lambda))
}

fn cmd_sweep(cfg: &ExperimentConfig, args: &SweepArgs) -> Result<()> {
    if args.methods.is_empty() {
        bail!("--methods is empty");
    }
    let root = Path::new(&cfg.out).join("sweep");
    let grid = sweep_grid(cfg, &args.methods, &args.lambdas);
    let jobs_list: Vec<(usize, u64)> = (0..grid.len())
        .flat_map(|g| cfg.seeds.iter().map(move |&s| (g, s)))
        .collect();
    let cores = thread::available_parallelism().map_or(1, |n| n.get());
    let jobs = args.jobs.unwrap_or(jobs_list.len().min(cores)).max(1);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<RunSummary>>> = Mutex::new(vec![None; jobs_list.len()]);
    let failures: Mutex<Vec<String>> = Mutex::new(Vec::new());
    thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(g, seed)) = jobs_list.get(i) else { break };
                let (method, lambda, c) = &grid[g];
                let dir = seed_dir(&cell_dir(&root, *method, *lambda), seed);
                match train_to_dir(c, seed, &dir) {
                    Ok((_, s)) => {
                        print_summary(&dir, &s);
                        results.lock().expect("results lock")[i] = Some(s);
                    }
                    Err(e) => failures.lock().expect("failures lock").push(format!(
                        "{} λ={} seed {}: {}",
                        method.name(),
                        lambda,
                        seed,
                        e
                    )),
                }
            });
        }
    });
    let failures = failures.into_inner().expect("failures lock");
    let results = results.into_inner().expect("results lock");
    let mut cells: Vec<SweepCell> = grid
        .iter()
        .map(|(m, l, _)| SweepCell {
            method: m.name().to_string(),
            lambda: *l,
            seeds: Vec::new(),
            balanced_acc: Vec::new(),
            test_acc: Vec::new(),
            final_imbalance: Vec::new(),
        })
        .collect();
    for (&(g, seed), r) in jobs_list.iter().zip(&results) {
        if let Some(s) = r {
            let c = &mut cells[g];
            c.seeds.push(seed);
            c.balanced_acc.push(s.final_balanced_test_acc);
            c.test_acc.push(s.final_test_acc);
            c.final_imbalance
                .push(parse_ratio(s.final_pseudo_label_imbalance.as_deref()));
        }
    }
    fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;
    write_sweep_table(&cells, &root.join("summary.csv"))?;
    let table = format_sweep_table(&cells);
    fs::write(root.join("summary.txt"), &table).with_context(|| format!("writing {}", root.display()))?;
    print!("{table}");
    if !failures.is_empty() {
        for f in &failures {
            eprintln!("failed: {f}");
        }
        bail!("{} of {} runs failed", failures.len(), jobs_list.len());
    }
    Ok(())
}

fn parse_ratio(s: Option<&str>) -> f64 {
    match s {
        Some("inf") => f64::INFINITY,
        Some(v) => v.parse().unwrap_or(f64::NAN),
        None => f64::NAN,
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Analyze(args) = &cli.command {
        return cmd_analyze(args);
    }
    let cfg = load_config(&cli.global)?;
    match &cli.command {
        Command::GenData => cmd_gen_data(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Zsl => cmd_zsl(&cfg),
        Command::Sweep(args) => cmd_sweep(&cfg, args),
        Command::Analyze(_) => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

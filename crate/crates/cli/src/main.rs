//! `co2gnsm`: data generation, training, evaluation, well-placement
//! optimization and plot-data export over one experiment configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use co2gnsm::error::{CoreError, Result};
use co2gnsm::io;
use co2gnsm::pipeline::config::ExperimentConfig;
use co2gnsm::pipeline::data::{generate, load_split, Split};
use co2gnsm::pipeline::evaluate::{evaluate, write_report, EvalReport};
use co2gnsm::pipeline::optimize::{run_study, write_study, EvaluatorKind, Method};
use co2gnsm::pipeline::plots::{export, read_progress};
use co2gnsm::pipeline::train::{run_training, write_curves, Trained, BHP_CKPT, PRESSURE_CKPT, SATURATION_CKPT};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Parser)]
#[command(name = "co2gnsm", version, about = "Graph-network surrogate for CO2 storage and well-placement optimization")]
struct Cli {
    /// Experiment configuration (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration seed; for `optimize`, the search seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Root of all run artifacts.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the training and test cases (resumable).
    GenerateData,
    /// Staged training of both networks and the BHP model.
    Train,
    /// Roll out the surrogate on the test cases and compare with the simulator.
    Evaluate,
    /// Optimize well placement with the simulator or the surrogate.
    Optimize(OptimizeArgs),
    /// Write plot-ready CSV tables from evaluation and optimization results.
    ExportPlots,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvaluatorArg {
    Oracle,
    Surrogate,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    De,
    Random,
}

#[derive(clap::Args)]
struct OptimizeArgs {
    #[arg(long, value_enum, default_value = "surrogate")]
    evaluator: EvaluatorArg,
    #[arg(long, value_enum, default_value = "de")]
    method: MethodArg,
    /// Overrides the iteration cap of differential evolution.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Evaluation budget of random search; defaults to the evolution cap.
    #[arg(long)]
    budget: Option<usize>,
    /// Study directory name under `<out>/optimize`.
    #[arg(long)]
    name: Option<String>,
}

/// Written once per command invocation to `<command dir>/manifest.json`.
#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    command: String,
    config_sha256: String,
    /// The effective configuration; with `seed` it determines every output.
    config: String,
    seed: u64,
    /// Paths relative to the output root.
    artifacts: Vec<String>,
    timings: BTreeMap<String, f64>,
    version: String,
}

fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

struct Ctx {
    cfg: ExperimentConfig,
    config_text: String,
    out: PathBuf,
}

impl Ctx {
    fn data(&self) -> PathBuf {
        self.out.join("data")
    }

    fn dir(&self, name: &str) -> Result<PathBuf> {
        let d = self.out.join(name);
        std::fs::create_dir_all(&d).map_err(|e| CoreError::io(format!("creating {}", d.display()), e))?;
        Ok(d)
    }

    fn manifest(&self, command: &str, dir: &Path, seed: u64, artifacts: Vec<PathBuf>, timings: BTreeMap<String, f64>) -> Result<()> {
        let rel = |p: &PathBuf| p.strip_prefix(&self.out).unwrap_or(p).display().to_string();
        let m = RunManifest {
            command: command.into(),
            config_sha256: sha256_hex(&self.config_text),
            config: self.config_text.clone(),
            seed,
            artifacts: artifacts.iter().map(rel).collect(),
            timings,
            version: env!("CARGO_PKG_VERSION").into(),
        };
        io::write_json(&dir.join("manifest.json"), &m)
    }
}

fn require(path: PathBuf, hint: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CoreError::Missing(format!("{} ({hint})", path.display())))
    }
}

fn cmd_generate(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    if cfg.data.train + cfg.data.test > 40 {
        log::warn!("simulating {} cases; this takes a while", cfg.data.train + cfg.data.test);
    }
    let root = ctx.dir("data")?;
    let t0 = Instant::now();
    let summary = generate(cfg, &root)?;
    log::info!("generated {}, kept {}, failed {}", summary.generated.len(), summary.skipped.len(), summary.failed.len());
    io::write_json(&root.join("summary.json"), &summary)?;
    let mut artifacts = vec![root.join("grid.json"), root.join("summary.json")];
    artifacts.extend(summary.generated.iter().chain(&summary.skipped).map(|id| root.join(id.replace('/', "/case_"))));
    let timings = BTreeMap::from([("generate".to_string(), t0.elapsed().as_secs_f64())]);
    ctx.manifest("generate-data", &root, cfg.seed, artifacts, timings)?;
    if let Some((id, msg)) = summary.failed.first() {
        return Err(CoreError::Numerical(format!("{} of the cases failed, first {id}: {msg}", summary.failed.len())));
    }
    Ok(())
}

fn cmd_train(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let (grid, train) = load_split(cfg, &ctx.data(), Split::Train, cfg.data.train)?;
    let dir = ctx.dir("train")?;
    let mut log = run_training(cfg, &grid, &train, &dir)?;
    let timings: BTreeMap<String, f64> = std::mem::take(&mut log.seconds).into_iter().collect();
    write_curves(&log, &dir.join("curves.csv"))?;
    io::write_json(&dir.join("train_log.json"), &log)?;
    let artifacts = [PRESSURE_CKPT, SATURATION_CKPT, BHP_CKPT, "curves.csv", "train_log.json"].iter().map(|n| dir.join(n)).collect();
    ctx.manifest("train", &dir, cfg.seed, artifacts, timings)
}

fn cmd_evaluate(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let trained = Trained::load(&ctx.out.join("train"))?;
    let (grid, test) = load_split(cfg, &ctx.data(), Split::Test, cfg.data.test)?;
    let dir = ctx.dir("evaluate")?;
    let t0 = Instant::now();
    let (report, timing) = evaluate(cfg, &grid, &trained, &test)?;
    log::info!(
        "median e_p {:.4}, median e_s {:.4}, BHP MAE {:.3} bar ({:.2}% of range)",
        report.e_p_percentiles[2],
        report.e_s_percentiles[2],
        report.bhp_mae,
        100.0 * report.bhp_mae_over_range
    );
    write_report(&report, &dir)?;
    io::write_json(&dir.join("report.json"), &report)?;
    let names = ["errors.csv", "percentiles.csv", "footprint.csv", "bhp_series.csv", "bhp_summary.csv", "report.json"];
    let timings = BTreeMap::from([
        ("evaluate".to_string(), t0.elapsed().as_secs_f64()),
        ("mean_rollout".to_string(), timing.mean_rollout),
        ("mean_simulation".to_string(), timing.mean_simulation),
    ]);
    ctx.manifest("evaluate", &dir, cfg.seed, names.iter().map(|n| dir.join(n)).collect(), timings)
}

fn cmd_optimize(ctx: &Ctx, args: &OptimizeArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg = ctx.cfg.clone();
    if let Some(m) = args.max_iter {
        cfg.optimize.de.max_iter = m;
    }
    cfg.validate()?;
    let evaluator = match args.evaluator {
        EvaluatorArg::Oracle => EvaluatorKind::Oracle,
        EvaluatorArg::Surrogate => EvaluatorKind::Surrogate,
    };
    let (method, default_seed, tag) = match args.method {
        MethodArg::De => {
            let s = match evaluator {
                EvaluatorKind::Oracle => cfg.optimize.oracle_seed,
                EvaluatorKind::Surrogate => cfg.optimize.surrogate_seeds.first().copied().unwrap_or(1),
            };
            (Method::DifferentialEvolution, s, "de")
        }
        MethodArg::Random => {
            let budget = args.budget.unwrap_or(cfg.optimize.de.pop_size * cfg.optimize.de.max_iter);
            (Method::RandomSearch { budget }, cfg.optimize.random_search_seed, "random")
        }
    };
    let seed = seed.unwrap_or(default_seed);
    let grid_path = require(ctx.data().join("grid.json"), "run generate-data first")?;
    let grid = co2gnsm::grid::GridModel::load(&grid_path)?;
    let trained = match evaluator {
        EvaluatorKind::Surrogate => Some(Trained::load(&ctx.out.join("train"))?),
        EvaluatorKind::Oracle => None,
    };
    let kind = match evaluator {
        EvaluatorKind::Oracle => "oracle",
        EvaluatorKind::Surrogate => "surrogate",
    };
    let name = args.name.clone().unwrap_or_else(|| format!("{kind}-{tag}-seed{seed}"));
    let dir = ctx.dir(&format!("optimize/{name}"))?;
    let t0 = Instant::now();
    let run = run_study(&cfg, &grid, trained.as_ref(), evaluator, method, seed)?;
    let s = &run.summary;
    log::info!("{name}: {:?} after {} evaluations, best feasible J {:?}", s.stop, s.evaluations, s.best_feasible_j);
    if let (Some(check), Some(gap)) = (&s.oracle_check, s.oracle_gap) {
        log::info!("simulator re-score: J {:.4} (gap {:.1}%), C_bhp {:.2e}, C_ret {:.2e}", check.score.j, 100.0 * gap, check.score.c_bhp, check.score.c_ret);
    }
    write_study(&run, &dir, cfg.optimize.de.tol)?;
    let timings = BTreeMap::from([("optimize".to_string(), t0.elapsed().as_secs_f64())]);
    let ctx = Ctx { config_text: cfg.to_toml()?, cfg, out: ctx.out.clone() };
    let names = ["history.csv", "iterations.csv", "best_wells.json", "summary.json"];
    ctx.manifest("optimize", &dir, seed, names.iter().map(|n| dir.join(n)).collect(), timings)
}

fn cmd_export_plots(ctx: &Ctx) -> Result<()> {
    let report: EvalReport = io::read_json(&require(ctx.out.join("evaluate/report.json"), "run evaluate first")?)?;
    let mut studies = Vec::new();
    let opt = ctx.out.join("optimize");
    if opt.is_dir() {
        let mut names: Vec<String> = std::fs::read_dir(&opt)
            .map_err(|e| CoreError::io(format!("listing {}", opt.display()), e))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join("iterations.csv").exists())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        for n in names {
            studies.push(read_progress(&n, &opt.join(&n).join("iterations.csv"))?);
        }
    }
    let dir = ctx.dir("plots")?;
    let t0 = Instant::now();
    let paths = export(&report, &studies, &dir)?;
    let timings = BTreeMap::from([("export".to_string(), t0.elapsed().as_secs_f64())]);
    ctx.manifest("export-plots", &dir, ctx.cfg.seed, paths, timings)
}

/// 2 configuration, 3 missing prerequisite, 4 numerical failure, 1 other.
fn exit_code(e: &CoreError) -> u8 {
    match e {
        CoreError::Config(_) | CoreError::InvalidGrid(_) | CoreError::InvalidWell { .. } | CoreError::InvalidArgument(_) => 2,
        CoreError::Missing(_) => 3,
        CoreError::Numerical(_) | CoreError::CflUnderflow { .. } | CoreError::SolverDiverged { .. } => 4,
        CoreError::Diff(diffcore::DiffError::NonFinite { .. }) => 4,
        CoreError::Evaluation { source, .. } => exit_code(source),
        _ => 1,
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| match e {
            CoreError::Io { context, source } => CoreError::Config(format!("{context}: {source}")),
            other => other,
        })?,
        None => ExperimentConfig::default(),
    };
    if let (Some(seed), false) = (cli.seed, matches!(cli.command, Command::Optimize(_))) {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CoreError::Config("--workers must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CoreError::Config(e.to_string()))?;
    }
    let cfg = load_config(cli)?;
    let ctx = Ctx { config_text: cfg.to_toml()?, cfg, out: cli.out.clone() };
    match &cli.command {
        Command::GenerateData => cmd_generate(&ctx),
        Command::Train => cmd_train(&ctx),
        Command::Evaluate => cmd_evaluate(&ctx),
        Command::Optimize(args) => cmd_optimize(&ctx, args, cli.seed),
        Command::ExportPlots => cmd_export_plots(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

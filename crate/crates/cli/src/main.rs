//! `spcl`: train, run, merge, sweep, evaluate and summarize from the shell.
//!
//! Exit codes: 0 success, 2 bad configuration or input, 3 a run diverged or
//! produced non-finite values. Logs go to stderr; data goes to `--out`.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use spcl_core::checkpoint;
use spcl_core::consolidation::{model_mix, sac_consolidate, MeanConvention, MixConfig};
use spcl_core::harness::report::{self, CsvRow};
use spcl_core::harness::{
    alpha_sweep, continual_run_from, evaluate, joint_run_from, prepare_initial, Method, RunConfig, StreamData,
    DEFAULT_BOUNDARY_TOL, SWEEP_METHODS,
};
use spcl_core::{Error, ParamSet, Tensor};

#[derive(Parser)]
#[command(name = "spcl", version, about = "Continual instruction tuning with spectral-aware consolidation")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only log errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the starting model; with --tasks, also train jointly on them.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the task stream, writing a checkpoint per stage and the run CSV.
    Continual {
        #[command(flatten)]
        run: RunArgs,
        /// Start from this checkpoint instead of building the starting model.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge a newly trained checkpoint into an old one.
    Merge {
        old: PathBuf,
        new: PathBuf,
        #[arg(long, default_value_t = spcl_core::consolidation::DEFAULT_ALPHA, value_parser = parse_alpha)]
        alpha: f64,
        #[arg(long, value_enum, default_value_t = Mode::Sac)]
        mode: Mode,
        #[arg(long, value_parser = parse_convention)]
        convention: Option<MeanConvention>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every (method, alpha) pair and locate the stable-region edges.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated mixing ratios.
        #[arg(long, default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1")]
        alphas: String,
        /// Comma-separated methods; defaults to modelmix,sac,sac+uir.
        #[arg(long)]
        methods: Option<String>,
        /// Accuracy drop tolerated inside a stable region.
        #[arg(long, default_value_t = DEFAULT_BOUNDARY_TOL)]
        tol: f64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on the stream tasks and the general probe.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        checkpoint: PathBuf,
        /// CSV to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-method summary of one or more run CSVs.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// CSV to write.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Sac,
    Mix,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_alpha)]
    alpha: Option<f64>,
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    #[arg(long, env = "SPCL_SEED")]
    seed: Option<u64>,
    /// Comma-separated stream task ids, in the order to run them.
    #[arg(long)]
    tasks: Option<String>,
    #[arg(long, value_parser = parse_convention)]
    convention: Option<MeanConvention>,
}

fn parse_alpha(s: &str) -> Result<f64, String> {
    let a: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if (0.0..=1.0).contains(&a) {
        Ok(a)
    } else {
        Err(format!("alpha must lie in [0, 1], got {a}"))
    }
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_convention(s: &str) -> Result<MeanConvention, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Divergence { .. } | Error::NonFinite { .. } | Error::SvdFailed { .. } => 3,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

fn io_context(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| config_error(format!("{}: {e}", path.display()))
}

type CliResult<T = ()> = Result<T, Failure>;

impl RunArgs {
    fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_json(&fs::read_to_string(path).map_err(io_context(path))?)?,
            None => RunConfig::default(),
        };
        if let Some(m) = self.method {
            cfg.method = m;
        }
        if let Some(a) = self.alpha {
            if !cfg.method.uses_alpha() {
                warn!("method `{}` does not consolidate; --alpha has no effect", cfg.method);
            }
            cfg.mix.alpha = a;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(c) = self.convention {
            cfg.mix.mean_convention = c;
        }
        if let Some(list) = &self.tasks {
            let ids = split_list(list);
            if ids.is_empty() {
                return Err(config_error("--tasks lists no task ids"));
            }
            let mut chosen = Vec::with_capacity(ids.len());
            for id in ids {
                let spec = cfg.stream.tasks.iter().find(|t| t.task_id == id);
                chosen.push(spec.cloned().ok_or_else(|| config_error(format!("unknown task id `{id}`")))?);
            }
            cfg.stream.tasks = chosen;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn split_list(s: &str) -> Vec<&str> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).collect()
}

fn create_dir(path: &Path) -> CliResult {
    fs::create_dir_all(path).map_err(io_context(path))
}

fn write_file(path: &Path, write: impl FnOnce(&mut BufWriter<fs::File>) -> spcl_core::Result<()>) -> CliResult {
    let file = fs::File::create(path).map_err(io_context(path))?;
    let mut w = BufWriter::new(file);
    write(&mut w)?;
    w.flush().map_err(io_context(path))
}

fn load(path: &Path) -> CliResult<ParamSet<f32>> {
    checkpoint::load(path).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

/// Rejects checkpoints that do not fit the configured model.
fn check_shapes(cfg: &RunConfig, params: &ParamSet<f32>) -> CliResult {
    let expected: ParamSet<f32> =
        cfg.model.param_shapes().into_iter().map(|(name, shape)| (name, Tensor::zeros(shape))).collect();
    Ok(expected.check_compatible(params)?)
}

fn train(run: &RunArgs, out: &Path) -> CliResult {
    let cfg = run.resolve()?;
    let data = StreamData::generate(&cfg)?;
    let mut params = prepare_initial(&cfg, &data)?;
    if run.tasks.is_some() {
        info!("training jointly on {} task(s)", cfg.stream.tasks.len());
        let record = joint_run_from(&cfg, &data, &params, &mut |_| Ok(()))?;
        params = record.final_params;
    }
    checkpoint::save(&params, out).map_err(|e| config_error(format!("{}: {e}", out.display())))?;
    info!("wrote {}", out.display());
    Ok(())
}

fn continual(run: &RunArgs, init: Option<&Path>, out: &Path) -> CliResult {
    let cfg = run.resolve()?;
    create_dir(out)?;
    let data = StreamData::generate(&cfg)?;
    let initial = match init {
        Some(path) => {
            let p = load(path)?;
            check_shapes(&cfg, &p)?;
            p
        }
        None => prepare_initial(&cfg, &data)?,
    };
    let save = |name: String, p: &ParamSet<f32>| -> spcl_core::Result<()> { checkpoint::save(p, out.join(name)) };
    save("stage_0.spcl".into(), &initial)?;
    let merges = cfg.method.uses_alpha();
    let record = continual_run_from(&cfg, &data, &initial, &mut |snap| {
        info!("stage {} done", snap.stage);
        if merges {
            save(format!("stage_{}_trained.spcl", snap.stage), snap.trained)?;
        }
        save(format!("stage_{}.spcl", snap.stage), snap.consolidated)
    })?;
    let csv = out.join("run.csv");
    write_file(&csv, |w| report::write_csv(w, std::slice::from_ref(&record)))?;
    fs::write(out.join("config.json"), cfg.to_json()).map_err(io_context(out))?;
    info!(
        "{}: task acc {:.4}, general acc {:.4} (started at {:.4})",
        record.run_id,
        record.final_task_acc(),
        record.final_gen_acc(),
        record.initial_gen_acc()
    );
    Ok(())
}

fn merge(old: &Path, new: &Path, alpha: f64, mode: Mode, convention: Option<MeanConvention>, out: &Path) -> CliResult {
    let (a, b) = (load(old)?, load(new)?);
    let merged = match mode {
        Mode::Mix => {
            if convention.is_some() {
                warn!("--convention only affects --mode sac");
            }
            model_mix(&a, &b, alpha)?
        }
        Mode::Sac => {
            let mut cfg = MixConfig::with_alpha(alpha);
            if let Some(c) = convention {
                cfg.mean_convention = c;
            }
            sac_consolidate(&a, &b, &cfg)?
        }
    };
    checkpoint::save(&merged, out).map_err(|e| config_error(format!("{}: {e}", out.display())))?;
    info!("wrote {}", out.display());
    Ok(())
}

fn sweep(run: &RunArgs, alphas: &str, methods: Option<&str>, tol: f64, jobs: usize, out: &Path) -> CliResult {
    let cfg = run.resolve()?;
    let grid = split_list(alphas)
        .into_iter()
        .map(|s| parse_alpha(s).map_err(config_error))
        .collect::<CliResult<Vec<f64>>>()?;
    let methods = match methods {
        Some(list) => split_list(list)
            .into_iter()
            .map(|s| parse_method(s).map_err(config_error))
            .collect::<CliResult<Vec<Method>>>()?,
        None => SWEEP_METHODS.to_vec(),
    };
    if jobs == 0 {
        return Err(config_error("--jobs must be at least 1"));
    }
    let result = alpha_sweep(&cfg, &grid, &methods, tol, jobs)?;
    create_dir(out)?;
    write_file(&out.join("runs.csv"), |w| report::write_csv(w, &result.records))?;
    write_file(&out.join("points.csv"), |w| {
        writeln!(w, "method,alpha,task_acc,gen_acc")?;
        for p in &result.points {
            writeln!(w, "{},{},{},{}", p.method, p.alpha, p.task_acc, p.gen_acc)?;
        }
        Ok(())
    })?;
    write_file(&out.join("boundaries.csv"), |w| {
        writeln!(w, "method,general_stable,task_stable")?;
        for b in &result.boundaries {
            writeln!(w, "{},{},{}", b.method, b.general_stable, b.task_stable)?;
            info!("{}: general stable up to {}, task stable from {}", b.method, b.general_stable, b.task_stable);
        }
        Ok(())
    })
}

fn eval(run: &RunArgs, path: &Path, out: &Path) -> CliResult {
    let cfg = run.resolve()?;
    let params = load(path)?;
    check_shapes(&cfg, &params)?;
    let data = StreamData::generate(&cfg)?;
    let mut rows = Vec::new();
    for task in &data.tasks {
        let (loss, acc) = evaluate(&cfg, &params, &task.test)?;
        rows.push((task.spec.task_id.clone(), loss, acc));
    }
    let (loss, acc) = evaluate(&cfg, &params, &data.probe.examples)?;
    rows.push(("general-probe".to_string(), loss, acc));
    write_file(out, |w| {
        writeln!(w, "task_id,loss,acc")?;
        for (id, loss, acc) in &rows {
            writeln!(w, "{id},{loss},{acc}")?;
            info!("{id}: acc {acc:.4}");
        }
        Ok(())
    })
}

fn report_cmd(inputs: &[PathBuf], out: &Path) -> CliResult {
    let mut rows: Vec<CsvRow> = Vec::new();
    for path in inputs {
        let file = fs::File::open(path).map_err(io_context(path))?;
        let parsed =
            report::parse_csv(BufReader::new(file)).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        rows.extend(parsed);
    }
    if rows.is_empty() {
        warn!("no runs found in the input");
    }
    let summary = report::summarize(&rows);
    write_file(out, |w| report::write_summary(w, &summary))?;
    for line in report::format_summary(&summary).lines() {
        info!("{line}");
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match &cli.command {
        Command::Train { run, out } => train(run, out),
        Command::Continual { run, init, out } => continual(run, init.as_deref(), out),
        Command::Merge { old, new, alpha, mode, convention, out } => merge(old, new, *alpha, *mode, *convention, out),
        Command::Sweep { run, alphas, methods, tol, jobs, out } => {
            sweep(run, alphas, methods.as_deref(), *tol, *jobs, out)
        }
        Command::Eval { run, checkpoint, out } => eval(run, checkpoint, out),
        Command::Report { inputs, out } => report_cmd(inputs, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Info,
        (false, _) => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_env("SPCL_LOG").init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

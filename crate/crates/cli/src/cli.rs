use std::ffi::OsString;
use std::io::Write;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use optistack_core::agent::rundir::read_metrics;
use optistack_core::agent::{EpisodeMetrics, Hyperparameters};
use optistack_core::analysis::{
    greedy_rollout, random_convexity_baseline, what_if, what_if_table, write_what_if_csv,
};
use optistack_core::baseline::BaselineConfig;
use optistack_core::env::Action;
use optistack_core::objective::{calibrate_alpha, RewardParams, TaskSpec, DEFAULT_BETA1, DEFAULT_BETA2};
use optistack_core::optics::{design_dbr, MaterialCatalog, Stack};
use optistack_core::Error;

use crate::app::{
    self, load_agent_run, resolve_catalog, resolve_task, CheckpointChoice, RewardChoice, TrainRequest,
    ALGO_BASELINE, ALGO_MPDQN, CALIBRATION_SAMPLES,
};
use crate::service::{self, ServiceConfig};
use crate::store::DATA_DIR_ENV;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "optistack", version, about = "Inverse design of multilayer optical coatings")]
pub struct Cli {
    /// Material catalog file; the builtin four-material catalog otherwise.
    #[arg(long, global = true)]
    pub catalog: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reflectivity of a stack over a task's grid, as CSV or JSON.
    Simulate(SimulateArgs),
    /// Quarter-wave Bragg reflector for a band edge.
    Dbr(DbrArgs),
    /// Derive the reward scale from random designs, or from a given mean objective magnitude.
    CalibrateAlpha(CalibrateArgs),
    /// Train the parameterized-action agent into a run directory.
    Train(TrainArgs),
    /// Train the discretized baseline into a run directory.
    BaselineDqn(BaselineArgs),
    /// Substitute one action in the greedy rollout of a trained run.
    Whatif(WhatIfArgs),
    /// Summarize a trained run and export its what-if table.
    Analyze(AnalyzeArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Builtin task id or task file.
    #[arg(long)]
    pub task: String,
    /// Stack file (`{"layers": [{"material": 1, "thickness_nm": 72.85}, ...]}`).
    #[arg(long)]
    pub stack: PathBuf,
    #[arg(long, default_value_t = service::DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DbrArgs {
    #[arg(long)]
    pub n1: f64,
    #[arg(long)]
    pub n2: f64,
    /// Long-wavelength stopband edge, nm.
    #[arg(long)]
    pub band_edge: f64,
    #[arg(long, default_value_t = 4)]
    pub periods: usize,
    /// Write the reflector as a stack file; materials are matched by real index.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long, default_value = "task2")]
    pub task: String,
    #[arg(long, default_value_t = CALIBRATION_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_BETA1)]
    pub beta1: f64,
    #[arg(long, default_value_t = DEFAULT_BETA2)]
    pub beta2: f64,
    /// Use this mean objective magnitude instead of sampling.
    #[arg(long)]
    pub eta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RewardArgs {
    /// Fixed reward scale.
    #[arg(long, conflicts_with = "calibrate")]
    pub alpha: Option<f64>,
    /// Calibrate the reward scale from random designs (the default).
    #[arg(long)]
    pub calibrate: bool,
}

impl RewardArgs {
    fn choice(&self, seed: u64) -> RewardChoice {
        match self.alpha {
            Some(alpha) => RewardChoice::Alpha { alpha },
            None => RewardChoice::Calibrate {
                samples: CALIBRATION_SAMPLES,
                seed,
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub task: String,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Thickness penalty weight, overriding the task's.
    #[arg(long)]
    pub mu: Option<f64>,
    #[command(flatten)]
    pub reward: RewardArgs,
    /// Hyperparameter file; unspecified fields keep their defaults.
    #[arg(long)]
    pub hyper: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub task: String,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[command(flatten)]
    pub reward: RewardArgs,
    /// Baseline settings file; unspecified fields keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CheckpointArg {
    Last,
    Best,
}

impl From<CheckpointArg> for CheckpointChoice {
    fn from(c: CheckpointArg) -> Self {
        match c {
            CheckpointArg::Last => CheckpointChoice::Last,
            CheckpointArg::Best => CheckpointChoice::Best,
        }
    }
}

#[derive(Debug, Args)]
pub struct WhatIfArgs {
    /// Run directory of an agent run.
    #[arg(long)]
    pub run: PathBuf,
    /// One-based layer position at which to substitute.
    #[arg(long)]
    pub layer: usize,
    #[arg(long, required_unless_present = "terminate", requires = "thickness")]
    pub material: Option<u32>,
    #[arg(long)]
    pub thickness: Option<f64>,
    /// Substitute the terminate action instead.
    #[arg(long, conflicts_with_all = ["material", "thickness"])]
    pub terminate: bool,
    #[arg(long, value_enum, default_value_t = CheckpointArg::Last)]
    pub checkpoint: CheckpointArg,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// What-if table CSV destination.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = CheckpointArg::Last)]
    pub checkpoint: CheckpointArg,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
    /// Run store root; falls back to $OPTISTACK_DATA_DIR, then ./optistack-data.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Extra task files to serve next to the builtin tasks.
    #[arg(long = "task")]
    pub tasks: Vec<PathBuf>,
    /// Built web UI to serve outside `/api`.
    #[arg(long)]
    pub assets: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or unreadable inputs.
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn usage(e: impl std::fmt::Display) -> Self {
        CliError::Usage(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

/// Parses `args` and runs the command, writing results to `out`. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if code == EXIT_OK {
                let _ = out.write_all(text.as_bytes());
            } else {
                let _ = err.write_all(text.as_bytes());
            }
            return code;
        }
    };
    match dispatch(cli, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let catalog = resolve_catalog(cli.catalog.as_deref()).map_err(CliError::usage)?;
    match cli.command {
        Command::Simulate(a) => simulate(&catalog, a, out),
        Command::Dbr(a) => dbr(&catalog, a, out),
        Command::CalibrateAlpha(a) => calibrate(&catalog, a, out),
        Command::Train(a) => train(&catalog, a, out, err),
        Command::BaselineDqn(a) => baseline(&catalog, a, out, err),
        Command::Whatif(a) => whatif(&catalog, a, out),
        Command::Analyze(a) => analyze(&catalog, a, out),
        Command::Serve(a) => serve(catalog, a, err),
    }
}

fn print_json<T: Serialize>(out: &mut dyn Write, value: &T) -> CliResult {
    serde_json::to_writer_pretty(&mut *out, value).map_err(Error::from)?;
    writeln!(out)?;
    Ok(())
}

fn task_with_mu(spec: &str, mu: Option<f64>) -> CliResult<TaskSpec> {
    let mut task = resolve_task(spec).map_err(CliError::usage)?;
    if let Some(mu) = mu {
        if !(mu.is_finite() && mu >= 0.0) {
            return Err(CliError::Usage(format!("--mu must be non-negative, got {mu}")));
        }
        task.mu = mu;
    }
    Ok(task)
}

fn read_json_file<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn simulate(catalog: &MaterialCatalog, a: SimulateArgs, out: &mut dyn Write) -> CliResult {
    let task = task_with_mu(&a.task, None)?;
    let text = std::fs::read_to_string(&a.stack).map_err(|e| CliError::Usage(format!("{}: {e}", a.stack.display())))?;
    let stack = Stack::from_json(&text).map_err(CliError::usage)?;
    let reward = RewardParams::from_alpha(a.alpha).map_err(CliError::usage)?;
    let report = app::simulate(&task, catalog, &stack.layers, &reward)?;
    let mut buf = Vec::new();
    match a.format {
        Format::Json => print_json(&mut buf, &report)?,
        Format::Csv => {
            writeln!(buf, "angle_deg,wavelength_nm,reflectivity,target")?;
            let mut i = 0;
            for &angle in &report.angles {
                for &w in &report.wavelengths {
                    writeln!(buf, "{angle},{w},{},{}", report.reflectivity[i], report.target[i])?;
                    i += 1;
                }
            }
        }
    }
    match a.out {
        Some(p) => std::fs::write(p, buf)?,
        None => out.write_all(&buf)?,
    }
    Ok(())
}

#[derive(Serialize)]
struct DbrOutput {
    center_wavelength_nm: f64,
    stopband_width_nm: f64,
    t1_nm: f64,
    t2_nm: f64,
    total_thickness_nm: f64,
    periods: usize,
}

fn dbr(catalog: &MaterialCatalog, a: DbrArgs, out: &mut dyn Write) -> CliResult {
    let spec = design_dbr(a.n1, a.n2, a.band_edge, a.periods).map_err(CliError::usage)?;
    print_json(
        out,
        &DbrOutput {
            center_wavelength_nm: spec.center_wavelength,
            stopband_width_nm: spec.stopband_width,
            t1_nm: spec.t1,
            t2_nm: spec.t2,
            total_thickness_nm: spec.total_thickness(),
            periods: spec.periods,
        },
    )?;
    writeln!(
        out,
        "lambda0={:.2} t1={:.2} t2={:.2} total={:.2}",
        spec.center_wavelength,
        spec.t1,
        spec.t2,
        spec.total_thickness()
    )?;
    if let Some(path) = a.out {
        let find = |n: f64| {
            catalog
                .find_by_real_index(n, 1e-9)
                .ok_or_else(|| CliError::Usage(format!("no catalog material has real index {n}")))
        };
        let stack = spec.stack(find(a.n1)?, find(a.n2)?);
        std::fs::write(path, serde_json::to_string_pretty(&stack).map_err(Error::from)?)?;
    }
    Ok(())
}

fn calibrate(catalog: &MaterialCatalog, a: CalibrateArgs, out: &mut dyn Write) -> CliResult {
    let params = match a.eta {
        Some(eta) => RewardParams::from_eta(eta, a.beta1, a.beta2).map_err(CliError::usage)?,
        None => {
            let task = task_with_mu(&a.task, None)?;
            calibrate_alpha(&task, catalog, a.samples, a.beta1, a.beta2, a.seed)?
        }
    };
    print_json(out, &params)
}

fn progress_printer<'a>(
    quiet: bool,
    episodes: usize,
    err: &'a mut dyn Write,
) -> impl FnMut(app::Progress) -> ControlFlow<()> + 'a {
    let every = (episodes / 20).max(1);
    move |p| {
        if !quiet && ((p.episode + 1) % every == 0 || p.episode + 1 == episodes) {
            let _ = writeln!(err, "episode {}/{episodes} best reward {:.4}", p.episode + 1, p.best_reward);
        }
        ControlFlow::Continue(())
    }
}

fn train(catalog: &MaterialCatalog, a: TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let task = task_with_mu(&a.task, a.mu)?;
    let mut hyper: Hyperparameters = match &a.hyper {
        Some(p) => read_json_file(p)?,
        None => Hyperparameters::default(),
    };
    if let Some(e) = a.episodes {
        hyper.episodes = e;
    }
    if let Some(s) = a.seed {
        hyper.seed = s;
    }
    hyper.validate().map_err(CliError::usage)?;
    let reward = a.reward.choice(hyper.seed).resolve(&task, catalog)?;
    let request = TrainRequest {
        algo: ALGO_MPDQN.into(),
        task,
        reward,
        hyper,
        baseline: BaselineConfig::default(),
    };
    let mut progress = progress_printer(a.quiet, request.episodes(), err);
    let summary = app::train(&a.out, catalog, &request, &mut progress)?;
    print_json(out, &summary)
}

fn baseline(catalog: &MaterialCatalog, a: BaselineArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let task = task_with_mu(&a.task, a.mu)?;
    let mut config: BaselineConfig = match &a.config {
        Some(p) => read_json_file(p)?,
        None => BaselineConfig::default(),
    };
    if let Some(e) = a.episodes {
        config.episodes = e;
    }
    if let Some(s) = a.steps {
        config.steps_per_episode = s;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    config.validate().map_err(CliError::usage)?;
    let reward = a.reward.choice(config.seed).resolve(&task, catalog)?;
    let request = TrainRequest {
        algo: ALGO_BASELINE.into(),
        task,
        reward,
        hyper: Hyperparameters::default(),
        baseline: config,
    };
    let mut progress = progress_printer(a.quiet, request.episodes(), err);
    let summary = app::train(&a.out, catalog, &request, &mut progress)?;
    print_json(out, &summary)
}

fn whatif(catalog: &MaterialCatalog, a: WhatIfArgs, out: &mut dyn Write) -> CliResult {
    if a.layer == 0 {
        return Err(CliError::Usage("--layer is one-based".into()));
    }
    let run = load_agent_run(&a.run, a.checkpoint.into()).map_err(CliError::usage)?;
    let alternative = match (a.material, a.thickness, a.terminate) {
        (_, _, true) => Action::Terminate,
        (Some(material), Some(thickness), false) => Action::Place { material, thickness },
        _ => return Err(CliError::Usage("give --material with --thickness, or --terminate".into())),
    };
    let record = what_if(
        &run.bundle,
        &run.task,
        catalog,
        run.config.reward,
        run.hyper.gamma,
        run.hyper.forbid_repeat_materials,
        a.layer - 1,
        alternative,
    )?;
    print_json(out, &record)
}

#[derive(Serialize)]
struct RatioSummary {
    final_mean: f64,
    final_std: f64,
}

#[derive(Serialize)]
struct AnalysisOutput {
    task_id: String,
    episodes: usize,
    best_reward: f64,
    best_objective: f64,
    greedy_design: Vec<optistack_core::optics::Layer>,
    greedy_reward: f64,
    greedy_q_estimates: Vec<f64>,
    greedy_returns: Vec<f64>,
    ratio_n: Option<RatioSummary>,
    ratio_p: Option<RatioSummary>,
    ratio_both: Option<RatioSummary>,
    random_convexity_baseline: f64,
    what_if_cells: usize,
}

fn analyze(catalog: &MaterialCatalog, a: AnalyzeArgs, out: &mut dyn Write) -> CliResult {
    let run = load_agent_run(&a.run, a.checkpoint.into()).map_err(CliError::usage)?;
    let metrics: Vec<EpisodeMetrics> = read_metrics(&a.run, None)?;
    let gamma = run.hyper.gamma;
    let forbid = run.hyper.forbid_repeat_materials;
    let reward = run.config.reward;
    let rollout = greedy_rollout(&run.bundle, &run.task, catalog, reward, gamma, forbid, None)?;
    let cells = what_if_table(&run.bundle, &run.task, catalog, reward, gamma, forbid)?;
    let mut csv = Vec::new();
    write_what_if_csv(&cells, &mut csv)?;
    let last = metrics.last();
    let summary = |f: fn(&EpisodeMetrics) -> (f64, f64)| {
        last.map(|m| {
            let (final_mean, final_std) = f(m);
            RatioSummary { final_mean, final_std }
        })
    };
    let output = AnalysisOutput {
        task_id: run.task.id.clone(),
        episodes: metrics.len(),
        best_reward: last.map_or(0.0, |m| m.best_reward),
        best_objective: last.map_or(f64::NEG_INFINITY, |m| m.best_objective),
        greedy_design: rollout.design,
        greedy_reward: rollout.final_reward,
        greedy_q_estimates: rollout.q_estimates,
        greedy_returns: rollout.returns,
        ratio_n: summary(|m| (m.ratio_n_mean, m.ratio_n_std)),
        ratio_p: summary(|m| (m.ratio_p_mean, m.ratio_p_std)),
        ratio_both: summary(|m| (m.ratio_both_mean, m.ratio_both_std)),
        random_convexity_baseline: random_convexity_baseline(run.task.material_ids.len(), 100_000, 0),
        what_if_cells: cells.len(),
    };
    match a.out {
        Some(p) => {
            std::fs::write(p, csv)?;
            print_json(out, &output)
        }
        None => {
            print_json(out, &output)?;
            out.write_all(&csv)?;
            Ok(())
        }
    }
}

fn serve(catalog: MaterialCatalog, a: ServeArgs, err: &mut dyn Write) -> CliResult {
    let data_dir = a
        .data_dir
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("optistack-data"));
    let mut tasks = Vec::new();
    for p in &a.tasks {
        let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
        tasks.push(TaskSpec::from_json(&text).map_err(CliError::usage)?);
    }
    let router = service::build(ServiceConfig {
        data_dir: data_dir.clone(),
        catalog,
        tasks,
        assets: a.assets,
    })?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.bind)
            .await
            .map_err(|e| CliError::Runtime(format!("cannot bind {}: {e}", a.bind)))?;
        let _ = writeln!(err, "serving on http://{} with data in {}", listener.local_addr()?, data_dir.display());
        axum::serve(listener, router)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

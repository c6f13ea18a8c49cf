//! Operations shared by the command line and the HTTP service.

use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use optistack_core::agent::rundir::{
    read_config, RunConfig, RunWriter, BEST_DESIGN_FILE, CHECKPOINT_BEST, CHECKPOINT_LAST, CONFIG_FILE,
    METRICS_FILE,
};
use optistack_core::agent::{
    run_training, DesignRecord, EpisodeMetrics, Hyperparameters, NetworkBundle, TrainingObserver,
};
use optistack_core::baseline::{run_discrete_dqn, BaselineConfig, BaselineEpisodeMetrics};
use optistack_core::nn::checkpoint;
use optistack_core::objective::{calibrate_alpha, RewardParams, TaskSpec, DEFAULT_BETA1, DEFAULT_BETA2};
use optistack_core::optics::{Layer, MaterialCatalog};
use optistack_core::{Error, Result};

pub const ALGO_MPDQN: &str = "mpdqn";
pub const ALGO_BASELINE: &str = "dqn_discrete";

/// Random designs drawn when calibrating the reward.
pub const CALIBRATION_SAMPLES: usize = 1000;

/// A builtin task id or a path to a task file.
pub fn resolve_task(spec: &str) -> Result<TaskSpec> {
    if let Some(task) = TaskSpec::builtin(spec) {
        return Ok(task);
    }
    let path = Path::new(spec);
    if path.is_file() {
        return TaskSpec::from_json(&std::fs::read_to_string(path)?);
    }
    Err(Error::InvalidInput(format!(
        "unknown task '{spec}': expected one of {:?} or a task file",
        TaskSpec::builtin_ids()
    )))
}

pub fn resolve_catalog(path: Option<&Path>) -> Result<MaterialCatalog> {
    match path {
        Some(p) => MaterialCatalog::from_json(&std::fs::read_to_string(p)?),
        None => Ok(MaterialCatalog::default()),
    }
}

/// How to pick the reward scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RewardChoice {
    Alpha { alpha: f64 },
    Calibrate { samples: usize, seed: u64 },
}

impl RewardChoice {
    pub fn resolve(&self, task: &TaskSpec, catalog: &MaterialCatalog) -> Result<RewardParams> {
        match *self {
            RewardChoice::Alpha { alpha } => RewardParams::from_alpha(alpha),
            RewardChoice::Calibrate { samples, seed } => {
                calibrate_alpha(task, catalog, samples, DEFAULT_BETA1, DEFAULT_BETA2, seed)
            }
        }
    }
}

/// Reflectivity of a design under a task's grid, with its score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub task_id: String,
    pub wavelengths: Vec<f64>,
    pub angles: Vec<f64>,
    /// Angle-major, one value per grid point.
    pub reflectivity: Vec<f64>,
    pub target: Vec<f64>,
    pub objective: f64,
    pub reward: f64,
    pub total_thickness: f64,
}

/// Simulates `layers` on the task's substrate; thickness bounds are not enforced.
pub fn simulate(
    task: &TaskSpec,
    catalog: &MaterialCatalog,
    layers: &[Layer],
    reward: &RewardParams,
) -> Result<SimulationReport> {
    for (i, l) in layers.iter().enumerate() {
        catalog.material(l.material)?;
        if !(l.thickness.is_finite() && l.thickness >= 0.0) {
            return Err(Error::InvalidInput(format!("layer {i}: thickness must be finite and non-negative")));
        }
    }
    if layers.len() > task.layer_budget {
        return Err(Error::InvalidInput(format!(
            "{} layers exceed the budget of {}",
            layers.len(),
            task.layer_budget
        )));
    }
    let ev = task.evaluate(catalog, layers, reward)?;
    Ok(SimulationReport {
        task_id: task.id.clone(),
        wavelengths: task.grid.wavelengths().to_vec(),
        angles: task.grid.angles().to_vec(),
        reflectivity: ev.reflectivity,
        target: task.target.clone(),
        objective: ev.objective,
        reward: ev.reward,
        total_thickness: layers.iter().map(|l| l.thickness).sum(),
    })
}

/// Everything needed to start a training run.
#[derive(Debug, Clone)]
pub struct TrainRequest {
    pub algo: String,
    pub task: TaskSpec,
    pub reward: RewardParams,
    pub hyper: Hyperparameters,
    pub baseline: BaselineConfig,
}

impl TrainRequest {
    pub fn seed(&self) -> u64 {
        if self.algo == ALGO_BASELINE {
            self.baseline.seed
        } else {
            self.hyper.seed
        }
    }

    pub fn episodes(&self) -> usize {
        if self.algo == ALGO_BASELINE {
            self.baseline.episodes
        } else {
            self.hyper.episodes
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.algo.as_str() {
            ALGO_MPDQN => self.hyper.validate(),
            ALGO_BASELINE => self.baseline.validate(),
            other => Err(Error::InvalidInput(format!("unknown algorithm '{other}'"))),
        }
    }
}

/// Per-episode progress common to both algorithms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub episode: usize,
    pub best_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub algo: String,
    pub episodes_run: usize,
    pub sim_calls: u64,
    pub best: Option<DesignRecord>,
}

struct Tee<'a> {
    writer: &'a mut RunWriter,
    progress: &'a mut dyn FnMut(Progress) -> ControlFlow<()>,
}

impl TrainingObserver for Tee<'_> {
    fn on_episode(
        &mut self,
        metrics: &EpisodeMetrics,
        bundle: &NetworkBundle,
        new_best: Option<&DesignRecord>,
    ) -> Result<ControlFlow<()>> {
        if self.writer.on_episode(metrics, bundle, new_best)?.is_break() {
            return Ok(ControlFlow::Break(()));
        }
        Ok((self.progress)(Progress {
            episode: metrics.episode,
            best_reward: metrics.best_reward,
        }))
    }
}

/// Trains into `dir` using the run-directory layout.
pub fn train(
    dir: &Path,
    catalog: &MaterialCatalog,
    request: &TrainRequest,
    progress: &mut dyn FnMut(Progress) -> ControlFlow<()>,
) -> Result<TrainSummary> {
    request.validate()?;
    if request.algo == ALGO_BASELINE {
        let config = RunConfig::new(ALGO_BASELINE, &request.task, &request.baseline, request.reward, request.baseline.seed)?;
        let mut writer = RunWriter::create(dir, &config)?;
        let result = run_discrete_dqn(&request.task, catalog, request.reward, &request.baseline, &mut |m: &BaselineEpisodeMetrics| {
            writer.append_metrics(m)?;
            Ok(progress(Progress {
                episode: m.episode,
                best_reward: m.best_reward,
            }))
        })?;
        writer.write_best(&result.best)?;
        checkpoint::save(&result.q_net, 0, &dir.join(CHECKPOINT_LAST), "q_net")?;
        return Ok(TrainSummary {
            algo: ALGO_BASELINE.into(),
            episodes_run: result.metrics.len(),
            sim_calls: result.sim_calls,
            best: Some(result.best),
        });
    }
    let config = RunConfig::new(ALGO_MPDQN, &request.task, &request.hyper, request.reward, request.hyper.seed)?;
    let mut writer = RunWriter::create(dir, &config)?;
    let result = {
        let mut tee = Tee {
            writer: &mut writer,
            progress,
        };
        run_training(&request.task, catalog, request.reward, &request.hyper, &mut tee)?
    };
    writer.finish(&result)?;
    Ok(TrainSummary {
        algo: ALGO_MPDQN.into(),
        episodes_run: result.metrics.len(),
        sim_calls: result.sim_calls,
        best: result.best,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointChoice {
    #[default]
    Last,
    Best,
}

impl CheckpointChoice {
    pub fn dir_name(self) -> &'static str {
        match self {
            CheckpointChoice::Last => CHECKPOINT_LAST,
            CheckpointChoice::Best => CHECKPOINT_BEST,
        }
    }
}

/// A finished agent run reopened for analysis.
#[derive(Debug)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub config: RunConfig,
    pub task: TaskSpec,
    pub hyper: Hyperparameters,
    pub bundle: NetworkBundle,
}

pub fn load_agent_run(dir: &Path, which: CheckpointChoice) -> Result<LoadedRun> {
    let config = read_config(dir)?;
    if config.algo != ALGO_MPDQN {
        return Err(Error::InvalidInput(format!(
            "run in {} was trained with '{}'; analysis needs an '{ALGO_MPDQN}' run",
            dir.display(),
            config.algo
        )));
    }
    let task = config.task_spec()?;
    let hyper: Hyperparameters = serde_json::from_value(config.hyper.clone())?;
    let bundle = NetworkBundle::load(&dir.join(which.dir_name()))?;
    if bundle.layer_budget() != task.layer_budget || bundle.materials() != task.material_ids.len() {
        return Err(Error::Checkpoint("checkpoint shape does not match the run's task".into()));
    }
    Ok(LoadedRun {
        dir: dir.to_path_buf(),
        config,
        task,
        hyper,
        bundle,
    })
}

/// Paths of a run's artifacts, relative to the run store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub config: String,
    pub metrics: String,
    pub best_design: String,
    pub checkpoint_best: String,
    pub checkpoint_last: String,
}

impl Artifacts {
    pub fn under(prefix: &str) -> Self {
        Artifacts {
            config: format!("{prefix}/{CONFIG_FILE}"),
            metrics: format!("{prefix}/{METRICS_FILE}"),
            best_design: format!("{prefix}/{BEST_DESIGN_FILE}"),
            checkpoint_best: format!("{prefix}/{CHECKPOINT_BEST}"),
            checkpoint_last: format!("{prefix}/{CHECKPOINT_LAST}"),
        }
    }
}

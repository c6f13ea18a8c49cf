//! Run directory layout:
//!
//! ```text
//! config.json        task, hyperparameters, reward parameters, seed, algorithm
//! metrics.jsonl      one JSON record per episode
//! checkpoint_best/   networks when the best design was found
//! checkpoint_last/   networks after the final episode
//! best_design.json   best layers, reflectivity and rewards
//! ```

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::bundle::NetworkBundle;
use super::train::{DesignRecord, EpisodeMetrics, RunResult, TrainingObserver};
use crate::objective::{RewardParams, TaskSpec};
use crate::Result;

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const BEST_DESIGN_FILE: &str = "best_design.json";
pub const CHECKPOINT_BEST: &str = "checkpoint_best";
pub const CHECKPOINT_LAST: &str = "checkpoint_last";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// `"mpdqn"` or `"dqn_discrete"`.
    pub algo: String,
    /// The task in its file format.
    pub task: serde_json::Value,
    pub hyper: serde_json::Value,
    pub reward: RewardParams,
    pub seed: u64,
}

impl RunConfig {
    pub fn new<H: Serialize>(algo: &str, task: &TaskSpec, hyper: &H, reward: RewardParams, seed: u64) -> Result<Self> {
        Ok(RunConfig {
            algo: algo.into(),
            task: serde_json::from_str(&task.to_json())?,
            hyper: serde_json::to_value(hyper)?,
            reward,
            seed,
        })
    }

    pub fn task_spec(&self) -> Result<TaskSpec> {
        TaskSpec::from_json(&self.task.to_string())
    }
}

/// Streams a run to disk as it trains.
#[derive(Debug)]
pub struct RunWriter {
    dir: PathBuf,
    metrics: BufWriter<File>,
}

impl RunWriter {
    /// Creates `dir` and writes `config.json`; an existing metrics file is truncated.
    pub fn create(dir: &Path, config: &RunConfig) -> Result<Self> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(config)?)?;
        let metrics = BufWriter::new(File::create(dir.join(METRICS_FILE))?);
        Ok(RunWriter {
            dir: dir.to_path_buf(),
            metrics,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn append_metrics<M: Serialize>(&mut self, record: &M) -> Result<()> {
        serde_json::to_writer(&mut self.metrics, record)?;
        self.metrics.write_all(b"\n")?;
        self.metrics.flush()?;
        Ok(())
    }

    pub fn write_best(&self, best: &DesignRecord) -> Result<()> {
        write_atomic(&self.dir.join(BEST_DESIGN_FILE), &serde_json::to_vec_pretty(best)?)
    }

    /// Writes `checkpoint_last/` and the final best design.
    pub fn finish(mut self, result: &RunResult) -> Result<()> {
        self.metrics.flush()?;
        result.bundle.save(&self.dir.join(CHECKPOINT_LAST))?;
        if let Some(best) = &result.best {
            self.write_best(best)?;
        }
        if let Some(b) = &result.best_bundle {
            b.save(&self.dir.join(CHECKPOINT_BEST))?;
        }
        Ok(())
    }
}

impl TrainingObserver for RunWriter {
    fn on_episode(
        &mut self,
        metrics: &EpisodeMetrics,
        bundle: &NetworkBundle,
        new_best: Option<&DesignRecord>,
    ) -> Result<ControlFlow<()>> {
        self.append_metrics(metrics)?;
        if let Some(best) = new_best {
            self.write_best(best)?;
            bundle.save(&self.dir.join(CHECKPOINT_BEST))?;
        }
        Ok(ControlFlow::Continue(()))
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn read_config(dir: &Path) -> Result<RunConfig> {
    Ok(serde_json::from_str(&fs::read_to_string(dir.join(CONFIG_FILE))?)?)
}

pub fn read_best(dir: &Path) -> Result<DesignRecord> {
    Ok(serde_json::from_str(&fs::read_to_string(dir.join(BEST_DESIGN_FILE))?)?)
}

/// Metric records with `episode > after`; a torn final line is ignored.
pub fn read_metrics<M: DeserializeOwned>(dir: &Path, after: Option<usize>) -> Result<Vec<M>> {
    let path = dir.join(METRICS_FILE);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        let Ok(value) = serde_json::from_str::<serde_json::Value>(&line) else {
            continue;
        };
        let episode = value.get("episode").and_then(|e| e.as_u64()).map(|e| e as usize);
        if let (Some(after), Some(e)) = (after, episode) {
            if e <= after {
                continue;
            }
        }
        out.push(serde_json::from_value(value)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{run_training, Hyperparameters};
    use crate::optics::MaterialCatalog;

    #[test]
    fn writes_the_documented_layout() {
        let dir = tempfile::tempdir().unwrap();
        let task = TaskSpec::builtin("task2").unwrap();
        let cat = MaterialCatalog::default();
        let reward = RewardParams::from_alpha(18.42).unwrap();
        let hyper = Hyperparameters {
            episodes: 12,
            batch_size: 8,
            replay_min_fill: 8,
            replay_capacity: 100,
            hidden_sizes: vec![8],
            seed: 4,
            ..Default::default()
        };
        let config = RunConfig::new("mpdqn", &task, &hyper, reward, hyper.seed).unwrap();
        let mut writer = RunWriter::create(dir.path(), &config).unwrap();
        let result = run_training(&task, &cat, reward, &hyper, &mut writer).unwrap();
        writer.finish(&result).unwrap();

        for f in [CONFIG_FILE, METRICS_FILE, BEST_DESIGN_FILE] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        for d in [CHECKPOINT_BEST, CHECKPOINT_LAST] {
            assert!(dir.path().join(d).join("bundle.json").is_file(), "{d}");
        }
        let back = read_config(dir.path()).unwrap();
        assert_eq!(back, config);
        assert_eq!(back.task_spec().unwrap(), task);
        let metrics: Vec<EpisodeMetrics> = read_metrics(dir.path(), None).unwrap();
        assert_eq!(metrics, result.metrics);
        let tail: Vec<EpisodeMetrics> = read_metrics(dir.path(), Some(9)).unwrap();
        assert_eq!(tail.len(), 2);
        assert_eq!(read_best(dir.path()).unwrap(), result.best.unwrap());
        let last = NetworkBundle::load(&dir.path().join(CHECKPOINT_LAST)).unwrap();
        assert_eq!(last.q_net, result.bundle.q_net);
    }
}

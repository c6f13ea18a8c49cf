//! Filesystem run store: one directory per run plus an append-only journal of
//! run-state changes, replayed on startup.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::app::Artifacts;
use optistack_core::Result;

pub const DATA_DIR_ENV: &str = "OPTISTACK_DATA_DIR";
pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const RUNS_DIR: &str = "runs";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Queued,
    Running,
    Finished,
    Failed,
}

impl RunStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, RunStatus::Finished | RunStatus::Failed)
    }

    fn rank(self) -> u8 {
        match self {
            RunStatus::Queued => 0,
            RunStatus::Running => 1,
            RunStatus::Finished | RunStatus::Failed => 2,
        }
    }

    /// Queued, then running, then one terminal state.
    pub fn may_become(self, next: RunStatus) -> bool {
        !self.is_terminal() && next.rank() >= self.rank()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHandle {
    pub run_id: String,
    pub status: RunStatus,
    pub task_id: String,
    pub algo: String,
    pub episodes: usize,
    pub seed: u64,
    /// Last completed episode.
    pub episode: Option<usize>,
    pub best_reward: Option<f64>,
    pub error: Option<String>,
    pub artifacts: Artifacts,
}

impl RunHandle {
    pub fn queued(run_id: &str, task_id: &str, algo: &str, episodes: usize, seed: u64) -> Self {
        RunHandle {
            run_id: run_id.into(),
            status: RunStatus::Queued,
            task_id: task_id.into(),
            algo: algo.into(),
            episodes,
            seed,
            episode: None,
            best_reward: None,
            error: None,
            artifacts: Artifacts::under(&format!("{RUNS_DIR}/{run_id}")),
        }
    }
}

/// Append-only record of every run-state change.
#[derive(Debug, Clone)]
pub struct Journal {
    path: PathBuf,
}

impl Journal {
    pub fn new(data_dir: &Path) -> Self {
        Journal {
            path: data_dir.join(JOURNAL_FILE),
        }
    }

    /// One line per call, written with a single `write` so concurrent appenders do not interleave.
    pub fn append(&self, handle: &RunHandle) -> Result<()> {
        let mut line = serde_json::to_vec(handle)?;
        line.push(b'\n');
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        f.write_all(&line)?;
        f.sync_data()?;
        Ok(())
    }

    /// Latest state of each run in order of first appearance.
    pub fn replay(&self) -> Result<Vec<RunHandle>> {
        match fs::read(&self.path) {
            Ok(bytes) => Ok(parse_journal(&bytes)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(e) => Err(e.into()),
        }
    }

    /// Replays the journal; runs left unfinished by a previous process are marked failed.
    pub fn recover(&self) -> Result<Vec<RunHandle>> {
        let mut runs = self.replay()?;
        for h in &mut runs {
            if !h.status.is_terminal() {
                h.status = RunStatus::Failed;
                h.error = Some("interrupted by service restart".into());
                self.append(h)?;
            }
        }
        Ok(runs)
    }
}

/// Folds journal lines into the latest state per run. Unreadable lines, such as a
/// torn final write, and malformed run ids are skipped.
pub fn parse_journal(bytes: &[u8]) -> Vec<RunHandle> {
    let mut order: Vec<String> = Vec::new();
    let mut latest = HashMap::new();
    for line in bytes.split(|&b| b == b'\n') {
        let Ok(h) = serde_json::from_slice::<RunHandle>(line) else {
            continue;
        };
        // ids name directories; anything not minted by `run_id` is ignored
        if parse_run_number(&h.run_id).is_none() {
            continue;
        }
        if !latest.contains_key(&h.run_id) {
            order.push(h.run_id.clone());
        }
        latest.insert(h.run_id.clone(), h);
    }
    order.into_iter().filter_map(|id| latest.remove(&id)).collect()
}

pub fn run_dir(data_dir: &Path, run_id: &str) -> PathBuf {
    data_dir.join(RUNS_DIR).join(run_id)
}

/// `run-000001`, `run-000002`, ...
pub fn run_id(n: u64) -> String {
    format!("run-{n:06}")
}

pub fn parse_run_number(id: &str) -> Option<u64> {
    let digits = id.strip_prefix("run-")?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_transitions_are_monotone() {
        use RunStatus::*;
        assert!(Queued.may_become(Running));
        assert!(Running.may_become(Finished));
        assert!(Queued.may_become(Failed));
        assert!(!Running.may_become(Queued));
        assert!(!Finished.may_become(Running));
        assert!(!Failed.may_become(Finished));
    }

    #[test]
    fn replay_keeps_latest_state_and_recovers() {
        let dir = tempfile::tempdir().unwrap();
        let j = Journal::new(dir.path());
        let mut a = RunHandle::queued(&run_id(1), "task2", "mpdqn", 10, 0);
        j.append(&a).unwrap();
        let b = RunHandle::queued(&run_id(2), "task1", "mpdqn", 5, 1);
        j.append(&b).unwrap();
        a.status = RunStatus::Finished;
        a.best_reward = Some(0.5);
        j.append(&a).unwrap();
        let runs = j.replay().unwrap();
        assert_eq!(runs.len(), 2);
        assert_eq!(runs[0], a);
        let runs = j.recover().unwrap();
        assert_eq!(runs[1].status, RunStatus::Failed);
        assert_eq!(j.replay().unwrap()[1].status, RunStatus::Failed);
        assert_eq!(parse_run_number(&run_id(42)), Some(42));
    }

    #[test]
    fn torn_lines_and_foreign_ids_are_skipped() {
        let good = serde_json::to_string(&RunHandle::queued(&run_id(3), "task2", "mpdqn", 1, 0)).unwrap();
        let evil = good.replace("run-000003", "../../etc");
        let mut bytes = format!("{good}\n{evil}\n").into_bytes();
        bytes.extend_from_slice(&[0xff, 0xfe, b'\n']);
        bytes.extend_from_slice(&good.as_bytes()[..20]);
        let runs = parse_journal(&bytes);
        assert_eq!(runs.len(), 1);
        assert_eq!(runs[0].run_id, "run-000003");
        assert_eq!(parse_run_number("run-+5"), None);
        assert_eq!(parse_run_number("run-"), None);
    }
}

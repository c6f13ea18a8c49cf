//! Multi-pass deep Q-learning over the layer-stacking process.
//!
//! An actor network proposes one thickness per material; a Q-network scores
//! every discrete option in a separate pass whose action-parameter input holds
//! only that option's thickness, so each score ignores the other proposals.

mod bundle;
mod replay;
pub mod rundir;
mod train;

use serde::{Deserialize, Serialize};

pub use bundle::{greedy_index, Decision, NetworkBundle, QInput, TrainStats};
pub use replay::{softmax_probabilities, ReplayMemory, Transition};
pub use train::{
    run_training, DesignRecord, EpisodeMetrics, RunResult, TrainingObserver, TOP_DESIGNS,
};

use crate::{Error, Result};

/// How the actor's raw outputs become thicknesses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorHead {
    /// Logistic output mapped affinely onto `[t_min, t_max]`.
    #[default]
    Sigmoid,
    /// Linear output `o`, thickness fraction `clamp((o + 1) / 2)`; ascent
    /// gradients are scaled by the remaining room toward the bound they push at.
    Inverting,
}

impl ActorHead {
    pub(crate) fn activation(self) -> crate::nn::Activation {
        match self {
            ActorHead::Sigmoid => crate::nn::Activation::Sigmoid,
            ActorHead::Inverting => crate::nn::Activation::Identity,
        }
    }

    /// Position inside the thickness range, in `[0, 1]`.
    pub(crate) fn fraction(self, o: f32) -> f32 {
        match self {
            ActorHead::Sigmoid => o,
            ActorHead::Inverting => ((o + 1.0) * 0.5).clamp(0.0, 1.0),
        }
    }

    /// Ascent gradient with respect to the raw output, given it with respect to the fraction.
    pub(crate) fn output_gradient(self, o: f32, d_fraction: f32) -> f32 {
        match self {
            ActorHead::Sigmoid => d_fraction,
            ActorHead::Inverting => {
                let g = 0.5 * d_fraction;
                if g > 0.0 {
                    g * (1.0 - o) * 0.5
                } else {
                    g * (o + 1.0) * 0.5
                }
            }
        }
    }
}

/// Learner settings. Every field has a default, so partial JSON is accepted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    pub gamma: f64,
    pub learning_rate: f64,
    /// Actor step size; the shared rate when absent.
    pub actor_learning_rate: Option<f64>,
    pub batch_size: usize,
    /// Polyak factor for the target networks.
    pub tau: f64,
    /// Episodes between target-network updates.
    pub target_update_period: usize,
    pub epsilon_decay: f64,
    /// Exploration floor; derived from the layer budget when absent.
    pub epsilon_final: Option<f64>,
    pub episodes: usize,
    pub replay_capacity: usize,
    pub replay_min_fill: usize,
    pub updates_per_episode: usize,
    /// Add the discounted target estimate to non-terminal transition targets.
    pub bootstrap: bool,
    pub forbid_repeat_materials: bool,
    pub hidden_sizes: Vec<usize>,
    pub actor_head: ActorHead,
    /// Episodes between replay-wide loss evaluations; 0 disables them.
    pub monitor_every: usize,
    pub seed: u64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            gamma: 0.95,
            learning_rate: 1e-3,
            actor_learning_rate: None,
            batch_size: 128,
            tau: 0.01,
            target_update_period: 10,
            epsilon_decay: 0.997,
            epsilon_final: None,
            episodes: 10_000,
            replay_capacity: 5000,
            replay_min_fill: 500,
            updates_per_episode: 1,
            bootstrap: false,
            forbid_repeat_materials: true,
            hidden_sizes: vec![256, 256],
            actor_head: ActorHead::Inverting,
            monitor_every: 20,
            seed: 0,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x.is_finite() && (0.0..=1.0).contains(&x);
        if !unit(self.gamma) {
            return Err(Error::config("gamma must lie in [0, 1]"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        if let Some(a) = self.actor_learning_rate {
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::config("actor learning rate must be positive"));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !unit(self.tau) {
            return Err(Error::config("tau must lie in [0, 1]"));
        }
        if self.target_update_period == 0 {
            return Err(Error::config("target update period must be positive"));
        }
        if !(self.epsilon_decay.is_finite() && self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0)
        {
            return Err(Error::config("epsilon decay must lie in (0, 1]"));
        }
        if let Some(f) = self.epsilon_final {
            if !unit(f) {
                return Err(Error::config("epsilon floor must lie in [0, 1]"));
            }
        }
        if self.replay_capacity == 0 || self.replay_min_fill > self.replay_capacity {
            return Err(Error::config(
                "replay capacity must be positive and at least the minimum fill",
            ));
        }
        if self.batch_size > self.replay_capacity {
            return Err(Error::config("batch size exceeds replay capacity"));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::config("hidden layer sizes must be positive"));
        }
        Ok(())
    }

    pub fn epsilon_floor(&self, layer_budget: usize) -> f64 {
        self.epsilon_final
            .unwrap_or_else(|| epsilon_final(layer_budget))
    }
}

/// Exploration floor at which a whole `L`-step episode is greedy with probability 0.3.
pub fn epsilon_final(layer_budget: usize) -> f64 {
    1.0 - 0.3f64.powf(1.0 / layer_budget.max(1) as f64)
}

/// `max(floor, decay^episode)`.
pub fn epsilon_schedule(episode: usize, decay: f64, floor: f64) -> f64 {
    let e = i32::try_from(episode).unwrap_or(i32::MAX);
    decay.powi(e).max(floor).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floors_match_closed_form() {
        assert!((epsilon_final(8) - 0.1397).abs() < 1e-4);
        assert!((epsilon_final(34) - 0.0348).abs() < 1e-4);
        for l in [1, 8, 34] {
            assert!(((1.0 - epsilon_final(l)).powi(l as i32) - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn schedule_starts_at_one_and_never_increases() {
        let floor = epsilon_final(8);
        assert_eq!(epsilon_schedule(0, 0.997, floor), 1.0);
        let mut prev = 1.0;
        for e in 0..3000 {
            let eps = epsilon_schedule(e, 0.997, floor);
            assert!(eps <= prev && eps >= floor);
            prev = eps;
        }
        assert_eq!(prev, floor);
    }

    #[test]
    fn partial_json_takes_defaults() {
        let h: Hyperparameters = serde_json::from_str(r#"{"episodes": 100, "seed": 7}"#).unwrap();
        assert_eq!(h.episodes, 100);
        assert_eq!(h.batch_size, 128);
        assert!(h.validate().is_ok());
        assert!(serde_json::from_str::<Hyperparameters>(r#"{"episode": 1}"#).is_err());
        let bad = Hyperparameters {
            batch_size: 6000,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}

//! Discretized Q-learning baseline.
//!
//! The design has a fixed number of layers with thicknesses on a 0.1 nm grid.
//! Every step nudges one layer's thickness by one grid step or swaps its
//! material, and every step is simulated.

use std::ops::ControlFlow;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{DesignRecord, ReplayMemory};
use crate::nn::{Activation, Adam, Mlp};
use crate::objective::{RewardParams, TaskSpec};
use crate::optics::{Layer, MaterialCatalog};
use crate::{Error, Result};

/// Thickness moves per layer: one grid step up, one down.
pub const THICKNESS_MOVES: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub replay_min_fill: usize,
    pub tau: f64,
    /// Episodes between target-network updates.
    pub target_update_period: usize,
    pub epsilon_decay: f64,
    pub epsilon_final: f64,
    pub hidden_sizes: Vec<usize>,
    /// Grid spacing in nm.
    pub thickness_step: f64,
    /// Largest grid thickness in nm.
    pub thickness_max: f64,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            episodes: 200,
            steps_per_episode: 250,
            gamma: 0.95,
            learning_rate: 1e-3,
            batch_size: 128,
            replay_capacity: 5000,
            replay_min_fill: 500,
            tau: 0.01,
            target_update_period: 10,
            epsilon_decay: 0.97,
            epsilon_final: 0.05,
            hidden_sizes: vec![256, 256],
            thickness_step: 0.1,
            thickness_max: 150.0,
            seed: 0,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 || self.steps_per_episode == 0 {
            return Err(Error::config("episodes and steps must be positive"));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::config("gamma and tau must lie in [0, 1]"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.batch_size == 0
            || self.batch_size > self.replay_capacity
            || self.replay_min_fill > self.replay_capacity
        {
            return Err(Error::config("inconsistent batch and replay sizes"));
        }
        if self.target_update_period == 0 {
            return Err(Error::config("target update period must be positive"));
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0)
            || !(0.0..=1.0).contains(&self.epsilon_final)
        {
            return Err(Error::config("epsilon schedule out of range"));
        }
        if !(self.thickness_step > 0.0 && self.thickness_max >= 0.0) {
            return Err(Error::config("thickness grid must have a positive step"));
        }
        if self.grid_points() > u16::MAX as usize {
            return Err(Error::config("thickness grid too fine"));
        }
        Ok(())
    }

    /// Grid points including both ends (1501 for 0..=150 nm at 0.1 nm).
    pub fn grid_points(&self) -> usize {
        (self.thickness_max / self.thickness_step + 1e-9).floor() as usize + 1
    }

    pub fn epsilon(&self, episode: usize) -> f64 {
        self.epsilon_decay
            .powi(i32::try_from(episode).unwrap_or(i32::MAX))
            .max(self.epsilon_final)
    }
}

/// `L * (moves + |N| - 1)`.
pub fn action_count(layer_budget: usize, materials: usize) -> usize {
    layer_budget * (THICKNESS_MOVES + materials.saturating_sub(1))
}

/// A fixed-depth design on the thickness grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscreteDesign {
    /// Material slot (task order) per layer.
    pub slots: Vec<usize>,
    /// Grid index per layer.
    pub thickness_idx: Vec<u16>,
}

impl DiscreteDesign {
    pub fn random<R: Rng>(layers: usize, materials: usize, grid_points: usize, rng: &mut R) -> Self {
        let slots = (0..layers).map(|_| rng.gen_range(0..materials)).collect();
        let thickness_idx = (0..layers)
            .map(|_| rng.gen_range(0..grid_points) as u16)
            .collect();
        DiscreteDesign {
            slots,
            thickness_idx,
        }
    }

    /// Applies action `a`; thickness moves clamp to the grid.
    pub fn apply(&mut self, a: usize, materials: usize, grid_points: usize) -> Result<()> {
        let per = THICKNESS_MOVES + materials.saturating_sub(1);
        let layer = a / per;
        if layer >= self.slots.len() {
            return Err(Error::invalid(format!("action {a} out of range")));
        }
        let top = (grid_points - 1) as u16;
        match a % per {
            0 => self.thickness_idx[layer] = (self.thickness_idx[layer] + 1).min(top),
            1 => self.thickness_idx[layer] = self.thickness_idx[layer].saturating_sub(1),
            j => {
                let current = self.slots[layer];
                let target = j - THICKNESS_MOVES;
                self.slots[layer] = if target < current { target } else { target + 1 };
            }
        }
        Ok(())
    }

    pub fn layers(&self, task: &TaskSpec, step: f64) -> Vec<Layer> {
        self.slots
            .iter()
            .zip(&self.thickness_idx)
            .map(|(&s, &i)| Layer {
                material: task.material_ids[s],
                thickness: i as f64 * step,
            })
            .collect()
    }

    /// Reference indexes then `t / t_max`, like the sequential environment's state.
    pub fn encode(&self, reference_indexes: &[f64], step: f64, t_max: f64) -> Vec<f32> {
        self.slots
            .iter()
            .map(|&s| reference_indexes[s] as f32)
            .chain(
                self.thickness_idx
                    .iter()
                    .map(|&i| (i as f64 * step / t_max) as f32),
            )
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Sample {
    state: Vec<f32>,
    action: usize,
    reward: f64,
    next_state: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineEpisodeMetrics {
    pub episode: usize,
    pub epsilon: f64,
    pub mean_reward: f64,
    pub final_reward: f64,
    pub best_reward: f64,
    /// Summed squared TD error of the episode's last batch.
    pub q_loss: Option<f64>,
    pub sim_calls: u64,
}

#[derive(Debug, Clone)]
pub struct BaselineResult {
    pub best: DesignRecord,
    pub initial: DesignRecord,
    pub metrics: Vec<BaselineEpisodeMetrics>,
    pub q_net: Mlp<f32>,
    pub sim_calls: u64,
}

fn greedy(q: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = i;
        }
    }
    best
}

fn states_matrix<'a>(rows: impl Iterator<Item = &'a Vec<f32>>, n: usize, width: usize) -> Array2<f32> {
    let flat: Vec<f32> = rows.flat_map(|r| r.iter().copied()).collect();
    Array2::from_shape_vec((n, width), flat).expect("uniform state width")
}

/// Runs the baseline; `on_episode` may stop it early by returning `Break`.
pub fn run_discrete_dqn(
    task: &TaskSpec,
    catalog: &MaterialCatalog,
    reward: RewardParams,
    config: &BaselineConfig,
    on_episode: &mut dyn FnMut(&BaselineEpisodeMetrics) -> Result<ControlFlow<()>>,
) -> Result<BaselineResult> {
    config.validate()?;
    task.validate(Some(catalog))?;
    let n = task.material_ids.len();
    let l = task.layer_budget;
    let grid = config.grid_points();
    let actions = action_count(l, n);
    let refs = task
        .material_ids
        .iter()
        .map(|&id| catalog.reference_index(id))
        .collect::<Result<Vec<_>>>()?;
    let step = config.thickness_step;
    let t_max = task.t_max;

    let mut sizes = vec![2 * l];
    sizes.extend(&config.hidden_sizes);
    sizes.push(actions);
    let mut q_net = Mlp::<f32>::new(&sizes, Activation::Identity, config.seed)?;
    let mut target = q_net.clone();
    let mut opt = Adam::new(&q_net, config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xD1B5_4A32_D192_ED03);
    let mut memory: ReplayMemory<Sample> = ReplayMemory::new(config.replay_capacity, config.replay_min_fill);

    let mut sim_calls = 0u64;
    let simulate = |design: &DiscreteDesign, episode: usize, calls: &mut u64| {
        *calls += 1;
        evaluate_design(task, catalog, &reward, &design.layers(task, step), episode)
    };

    let start = DiscreteDesign::random(l, n, grid, &mut rng);
    let initial = simulate(&start, 0, &mut sim_calls)?;
    let mut best = initial.clone();
    let mut metrics = Vec::with_capacity(config.episodes);

    for episode in 0..config.episodes {
        let epsilon = config.epsilon(episode);
        let mut design = start.clone();
        let mut state = design.encode(&refs, step, t_max);
        let mut total = 0.0;
        let mut last = 0.0;
        let mut q_loss = None;
        for _ in 0..config.steps_per_episode {
            let a = if rng.gen::<f64>() < epsilon {
                rng.gen_range(0..actions)
            } else {
                greedy(&q_net.predict_one(&state)?)
            };
            design.apply(a, n, grid)?;
            let record = simulate(&design, episode, &mut sim_calls).map_err(|e| e.at_episode(episode))?;
            let next_state = design.encode(&refs, step, t_max);
            total += record.reward;
            last = record.reward;
            memory.push(Sample {
                state: std::mem::replace(&mut state, next_state.clone()),
                action: a,
                reward: record.reward,
                next_state,
            });
            if record.reward > best.reward {
                best = record;
            }
            if memory.len() >= config.replay_min_fill.max(config.batch_size) {
                let idx = memory.sample_uniform(config.batch_size, &mut rng)?;
                let batch: Vec<&Sample> = idx.iter().map(|&i| &memory.items()[i]).collect();
                let loss = dqn_update(&mut q_net, &target, &mut opt, &batch, config.gamma)
                    .map_err(|e| e.at_episode(episode))?;
                q_loss = Some(loss);
            }
        }
        if (episode + 1) % config.target_update_period == 0 {
            target.polyak_from(&q_net, config.tau as f32)?;
        }
        let m = BaselineEpisodeMetrics {
            episode,
            epsilon,
            mean_reward: total / config.steps_per_episode as f64,
            final_reward: last,
            best_reward: best.reward,
            q_loss,
            sim_calls,
        };
        let flow = on_episode(&m)?;
        metrics.push(m);
        if flow.is_break() {
            break;
        }
    }
    Ok(BaselineResult {
        best,
        initial,
        metrics,
        q_net,
        sim_calls,
    })
}

fn evaluate_design(
    task: &TaskSpec,
    catalog: &MaterialCatalog,
    reward: &RewardParams,
    layers: &[Layer],
    episode: usize,
) -> Result<DesignRecord> {
    let ev = task.evaluate(catalog, layers, reward)?;
    Ok(DesignRecord {
        episode,
        total_thickness: layers.iter().map(|l| l.thickness).sum(),
        layers: layers.to_vec(),
        reward: ev.reward,
        objective: ev.objective,
        unconstrained_reward: ev.unconstrained_reward,
        unconstrained_objective: ev.unconstrained_objective,
        reflectivity: ev.reflectivity,
    })
}

fn dqn_update(
    q_net: &mut Mlp<f32>,
    target: &Mlp<f32>,
    opt: &mut Adam<f32>,
    batch: &[&Sample],
    gamma: f64,
) -> Result<f64> {
    let width = batch[0].state.len();
    let s = states_matrix(batch.iter().map(|t| &t.state), batch.len(), width);
    let s2 = states_matrix(batch.iter().map(|t| &t.next_state), batch.len(), width);
    let next_q = target.predict(s2.view())?;
    let (out, cache) = q_net.forward(s.view())?;
    let mut grad = Array2::<f32>::zeros(out.dim());
    let mut loss = 0.0;
    for (j, t) in batch.iter().enumerate() {
        let max_next = next_q
            .row(j)
            .iter()
            .fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
        let y = t.reward + gamma * max_next;
        let diff = out[[j, t.action]] as f64 - y;
        loss += diff * diff;
        grad[[j, t.action]] = (2.0 * diff) as f32;
    }
    if !loss.is_finite() {
        return Err(Error::training(format!("non-finite baseline loss {loss}")));
    }
    let (g, _) = q_net.backward(&cache, grad.view());
    opt.step(q_net, &g)?;
    Ok(loss)
}

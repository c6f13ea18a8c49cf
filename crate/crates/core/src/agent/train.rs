use std::ops::ControlFlow;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bundle::NetworkBundle;
use super::replay::{ReplayMemory, Transition};
use super::{epsilon_schedule, Hyperparameters};
use crate::analysis::{convexity_ratios, replay_loss_stats, MaterialEstimate, WelfordStats};
use crate::env::{Action, DesignEnv};
use crate::objective::{RewardParams, TaskSpec};
use crate::optics::{Layer, MaterialCatalog};
use crate::{Error, Result};

/// Number of distinct best designs kept per run.
pub const TOP_DESIGNS: usize = 10;

/// Weight of the newest reward in the running average.
const RUNNING_WEIGHT: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRecord {
    pub episode: usize,
    pub layers: Vec<Layer>,
    pub reward: f64,
    pub objective: f64,
    pub unconstrained_reward: f64,
    pub unconstrained_objective: f64,
    pub total_thickness: f64,
    pub reflectivity: Vec<f64>,
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub epsilon: f64,
    pub steps: usize,
    pub reward: f64,
    pub objective: f64,
    /// Exponential moving average of the reward.
    pub running_reward: f64,
    pub best_reward: f64,
    pub best_objective: f64,
    pub total_thickness: f64,
    pub replay_size: usize,
    /// Summed squared TD error of the episode's last batch, before its update.
    pub q_loss: Option<f64>,
    pub actor_objective: Option<f64>,
    pub replay_loss_mean: Option<f64>,
    pub replay_loss_std: Option<f64>,
    pub ratio_n: f64,
    pub ratio_p: f64,
    pub ratio_both: f64,
    pub ratio_n_mean: f64,
    pub ratio_n_std: f64,
    pub ratio_p_mean: f64,
    pub ratio_p_std: f64,
    pub ratio_both_mean: f64,
    pub ratio_both_std: f64,
    pub sim_calls: u64,
}

/// Hooks into the training loop. Returning `Break` stops after the current episode.
pub trait TrainingObserver {
    fn on_episode(
        &mut self,
        _metrics: &EpisodeMetrics,
        _bundle: &NetworkBundle,
        _new_best: Option<&DesignRecord>,
    ) -> Result<ControlFlow<()>> {
        Ok(ControlFlow::Continue(()))
    }
}

impl TrainingObserver for () {}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub metrics: Vec<EpisodeMetrics>,
    pub best: Option<DesignRecord>,
    /// Distinct designs by descending reward, at most [`TOP_DESIGNS`].
    pub top_designs: Vec<DesignRecord>,
    pub bundle: NetworkBundle,
    /// Networks as they were when the best design was found.
    pub best_bundle: Option<NetworkBundle>,
    pub memory: ReplayMemory<Transition>,
    pub sim_calls: u64,
    pub stopped_early: bool,
}

impl RunResult {
    pub fn best_reward(&self) -> f64 {
        self.best.as_ref().map_or(0.0, |b| b.reward)
    }

    pub fn mean_top_thickness(&self) -> f64 {
        if self.top_designs.is_empty() {
            return 0.0;
        }
        self.top_designs.iter().map(|d| d.total_thickness).sum::<f64>()
            / self.top_designs.len() as f64
    }
}

fn encode_f32(values: Vec<f64>) -> Vec<f32> {
    values.into_iter().map(|x| x as f32).collect()
}

fn insert_top(top: &mut Vec<DesignRecord>, record: &DesignRecord) {
    if top.iter().any(|d| d.layers == record.layers) {
        return;
    }
    if top.len() == TOP_DESIGNS && top.last().is_some_and(|d| d.reward >= record.reward) {
        return;
    }
    let at = top.partition_point(|d| d.reward >= record.reward);
    top.insert(at, record.clone());
    top.truncate(TOP_DESIGNS);
}

/// Trains an actor/Q-network pair on `task` for `hyper.episodes` episodes, one
/// simulation per episode.
pub fn run_training(
    task: &TaskSpec,
    catalog: &MaterialCatalog,
    reward: RewardParams,
    hyper: &Hyperparameters,
    observer: &mut dyn TrainingObserver,
) -> Result<RunResult> {
    hyper.validate()?;
    let mut env = DesignEnv::new(task, catalog, reward, hyper.gamma)?
        .forbid_repeat_materials(hyper.forbid_repeat_materials);
    let n = task.material_ids.len();
    let mut bundle = NetworkBundle::new(
        task.layer_budget,
        n,
        task.t_min,
        task.t_max,
        &hyper.hidden_sizes,
        hyper.learning_rate,
        hyper.actor_learning_rate,
        hyper.actor_head,
        hyper.seed,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut memory = ReplayMemory::new(hyper.replay_capacity, hyper.replay_min_fill);
    let floor = hyper.epsilon_floor(task.layer_budget);
    let indexes = env.reference_indexes().to_vec();

    let mut metrics = Vec::with_capacity(hyper.episodes);
    let mut best: Option<DesignRecord> = None;
    let mut best_bundle = None;
    let mut top = Vec::new();
    let mut running = 0.0;
    let (mut wn, mut wp, mut wb) = (
        WelfordStats::default(),
        WelfordStats::default(),
        WelfordStats::default(),
    );
    let mut stopped_early = false;

    for episode in 0..hyper.episodes {
        let epsilon = epsilon_schedule(episode, hyper.epsilon_decay, floor);
        env.reset();
        let mut estimates = Vec::new();
        let mut pending = Vec::new();
        while !env.is_done() {
            let state = encode_f32(env.state().encode());
            let d = bundle
                .select_action(&state, &env.allowed_materials(), epsilon, &mut rng)
                .map_err(|e| e.at_episode(episode))?;
            estimates.push(
                (0..n)
                    .map(|k| MaterialEstimate {
                        q: d.q_values[k],
                        index: indexes[k],
                        path_length: indexes[k] * d.proposals[k],
                    })
                    .collect::<Vec<_>>(),
            );
            let action = if d.action == n {
                Action::Terminate
            } else {
                Action::Place {
                    material: task.material_ids[d.action],
                    thickness: d.thickness,
                }
            };
            let (next, terminal) = env.step(action).map_err(|e| e.at_episode(episode))?;
            pending.push(Transition {
                state,
                action: d.action,
                thickness: d.thickness,
                reward: 0.0,
                next_state: encode_f32(next.encode()),
                next_allowed: env.allowed_materials(),
                terminal,
            });
        }
        let outcome = env.finish().map_err(|e| e.at_episode(episode))?;
        for (mut t, r) in pending.into_iter().zip(&outcome.returns) {
            t.reward = *r;
            memory.push(t);
        }

        let mut q_loss = None;
        let mut actor_objective = None;
        if memory.len() >= hyper.replay_min_fill.max(hyper.batch_size) {
            for _ in 0..hyper.updates_per_episode {
                let idx = memory.sample_prioritized(hyper.batch_size, &mut rng)?;
                let batch: Vec<&Transition> = idx.iter().map(|&i| &memory.items()[i]).collect();
                let stats = bundle
                    .train_on_batch(&batch, hyper.gamma, hyper.bootstrap)
                    .map_err(|e| e.at_episode(episode))?;
                for (&i, &loss) in idx.iter().zip(&stats.refreshed_losses) {
                    memory.set_loss(i, loss);
                }
                q_loss = Some(stats.q_loss);
                actor_objective = Some(stats.actor_objective);
            }
        }
        if (episode + 1) % hyper.target_update_period == 0 {
            bundle.update_targets(hyper.tau)?;
        }

        let (mut loss_mean, mut loss_std) = (None, None);
        let monitor = hyper.monitor_every > 0
            && ((episode + 1) % hyper.monitor_every == 0 || episode + 1 == hyper.episodes);
        if monitor && !memory.is_empty() {
            let (m, s) = replay_loss_stats(&bundle, &memory, hyper.gamma, hyper.bootstrap)
                .map_err(|e| e.at_episode(episode))?;
            loss_mean = Some(m);
            loss_std = Some(s);
        }

        let ev = &outcome.evaluation;
        let record = DesignRecord {
            episode,
            total_thickness: outcome.layers.iter().map(|l| l.thickness).sum(),
            layers: outcome.layers.clone(),
            reward: ev.reward,
            objective: ev.objective,
            unconstrained_reward: ev.unconstrained_reward,
            unconstrained_objective: ev.unconstrained_objective,
            reflectivity: ev.reflectivity.clone(),
        };
        insert_top(&mut top, &record);
        let improved = best.as_ref().is_none_or(|b| record.reward > b.reward);
        if improved {
            best = Some(record);
            best_bundle = Some(bundle.clone());
        }
        let best_ref = best.as_ref().expect("best set after first episode");

        running = if episode == 0 {
            ev.reward
        } else {
            (1.0 - RUNNING_WEIGHT) * running + RUNNING_WEIGHT * ev.reward
        };
        let ratios = convexity_ratios(&estimates);
        wn.update(ratios.ratio_n);
        wp.update(ratios.ratio_p);
        wb.update(ratios.ratio_both);
        let m = EpisodeMetrics {
            episode,
            epsilon,
            steps: outcome.trace.len(),
            reward: ev.reward,
            objective: ev.objective,
            running_reward: running,
            best_reward: best_ref.reward,
            best_objective: best_ref.objective,
            total_thickness: outcome.layers.iter().map(|l| l.thickness).sum(),
            replay_size: memory.len(),
            q_loss,
            actor_objective,
            replay_loss_mean: loss_mean,
            replay_loss_std: loss_std,
            ratio_n: ratios.ratio_n,
            ratio_p: ratios.ratio_p,
            ratio_both: ratios.ratio_both,
            ratio_n_mean: wn.mean,
            ratio_n_std: wn.std(),
            ratio_p_mean: wp.mean,
            ratio_p_std: wp.std(),
            ratio_both_mean: wb.mean,
            ratio_both_std: wb.std(),
            sim_calls: env.sim_calls(),
        };
        let flow = observer
            .on_episode(&m, &bundle, improved.then_some(best_ref))
            .map_err(|e| e.at_episode(episode))?;
        metrics.push(m);
        if flow.is_break() {
            stopped_early = true;
            break;
        }
    }

    if metrics.is_empty() {
        return Err(Error::config("training needs at least one episode"));
    }
    Ok(RunResult {
        metrics,
        best,
        top_designs: top,
        bundle,
        best_bundle,
        memory,
        sim_calls: env.sim_calls(),
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_hyper(episodes: usize, seed: u64) -> Hyperparameters {
        Hyperparameters {
            episodes,
            seed,
            batch_size: 16,
            replay_capacity: 200,
            replay_min_fill: 32,
            hidden_sizes: vec![16, 16],
            monitor_every: 5,
            ..Default::default()
        }
    }

    fn setup() -> (TaskSpec, MaterialCatalog, RewardParams) {
        (
            TaskSpec::builtin("task2").unwrap(),
            MaterialCatalog::default(),
            RewardParams::from_alpha(18.42).unwrap(),
        )
    }

    #[test]
    fn one_simulation_per_episode_and_monotone_best() {
        let (task, cat, reward) = setup();
        let r = run_training(&task, &cat, reward, &small_hyper(60, 3), &mut ()).unwrap();
        assert_eq!(r.sim_calls, 60);
        assert_eq!(r.metrics.len(), 60);
        for w in r.metrics.windows(2) {
            assert!(w[1].best_reward >= w[0].best_reward);
            assert!(w[1].epsilon <= w[0].epsilon);
        }
        assert!(r.metrics.iter().any(|m| m.q_loss.is_some()));
        assert!(r.metrics[4].replay_loss_mean.is_some());
        assert!(r.metrics[5].replay_loss_mean.is_none());
        for m in &r.metrics {
            assert!(m.ratio_both <= m.ratio_n.min(m.ratio_p));
        }
        assert_eq!(r.best_reward(), r.top_designs[0].reward);
        assert!(r.top_designs.windows(2).all(|w| w[0].reward >= w[1].reward));
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let (task, cat, reward) = setup();
        let a = run_training(&task, &cat, reward, &small_hyper(40, 11), &mut ()).unwrap();
        let b = run_training(&task, &cat, reward, &small_hyper(40, 11), &mut ()).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.best, b.best);
        assert_eq!(a.bundle.q_net, b.bundle.q_net);
    }

    struct StopAt(usize);

    impl TrainingObserver for StopAt {
        fn on_episode(
            &mut self,
            m: &EpisodeMetrics,
            _: &NetworkBundle,
            _: Option<&DesignRecord>,
        ) -> Result<ControlFlow<()>> {
            Ok(if m.episode + 1 == self.0 {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            })
        }
    }

    #[test]
    fn observer_can_stop_training() {
        let (task, cat, reward) = setup();
        let r = run_training(&task, &cat, reward, &small_hyper(50, 1), &mut StopAt(7)).unwrap();
        assert!(r.stopped_early);
        assert_eq!(r.metrics.len(), 7);
        assert_eq!(r.sim_calls, 7);
    }

    #[test]
    fn top_designs_are_distinct_and_bounded() {
        let rec = |reward: f64, t: f64| DesignRecord {
            episode: 0,
            layers: vec![Layer { material: 1, thickness: t }],
            reward,
            objective: 0.0,
            unconstrained_reward: reward,
            unconstrained_objective: 0.0,
            total_thickness: t,
            reflectivity: vec![],
        };
        let mut top = Vec::new();
        for i in 0..30 {
            insert_top(&mut top, &rec(i as f64 / 30.0, i as f64));
            insert_top(&mut top, &rec(i as f64 / 30.0, i as f64));
        }
        assert_eq!(top.len(), TOP_DESIGNS);
        assert_eq!(top[0].total_thickness, 29.0);
        assert_eq!(top[9].total_thickness, 20.0);
    }
}

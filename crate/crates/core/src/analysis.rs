//! Post-hoc and in-training diagnostics: what-if rollouts, discrete convexity
//! of Q estimates over material characteristics, running statistics and
//! replay-wide loss monitoring.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{NetworkBundle, QInput, ReplayMemory, Transition};
use crate::env::{Action, DesignEnv};
use crate::objective::{RewardParams, TaskSpec};
use crate::optics::MaterialCatalog;
use crate::{Error, Result};

/// Second differences above `-CONVEXITY_TOLERANCE` count as non-negative.
pub const CONVEXITY_TOLERANCE: f64 = 1e-9;

/// Single-pass mean and sample variance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WelfordStats {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl WelfordStats {
    pub fn update(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Sample variance; zero below two observations.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }
}

/// One material's estimate at a visited state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialEstimate {
    pub q: f64,
    /// Real refractive index at the catalog reference wavelength.
    pub index: f64,
    /// `index * proposed thickness`, nm.
    pub path_length: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvexityRatios {
    pub ratio_n: f64,
    pub ratio_p: f64,
    pub ratio_both: f64,
    pub steps: usize,
    /// Fewer than three materials: every step is trivially convex.
    pub degenerate: bool,
}

/// All second differences of `values` are non-negative (within tolerance).
pub fn is_convex_sequence(values: &[f64]) -> bool {
    values
        .windows(3)
        .all(|w| w[2] - 2.0 * w[1] + w[0] >= -CONVEXITY_TOLERANCE)
}

fn convex_when_sorted_by(step: &[MaterialEstimate], key: impl Fn(&MaterialEstimate) -> f64) -> bool {
    let mut sorted = step.to_vec();
    sorted.sort_by(|a, b| key(a).total_cmp(&key(b)));
    let q: Vec<f64> = sorted.iter().map(|e| e.q).collect();
    is_convex_sequence(&q)
}

/// Share of steps whose material estimates are convex when ordered by index,
/// by optical path length, and by both.
pub fn convexity_ratios(steps: &[Vec<MaterialEstimate>]) -> ConvexityRatios {
    if steps.is_empty() {
        return ConvexityRatios::default();
    }
    let (mut n, mut p, mut both) = (0usize, 0usize, 0usize);
    for step in steps {
        let cn = convex_when_sorted_by(step, |e| e.index);
        let cp = convex_when_sorted_by(step, |e| e.path_length);
        n += cn as usize;
        p += cp as usize;
        both += (cn && cp) as usize;
    }
    let total = steps.len() as f64;
    ConvexityRatios {
        ratio_n: n as f64 / total,
        ratio_p: p as f64 / total,
        ratio_both: both as f64 / total,
        steps: steps.len(),
        degenerate: steps.iter().any(|s| s.len() < 3),
    }
}

/// Fraction of i.i.d. uniform value sequences of length `materials` that are convex.
pub fn random_convexity_baseline(materials: usize, samples: usize, seed: u64) -> f64 {
    if samples == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let convex = (0..samples)
        .filter(|_| {
            let v: Vec<f64> = (0..materials).map(|_| rng.gen()).collect();
            is_convex_sequence(&v)
        })
        .count();
    convex as f64 / samples as f64
}

/// Mean and sample standard deviation of the current squared TD error over the whole memory.
pub fn replay_loss_stats(
    bundle: &NetworkBundle,
    memory: &ReplayMemory<Transition>,
    gamma: f64,
    bootstrap: bool,
) -> Result<(f64, f64)> {
    if memory.is_empty() {
        return Err(Error::NotReady {
            size: 0,
            required: 1,
        });
    }
    let all: Vec<&Transition> = memory.items().iter().collect();
    let mut stats = WelfordStats::default();
    for loss in bundle.squared_td_errors(&all, gamma, bootstrap)? {
        stats.update(loss);
    }
    Ok((stats.mean, stats.std()))
}

/// Outcome of a greedy rollout with one substituted action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfRecord {
    pub layer: usize,
    pub action: Action,
    /// Online estimate of the substituted action at the state before `layer`.
    pub q_estimate: f64,
    /// `Re(n) * t` at the reference wavelength, nm; zero for terminate.
    pub path_length: f64,
    /// Backfilled return of step `layer` in the perturbed rollout.
    pub realized_return: f64,
    pub final_reward: f64,
    pub design: Vec<crate::optics::Layer>,
}

/// A greedy episode: actions taken and the backfilled returns.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub actions: Vec<Action>,
    pub q_estimates: Vec<f64>,
    pub returns: Vec<f64>,
    pub final_reward: f64,
    pub design: Vec<crate::optics::Layer>,
}

/// Follows the greedy policy, replacing the action at step `substitute.0` if given.
pub fn greedy_rollout(
    bundle: &NetworkBundle,
    task: &TaskSpec,
    catalog: &MaterialCatalog,
    reward: RewardParams,
    gamma: f64,
    forbid_repeat: bool,
    substitute: Option<(usize, Action)>,
) -> Result<Rollout> {
    let mut env = DesignEnv::new(task, catalog, reward, gamma)?.forbid_repeat_materials(forbid_repeat);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = task.material_ids.len();
    let mut actions = Vec::new();
    let mut q_estimates = Vec::new();
    env.reset();
    while !env.is_done() {
        let state: Vec<f32> = env.state().encode().iter().map(|&x| x as f32).collect();
        let step = actions.len();
        let (action, q) = match substitute {
            Some((i, a)) if i == step => {
                let input = match a {
                    Action::Place { material, thickness } => QInput::Place {
                        slot: env.material_slot(material).ok_or_else(|| {
                            Error::invalid(format!("material {material} is not available in this task"))
                        })?,
                        thickness,
                    },
                    Action::Terminate => QInput::Terminate,
                };
                (a, bundle.q_single(&state, input, false)?)
            }
            _ => {
                let d = bundle.select_action(&state, &env.allowed_materials(), 0.0, &mut rng)?;
                let action = if d.action == n {
                    Action::Terminate
                } else {
                    Action::Place {
                        material: task.material_ids[d.action],
                        thickness: d.thickness,
                    }
                };
                (action, d.q_values[d.action])
            }
        };
        env.step(action)?;
        actions.push(action);
        q_estimates.push(q);
    }
    let outcome = env.finish()?;
    Ok(Rollout {
        actions,
        q_estimates,
        returns: outcome.returns,
        final_reward: outcome.evaluation.reward,
        design: outcome.layers,
    })
}

/// Greedy rollout with `alternative` taken at step `layer` (zero-based).
/// Fails when the unperturbed greedy policy terminates before reaching `layer`.
#[allow(clippy::too_many_arguments)]
pub fn what_if(
    bundle: &NetworkBundle,
    task: &TaskSpec,
    catalog: &MaterialCatalog,
    reward: RewardParams,
    gamma: f64,
    forbid_repeat: bool,
    layer: usize,
    alternative: Action,
) -> Result<WhatIfRecord> {
    if layer >= task.layer_budget {
        return Err(Error::invalid(format!(
            "layer {layer} outside the budget of {}",
            task.layer_budget
        )));
    }
    let base = greedy_rollout(bundle, task, catalog, reward, gamma, forbid_repeat, None)?;
    if layer >= base.actions.len() {
        return Err(Error::invalid(format!(
            "the greedy policy terminates after {} steps and never reaches layer {layer}",
            base.actions.len()
        )));
    }
    let run = greedy_rollout(
        bundle,
        task,
        catalog,
        reward,
        gamma,
        forbid_repeat,
        Some((layer, alternative)),
    )?;
    let path_length = match alternative {
        Action::Place { material, thickness } => catalog.reference_index(material)? * thickness,
        Action::Terminate => 0.0,
    };
    Ok(WhatIfRecord {
        layer,
        action: alternative,
        q_estimate: run.q_estimates[layer],
        path_length,
        realized_return: run.returns[layer],
        final_reward: run.final_reward,
        design: run.design,
    })
}

/// One cell of the materials-by-layers what-if table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfCell {
    pub material: u32,
    pub index: f64,
    pub layer: usize,
    pub q_estimate: f64,
    pub path_length: f64,
    pub realized_return: f64,
}

/// For every greedy step and task material: place that material with the
/// actor's proposed thickness at that step and follow the policy afterwards.
pub fn what_if_table(
    bundle: &NetworkBundle,
    task: &TaskSpec,
    catalog: &MaterialCatalog,
    reward: RewardParams,
    gamma: f64,
    forbid_repeat: bool,
) -> Result<Vec<WhatIfCell>> {
    let base = greedy_rollout(bundle, task, catalog, reward, gamma, forbid_repeat, None)?;
    let mut env = DesignEnv::new(task, catalog, reward, gamma)?.forbid_repeat_materials(forbid_repeat);
    env.reset();
    let mut cells = Vec::new();
    for (layer, &action) in base.actions.iter().enumerate() {
        if layer >= task.layer_budget {
            break;
        }
        let state: Vec<f32> = env.state().encode().iter().map(|&x| x as f32).collect();
        let proposals = bundle.actor_thicknesses(&state, false)?;
        let allowed = env.allowed_materials();
        for (slot, &material) in task.material_ids.iter().enumerate() {
            if !allowed[slot] {
                continue;
            }
            let alternative = Action::Place {
                material,
                thickness: proposals[slot],
            };
            let r = what_if(bundle, task, catalog, reward, gamma, forbid_repeat, layer, alternative)?;
            cells.push(WhatIfCell {
                material,
                index: catalog.reference_index(material)?,
                layer,
                q_estimate: r.q_estimate,
                path_length: r.path_length,
                realized_return: r.realized_return,
            });
        }
        if action.is_terminate() {
            break;
        }
        env.step(action)?;
    }
    Ok(cells)
}

/// CSV with columns `material,n,layer,q_estimate,p_nm,return`.
pub fn write_what_if_csv<W: Write>(cells: &[WhatIfCell], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["material", "n", "layer", "q_estimate", "p_nm", "return"])
        .map_err(csv_error)?;
    for c in cells {
        w.write_record([
            c.material.to_string(),
            c.index.to_string(),
            (c.layer + 1).to_string(),
            c.q_estimate.to_string(),
            c.path_length.to_string(),
            c.realized_return.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(q: &[f64], n: &[f64], p: &[f64]) -> Vec<MaterialEstimate> {
        q.iter()
            .zip(n)
            .zip(p)
            .map(|((&q, &index), &path_length)| MaterialEstimate { q, index, path_length })
            .collect()
    }

    #[test]
    fn convexity_examples() {
        assert!(is_convex_sequence(&[0.5, 0.3, 0.4, 0.7]));
        assert!(!is_convex_sequence(&[0.3, 0.7, 0.5, 0.4]));
        assert!(is_convex_sequence(&[0.1, 0.2, 0.3, 0.4]));
        assert!(is_convex_sequence(&[0.1, 0.2]));
    }

    #[test]
    fn ratios_sort_by_each_characteristic() {
        // valley by index, peak by path length
        let step = est(&[0.5, 0.3, 0.4, 0.7], &[1.4, 1.6, 1.8, 2.3], &[10.0, 40.0, 30.0, 20.0]);
        let r = convexity_ratios(&[step.clone(), step]);
        assert_eq!((r.ratio_n, r.ratio_p, r.ratio_both), (1.0, 0.0, 0.0));
        assert!(!r.degenerate);
        let two = est(&[0.1, 0.9], &[1.4, 2.3], &[1.0, 2.0]);
        assert!(convexity_ratios(&[two]).degenerate);
    }

    #[test]
    fn welford_examples() {
        let mut w = WelfordStats::default();
        w.update(2.0);
        assert_eq!(w.variance(), 0.0);
        w.update(4.0);
        assert_eq!(w.mean, 3.0);
        assert_eq!(w.variance(), 2.0);
    }

    #[test]
    fn random_baseline_bounds() {
        // three points: x1 + x3 >= 2 x2 holds with probability 1/2 by symmetry
        let b3 = random_convexity_baseline(3, 200_000, 1);
        assert!((b3 - 0.5).abs() < 0.01, "{b3}");
        // convex implies valley-ordered, and 8 of 24 orderings are valleys
        let b4 = random_convexity_baseline(4, 200_000, 1);
        assert!(b4 > 0.0 && b4 < 1.0 / 3.0, "{b4}");
    }

    #[test]
    fn what_if_csv_shape() {
        let cells = vec![WhatIfCell {
            material: 1,
            index: 1.457,
            layer: 0,
            q_estimate: 0.5,
            path_length: 100.0,
            realized_return: 0.6,
        }];
        let mut buf = Vec::new();
        write_what_if_csv(&cells, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "material,n,layer,q_estimate,p_nm,return\n1,1.457,1,0.5,100,0.6\n");
    }
}

use std::fs;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::replay::Transition;
use super::ActorHead;
use crate::nn::{checkpoint, Activation, Adam, Mlp};
use crate::{Error, Result};

type Net = Mlp<f32>;

/// Rows per forward call when scoring large transition sets.
const CHUNK: usize = 512;

/// Actor `g`, Q-network `f`, their target copies and optimizers.
#[derive(Debug, Clone)]
pub struct NetworkBundle {
    pub actor: Net,
    pub q_net: Net,
    pub actor_target: Net,
    pub q_target: Net,
    actor_opt: Adam<f32>,
    q_opt: Adam<f32>,
    shape: BundleShape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleShape {
    layer_budget: usize,
    materials: usize,
    t_min: f64,
    t_max: f64,
    hidden_sizes: Vec<usize>,
    learning_rate: f64,
    #[serde(default)]
    actor_learning_rate: Option<f64>,
    #[serde(default)]
    actor_head: ActorHead,
}

/// Greedy or exploratory choice at one state, with the estimates behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    /// Material slot, or `materials` for terminate.
    pub action: usize,
    pub thickness: f64,
    pub explored: bool,
    /// `|N| + 1` online estimates, terminate last.
    pub q_values: Vec<f64>,
    /// Actor thickness per material, nm.
    pub proposals: Vec<f64>,
}

/// Losses from one gradient step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainStats {
    /// `sum (y - Q)^2` over the batch before the update.
    pub q_loss: f64,
    /// `sum_j sum_k Q_k(s_j, g(s_j))` before the actor update.
    pub actor_objective: f64,
    /// Squared TD errors after both updates, batch order.
    pub refreshed_losses: Vec<f64>,
}

/// Identifies an action-parameter layout for a single Q pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QInput {
    /// Slot `k` holds the normalized thickness, all others zero.
    Place { slot: usize, thickness: f64 },
    /// All parameter slots zero.
    Terminate,
}

impl NetworkBundle {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        layer_budget: usize,
        materials: usize,
        t_min: f64,
        t_max: f64,
        hidden_sizes: &[usize],
        learning_rate: f64,
        actor_learning_rate: Option<f64>,
        actor_head: ActorHead,
        seed: u64,
    ) -> Result<Self> {
        if layer_budget == 0 || materials == 0 {
            return Err(Error::config("bundle needs a layer budget and materials"));
        }
        if !(t_min.is_finite() && t_max.is_finite() && 0.0 <= t_min && t_min <= t_max && t_max > 0.0)
        {
            return Err(Error::config("thickness range must satisfy 0 <= t_min <= t_max"));
        }
        let shape = BundleShape {
            layer_budget,
            materials,
            t_min,
            t_max,
            hidden_sizes: hidden_sizes.to_vec(),
            learning_rate,
            actor_learning_rate,
            actor_head,
        };
        let (actor_sizes, q_sizes) = shape.sizes();
        let mut actor = Mlp::new(&actor_sizes, actor_head.activation(), seed)?;
        // proposals start at the middle of the thickness range
        if let Some(head) = actor.layers_mut().last_mut() {
            head.weights.fill(0.0);
            head.bias.fill(0.0);
        }
        let q_net = Mlp::new(&q_sizes, Activation::Identity, seed.wrapping_add(1))?;
        Ok(NetworkBundle {
            actor_opt: Adam::new(&actor, actor_learning_rate.unwrap_or(learning_rate)),
            q_opt: Adam::new(&q_net, learning_rate),
            actor_target: actor.clone(),
            q_target: q_net.clone(),
            actor,
            q_net,
            shape,
        })
    }

    pub fn layer_budget(&self) -> usize {
        self.shape.layer_budget
    }

    pub fn materials(&self) -> usize {
        self.shape.materials
    }

    pub fn state_size(&self) -> usize {
        2 * self.shape.layer_budget
    }

    pub fn thickness_range(&self) -> (f64, f64) {
        (self.shape.t_min, self.shape.t_max)
    }

    /// Gradient steps taken by the Q-network optimizer.
    pub fn update_steps(&self) -> u64 {
        self.q_opt.steps()
    }

    fn check_state(&self, state: &[f32]) -> Result<()> {
        if state.len() != self.state_size() {
            return Err(Error::usage(format!(
                "state has {} entries, expected {}",
                state.len(),
                self.state_size()
            )));
        }
        Ok(())
    }

    fn span(&self) -> f64 {
        self.shape.t_max - self.shape.t_min
    }

    /// Thickness proposal per material, in `[t_min, t_max]` nm.
    pub fn actor_thicknesses(&self, state: &[f32], use_target: bool) -> Result<Vec<f64>> {
        self.check_state(state)?;
        let net = if use_target { &self.actor_target } else { &self.actor };
        Ok(net
            .predict_one(state)?
            .into_iter()
            .map(|o| self.shape.t_min + self.shape.actor_head.fraction(o) as f64 * self.span())
            .collect())
    }

    /// `|N| + 1` estimates: one pass per material carrying only that
    /// material's thickness, then an all-zero pass for terminate.
    pub fn q_values(&self, state: &[f32], thicknesses: &[f64], use_target: bool) -> Result<Vec<f64>> {
        self.check_state(state)?;
        if thicknesses.len() != self.shape.materials {
            return Err(Error::usage(format!(
                "expected {} thicknesses, got {}",
                self.shape.materials,
                thicknesses.len()
            )));
        }
        let states = ArrayView2::from_shape((1, state.len()), state)
            .map_err(|e| Error::usage(e.to_string()))?;
        let norm = Array2::from_shape_fn((1, self.shape.materials), |(_, k)| {
            (thicknesses[k] / self.shape.t_max) as f32
        });
        let net = if use_target { &self.q_target } else { &self.q_net };
        let q = self.multi_pass(net, states, norm.view())?;
        Ok(q.row(0).iter().map(|&v| v as f64).collect())
    }

    /// Estimate for one explicit action at `state`.
    pub fn q_single(&self, state: &[f32], input: QInput, use_target: bool) -> Result<f64> {
        self.check_state(state)?;
        let mut row = Array2::zeros((1, self.state_size() + self.shape.materials));
        for (i, &v) in state.iter().enumerate() {
            row[[0, i]] = v;
        }
        let column = match input {
            QInput::Place { slot, thickness } => {
                if slot >= self.shape.materials {
                    return Err(Error::usage(format!("material slot {slot} out of range")));
                }
                row[[0, self.state_size() + slot]] = (thickness / self.shape.t_max) as f32;
                slot
            }
            QInput::Terminate => self.shape.materials,
        };
        let net = if use_target { &self.q_target } else { &self.q_net };
        Ok(net.predict(row.view())?[[0, column]] as f64)
    }

    /// Rows `[state | one-hot parameter]` for pass `k` stacked pass-major.
    fn multi_pass_input(&self, states: ArrayView2<f32>, norm: ArrayView2<f32>) -> Array2<f32> {
        let (b, n, d) = (states.nrows(), self.shape.materials, self.state_size());
        let mut x = Array2::zeros(((n + 1) * b, d + n));
        for pass in 0..=n {
            let mut block = x.slice_mut(s![pass * b..(pass + 1) * b, ..]);
            block.slice_mut(s![.., ..d]).assign(&states);
            if pass < n {
                block.slice_mut(s![.., d + pass]).assign(&norm.column(pass));
            }
        }
        x
    }

    fn multi_pass(&self, net: &Net, states: ArrayView2<f32>, norm: ArrayView2<f32>) -> Result<Array2<f32>> {
        let (b, n) = (states.nrows(), self.shape.materials);
        let out = net.predict(self.multi_pass_input(states, norm).view())?;
        Ok(Array2::from_shape_fn((b, n + 1), |(j, k)| out[[k * b + j, k]]))
    }

    /// Normalized actor proposals `t / t_max` for a batch of states.
    fn proposals_normalized(&self, net: &Net, states: ArrayView2<f32>) -> Result<Array2<f32>> {
        let (t_min, t_max) = (self.shape.t_min as f32, self.shape.t_max as f32);
        let span = self.span() as f32;
        let head = self.shape.actor_head;
        Ok(net
            .predict(states)?
            .mapv(|o| (t_min + head.fraction(o) * span) / t_max))
    }

    /// Epsilon-greedy choice among allowed materials and terminate.
    pub fn select_action<R: Rng>(
        &self,
        state: &[f32],
        allowed: &[bool],
        epsilon: f64,
        rng: &mut R,
    ) -> Result<Decision> {
        if allowed.len() != self.shape.materials {
            return Err(Error::usage("allowed mask length differs from material count"));
        }
        let proposals = self.actor_thicknesses(state, false)?;
        let q_values = self.q_values(state, &proposals, false)?;
        let explore = rng.gen::<f64>() < epsilon;
        let (action, thickness) = if explore {
            let options: Vec<usize> = (0..self.shape.materials)
                .filter(|&k| allowed[k])
                .chain(std::iter::once(self.shape.materials))
                .collect();
            let action = options[rng.gen_range(0..options.len())];
            let thickness = if self.shape.t_min < self.shape.t_max {
                rng.gen_range(self.shape.t_min..=self.shape.t_max)
            } else {
                self.shape.t_min
            };
            (action, thickness)
        } else {
            let action = greedy_index(&q_values, allowed);
            (action, proposals.get(action).copied().unwrap_or(0.0))
        };
        let thickness = if action == self.shape.materials { 0.0 } else { thickness };
        Ok(Decision {
            action,
            thickness,
            explored: explore,
            q_values,
            proposals,
        })
    }

    fn batch_states(&self, batch: &[&Transition], next: bool) -> Array2<f32> {
        let d = self.state_size();
        let mut x = Array2::zeros((batch.len(), d));
        for (j, t) in batch.iter().enumerate() {
            let s = if next { &t.next_state } else { &t.state };
            x.row_mut(j).assign(&ndarray::ArrayView1::from(&s[..]));
        }
        x
    }

    /// Q-network rows for the stored actions.
    fn taken_action_input(&self, batch: &[&Transition]) -> Array2<f32> {
        let d = self.state_size();
        let mut x = Array2::zeros((batch.len(), d + self.shape.materials));
        for (j, t) in batch.iter().enumerate() {
            x.slice_mut(s![j, ..d])
                .assign(&ndarray::ArrayView1::from(&t.state[..]));
            if t.action < self.shape.materials {
                x[[j, d + t.action]] = (t.thickness / self.shape.t_max) as f32;
            }
        }
        x
    }

    /// `y = r + gamma * max_a' Q'(s', a')` with target networks; terminal
    /// transitions, and all transitions when `bootstrap` is off, use `y = r`.
    pub fn td_targets(&self, batch: &[&Transition], gamma: f64, bootstrap: bool) -> Result<Vec<f64>> {
        let mut y: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        if !bootstrap || batch.iter().all(|t| t.terminal) {
            return Ok(y);
        }
        let next = self.batch_states(batch, true);
        let norm = self.proposals_normalized(&self.actor_target, next.view())?;
        let q = self.multi_pass(&self.q_target, next.view(), norm.view())?;
        for (j, t) in batch.iter().enumerate() {
            if t.terminal {
                continue;
            }
            y[j] += gamma * greedy_value(q.row(j).as_slice().unwrap(), &t.next_allowed);
        }
        Ok(y)
    }

    fn taken_q(&self, batch: &[&Transition]) -> Result<Vec<f64>> {
        let out = self.q_net.predict(self.taken_action_input(batch).view())?;
        Ok(batch
            .iter()
            .enumerate()
            .map(|(j, t)| out[[j, t.action]] as f64)
            .collect())
    }

    /// Current squared TD errors under the present online and target parameters.
    pub fn squared_td_errors(&self, batch: &[&Transition], gamma: f64, bootstrap: bool) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(batch.len());
        for chunk in batch.chunks(CHUNK) {
            let y = self.td_targets(chunk, gamma, bootstrap)?;
            let q = self.taken_q(chunk)?;
            out.extend(y.iter().zip(&q).map(|(y, q)| (y - q) * (y - q)));
        }
        Ok(out)
    }

    /// One Q step on `sum (y - Q)^2`, then one actor step ascending
    /// `sum_k Q_k(s, g(s))` through the just-updated, frozen Q-network.
    pub fn train_on_batch(&mut self, batch: &[&Transition], gamma: f64, bootstrap: bool) -> Result<TrainStats> {
        if batch.is_empty() {
            return Err(Error::usage("empty training batch"));
        }
        let y = self.td_targets(batch, gamma, bootstrap)?;

        let x = self.taken_action_input(batch);
        let (out, cache) = self.q_net.forward(x.view())?;
        let mut grad = Array2::<f32>::zeros(out.dim());
        let mut q_loss = 0.0;
        for (j, t) in batch.iter().enumerate() {
            let diff = out[[j, t.action]] as f64 - y[j];
            q_loss += diff * diff;
            grad[[j, t.action]] = (2.0 * diff) as f32;
        }
        if !q_loss.is_finite() {
            return Err(Error::training(format!("non-finite Q loss {q_loss}")));
        }
        let (q_grads, _) = self.q_net.backward(&cache, grad.view());
        self.q_opt.step(&mut self.q_net, &q_grads)?;

        let actor_objective = self.actor_step(batch)?;

        // refreshed priorities: post-update online Q, same targets (the target
        // networks do not move inside this step)
        let q_after = self.taken_q(batch)?;
        let refreshed_losses = y
            .iter()
            .zip(&q_after)
            .map(|(y, q)| (y - q) * (y - q))
            .collect();
        Ok(TrainStats {
            q_loss,
            actor_objective,
            refreshed_losses,
        })
    }

    fn actor_step(&mut self, batch: &[&Transition]) -> Result<f64> {
        let (b, n, d) = (batch.len(), self.shape.materials, self.state_size());
        let states = self.batch_states(batch, false);
        let (raw, actor_cache) = self.actor.forward(states.view())?;
        let (t_min, t_max) = (self.shape.t_min as f32, self.shape.t_max as f32);
        let span = self.span() as f32;
        let head = self.shape.actor_head;
        let norm = raw.mapv(|o| (t_min + head.fraction(o) * span) / t_max);

        let x = self.multi_pass_input(states.view(), norm.view());
        let x = x.slice(s![..n * b, ..]);
        let (out, q_cache) = self.q_net.forward(x)?;
        let mut grad = Array2::<f32>::zeros(out.dim());
        let mut objective = 0.0;
        for k in 0..n {
            for j in 0..b {
                objective += out[[k * b + j, k]] as f64;
                grad[[k * b + j, k]] = 1.0;
            }
        }
        if !objective.is_finite() {
            return Err(Error::training(format!("non-finite actor objective {objective}")));
        }
        let input_grad = self.q_net.input_gradient(&q_cache, grad.view());
        // d(norm)/d(fraction) = span / t_max; the optimizer descends, so negate
        let scale = span / t_max;
        let actor_grad = Array2::from_shape_fn((b, n), |(j, k)| {
            -head.output_gradient(raw[[j, k]], scale * input_grad[[k * b + j, d + k]])
        });
        let (grads, _) = self.actor.backward(&actor_cache, actor_grad.view());
        self.actor_opt.step(&mut self.actor, &grads)?;
        Ok(objective)
    }

    /// Polyak-averages both target networks toward the online ones.
    pub fn update_targets(&mut self, tau: f64) -> Result<()> {
        self.actor_target.polyak_from(&self.actor, tau as f32)?;
        self.q_target.polyak_from(&self.q_net, tau as f32)
    }

    /// Writes all four networks plus a shape manifest under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("bundle.json"), serde_json::to_string_pretty(&self.shape)?)?;
        let steps = (self.actor_opt.steps(), self.q_opt.steps());
        checkpoint::save(&self.actor, steps.0, dir, "actor")?;
        checkpoint::save(&self.q_net, steps.1, dir, "q_net")?;
        checkpoint::save(&self.actor_target, steps.0, dir, "actor_target")?;
        checkpoint::save(&self.q_target, steps.1, dir, "q_target")?;
        Ok(())
    }

    /// Restores networks saved by [`save`](Self::save); optimizer moments start fresh.
    pub fn load(dir: &Path) -> Result<Self> {
        let shape: BundleShape = serde_json::from_str(&fs::read_to_string(dir.join("bundle.json"))?)
            .map_err(|e| Error::Checkpoint(format!("bundle manifest: {e}")))?;
        let (actor_sizes, q_sizes) = shape.sizes();
        let load = |name: &str, sizes: &[usize]| -> Result<Net> {
            let (net, _) = checkpoint::load::<f32>(dir, name)?;
            if net.sizes() != sizes {
                return Err(Error::Checkpoint(format!("{name} has unexpected layer sizes")));
            }
            Ok(net)
        };
        let actor = load("actor", &actor_sizes)?;
        let q_net = load("q_net", &q_sizes)?;
        Ok(NetworkBundle {
            actor_opt: Adam::new(&actor, shape.actor_learning_rate.unwrap_or(shape.learning_rate)),
            q_opt: Adam::new(&q_net, shape.learning_rate),
            actor_target: load("actor_target", &actor_sizes)?,
            q_target: load("q_target", &q_sizes)?,
            actor,
            q_net,
            shape,
        })
    }
}

impl BundleShape {
    fn sizes(&self) -> (Vec<usize>, Vec<usize>) {
        let d = 2 * self.layer_budget;
        let n = self.materials;
        let mut actor = vec![d];
        actor.extend(&self.hidden_sizes);
        actor.push(n);
        let mut q = vec![d + n];
        q.extend(&self.hidden_sizes);
        q.push(n + 1);
        (actor, q)
    }
}

/// Argmax over allowed materials and terminate (last); ties go to the lowest index.
/// Index of the largest permitted Q-value; the lowest index wins ties.
pub fn greedy_index(q_values: &[f64], allowed: &[bool]) -> usize {
    let mut best = q_values.len() - 1;
    let mut best_value = f64::NEG_INFINITY;
    for (k, &q) in q_values.iter().enumerate() {
        let permitted = allowed.get(k).copied().unwrap_or(true);
        if permitted && q > best_value {
            best = k;
            best_value = q;
        }
    }
    best
}

fn greedy_value(q_values: &[f32], allowed: &[bool]) -> f64 {
    q_values
        .iter()
        .enumerate()
        .filter(|&(k, _)| allowed.get(k).copied().unwrap_or(true))
        .map(|(_, &q)| q as f64)
        .fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bundle() -> NetworkBundle {
        NetworkBundle::new(3, 4, 1.0, 150.0, &[16, 16], 1e-3, None, ActorHead::Sigmoid, 9).unwrap()
    }

    fn state() -> Vec<f32> {
        vec![1.457, 2.327, 0.0, 0.4, 0.2, 0.0]
    }

    #[test]
    fn proposals_stay_in_range_and_zero_head_gives_midpoint() {
        let mut b = bundle();
        for t in b.actor_thicknesses(&state(), false).unwrap() {
            assert!((1.0..=150.0).contains(&t));
        }
        let last = b.actor.layers_mut().last_mut().unwrap();
        last.weights.fill(0.0);
        last.bias.fill(0.0);
        for t in b.actor_thicknesses(&state(), false).unwrap() {
            assert!((t - 75.5).abs() < 1e-6);
        }
    }

    #[test]
    fn five_estimates_for_four_materials() {
        let b = bundle();
        let q = b.q_values(&state(), &[10.0, 20.0, 30.0, 40.0], false).unwrap();
        assert_eq!(q.len(), 5);
        assert_eq!(
            q[4],
            b.q_single(&state(), QInput::Terminate, false).unwrap()
        );
        let q2 = b.q_single(&state(), QInput::Place { slot: 2, thickness: 30.0 }, false).unwrap();
        assert_eq!(q[2], q2);
    }

    #[test]
    fn estimates_ignore_other_proposals() {
        let b = bundle();
        let base = b.q_values(&state(), &[10.0, 20.0, 30.0, 40.0], false).unwrap();
        let moved = b.q_values(&state(), &[10.0, 140.0, 30.0, 40.0], false).unwrap();
        for k in [0, 2, 3, 4] {
            assert_eq!(base[k], moved[k]);
        }
        assert_ne!(base[1], moved[1]);
    }

    #[test]
    fn greedy_examples() {
        let all = [true; 4];
        assert_eq!(greedy_index(&[0.1, 0.9, 0.2, 0.3, 0.05], &all), 1);
        assert_eq!(greedy_index(&[0.1, 0.2, 0.2, 0.3, 0.5], &all), 4);
        assert_eq!(greedy_index(&[0.3, 0.3, 0.3, 0.3, 0.3], &all), 0);
        assert_eq!(greedy_index(&[0.1, 0.9, 0.2, 0.3, 0.05], &[true, false, true, true]), 3);
        let shifted: Vec<f64> = [0.1, 0.9, 0.2, 0.3, 0.05].iter().map(|q| q + 7.0).collect();
        assert_eq!(greedy_index(&shifted, &all), 1);
    }

    #[test]
    fn full_exploration_is_uniform_over_options() {
        let b = bundle();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 5];
        let n = 20_000;
        for _ in 0..n {
            let d = b.select_action(&state(), &[true; 4], 1.0, &mut rng).unwrap();
            assert!(d.explored);
            counts[d.action] += 1;
            if d.action < 4 {
                assert!((1.0..=150.0).contains(&d.thickness));
            }
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.2).abs() < 0.015, "{counts:?}");
        }
    }

    #[test]
    fn greedy_place_uses_actor_thickness() {
        let b = bundle();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = b.select_action(&state(), &[true; 4], 0.0, &mut rng).unwrap();
        assert!(!d.explored);
        assert_eq!(d.action, greedy_index(&d.q_values, &[true; 4]));
        if d.action < 4 {
            assert_eq!(d.thickness, d.proposals[d.action]);
        }
    }

    fn transition(terminal: bool, reward: f64, action: usize) -> Transition {
        Transition {
            state: state(),
            action,
            thickness: if action < 4 { 50.0 } else { 0.0 },
            reward,
            next_state: vec![1.457, 2.327, 1.645, 0.4, 0.2, 0.3],
            next_allowed: vec![true; 4],
            terminal,
        }
    }

    #[test]
    fn targets_follow_the_bootstrap_rule() {
        let b = bundle();
        let term = transition(true, 1.0, 4);
        let cont = transition(false, 0.95, 2);
        let y = b.td_targets(&[&term, &cont], 0.95, true).unwrap();
        assert_eq!(y[0], 1.0);
        let next_t = b.actor_thicknesses(&cont.next_state, true).unwrap();
        let q_next = b.q_values(&cont.next_state, &next_t, true).unwrap();
        let max = q_next.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((y[1] - (0.95 + 0.95 * max)).abs() < 1e-5);
        let y = b.td_targets(&[&term, &cont], 0.95, false).unwrap();
        assert_eq!(y, vec![1.0, 0.95]);
    }

    #[test]
    fn refreshed_losses_match_recomputation() {
        let mut b = bundle();
        let ts: Vec<Transition> = (0..6)
            .map(|i| transition(i % 2 == 0, 0.2 + 0.1 * i as f64, i % 5))
            .collect();
        let batch: Vec<&Transition> = ts.iter().collect();
        let stats = b.train_on_batch(&batch, 0.95, true).unwrap();
        let recomputed = b.squared_td_errors(&batch, 0.95, true).unwrap();
        assert_eq!(stats.refreshed_losses, recomputed);
        assert!(stats.q_loss >= 0.0);
        assert_eq!(b.update_steps(), 1);
    }

    #[test]
    fn training_reduces_loss_on_a_fixed_batch() {
        let mut b = bundle();
        // one transition per action, so the loss can reach zero
        let ts: Vec<Transition> = (0..5)
            .map(|i| transition(true, 0.1 + 0.2 * i as f64, i))
            .collect();
        let batch: Vec<&Transition> = ts.iter().collect();
        let first = b.train_on_batch(&batch, 0.95, true).unwrap().q_loss;
        let mut last = first;
        for _ in 0..300 {
            last = b.train_on_batch(&batch, 0.95, true).unwrap().q_loss;
        }
        assert!(last < 1e-3 * first, "{first} -> {last}");
    }

    #[test]
    fn actor_ascends_the_summed_estimates() {
        let mut b = bundle();
        let ts: Vec<Transition> = (0..8).map(|i| transition(false, 0.5, i % 5)).collect();
        let batch: Vec<&Transition> = ts.iter().collect();
        // freeze Q by zero learning rate so only the actor moves
        b.q_opt.lr = 0.0;
        let before = b.train_on_batch(&batch, 0.95, true).unwrap().actor_objective;
        let mut after = before;
        for _ in 0..50 {
            after = b.train_on_batch(&batch, 0.95, true).unwrap().actor_objective;
        }
        assert!(after >= before, "{before} -> {after}");
    }

    #[test]
    fn target_update_moves_toward_online() {
        let mut b = bundle();
        b.q_net.polyak_from(&NetworkBundle::new(3, 4, 1.0, 150.0, &[16, 16], 1e-3, None, ActorHead::Sigmoid, 77).unwrap().q_net, 1.0).unwrap();
        let online = b.q_net.params_flat();
        let old = b.q_target.params_flat();
        b.update_targets(0.01).unwrap();
        assert_eq!(b.q_net.params_flat(), online);
        for ((n, o), t) in b.q_target.params_flat().iter().zip(&old).zip(&online) {
            assert!((n - o).abs() <= 0.01 * (t - o).abs() + 1e-7);
        }
    }

    #[test]
    fn save_and_load_preserve_every_network() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = bundle();
        b.update_targets(0.5).unwrap();
        b.save(dir.path()).unwrap();
        let back = NetworkBundle::load(dir.path()).unwrap();
        assert_eq!(back.actor, b.actor);
        assert_eq!(back.q_net, b.q_net);
        assert_eq!(back.actor_target, b.actor_target);
        assert_eq!(back.q_target, b.q_target);
        assert_eq!(back.thickness_range(), (1.0, 150.0));
    }
}

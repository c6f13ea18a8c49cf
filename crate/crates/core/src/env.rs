//! The layer-stacking decision process.
//!
//! An episode starts from an empty stack. Each step either places one layer
//! (a material paired with a continuous thickness) or terminates; the budget
//! `L` also terminates. The design is simulated once, when the episode ends,
//! and the single reward is discounted backwards over the episode's steps.

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::objective::{Evaluation, RewardParams, TaskSpec};
use crate::optics::{Layer, MaterialCatalog};
use crate::{Error, Result};

/// Fixed-width encoding of a partial design: real indexes at the catalog
/// reference wavelength and thicknesses normalized by `t_max`, zero-padded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignState {
    pub index_vec: Vec<f64>,
    pub thickness_vec: Vec<f64>,
    pub cursor: usize,
}

impl DesignState {
    pub fn zeros(layer_budget: usize) -> Self {
        DesignState {
            index_vec: vec![0.0; layer_budget],
            thickness_vec: vec![0.0; layer_budget],
            cursor: 0,
        }
    }

    pub fn layer_budget(&self) -> usize {
        self.index_vec.len()
    }

    /// `[indexes..., thicknesses...]`, length `2L`.
    pub fn encode(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.index_vec.len());
        v.extend_from_slice(&self.index_vec);
        v.extend_from_slice(&self.thickness_vec);
        v
    }

    pub fn encode_into(&self, out: &mut [f64]) {
        let l = self.index_vec.len();
        out[..l].copy_from_slice(&self.index_vec);
        out[l..2 * l].copy_from_slice(&self.thickness_vec);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    Place {
        material: u32,
        #[serde(rename = "thickness_nm")]
        thickness: f64,
    },
    Terminate,
}

impl Action {
    pub fn is_terminate(&self) -> bool {
        matches!(self, Action::Terminate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: DesignState,
    pub action: Action,
    pub next_state: DesignState,
    pub terminal: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeTrace {
    pub steps: Vec<Step>,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Exactly one terminal transition, and it is the last one.
    pub fn is_complete(&self) -> bool {
        match self.steps.split_last() {
            Some((last, rest)) => last.terminal && rest.iter().all(|s| !s.terminal),
            None => false,
        }
    }
}

/// Discounted per-step returns: the last step earns `final_reward`, each
/// earlier step `gamma` times its successor.
pub fn finalize_episode(trace: &EpisodeTrace, final_reward: f64, gamma: f64) -> Result<Vec<f64>> {
    if !trace.is_complete() {
        return Err(Error::usage("episode trace is not complete"));
    }
    if !(final_reward.is_finite() && final_reward > 0.0 && final_reward <= 1.0) {
        return Err(Error::invalid(format!(
            "final reward must lie in (0, 1], got {final_reward}"
        )));
    }
    Ok(discounted_returns(trace.len(), final_reward, gamma))
}

pub(crate) fn discounted_returns(len: usize, final_reward: f64, gamma: f64) -> Vec<f64> {
    let mut returns = vec![0.0; len];
    let mut r = final_reward;
    for slot in returns.iter_mut().rev() {
        *slot = r;
        r *= gamma;
    }
    returns
}

/// A finished, simulated episode.
#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub trace: EpisodeTrace,
    pub layers: Vec<Layer>,
    pub evaluation: Evaluation,
    pub returns: Vec<f64>,
}

/// One design episode over a task. Owns its mutable state; cheap to create.
#[derive(Debug)]
pub struct DesignEnv<'a> {
    task: &'a TaskSpec,
    catalog: &'a MaterialCatalog,
    reward: RewardParams,
    gamma: f64,
    reference_indexes: Vec<f64>,
    forbid_repeat_materials: bool,
    state: DesignState,
    layers: Vec<Layer>,
    trace: EpisodeTrace,
    done: bool,
    sim_calls: u64,
}

impl<'a> DesignEnv<'a> {
    pub fn new(
        task: &'a TaskSpec,
        catalog: &'a MaterialCatalog,
        reward: RewardParams,
        gamma: f64,
    ) -> Result<Self> {
        task.validate(Some(catalog))?;
        let reference_indexes = task
            .material_ids
            .iter()
            .map(|&id| catalog.reference_index(id))
            .collect::<Result<Vec<_>>>()?;
        Ok(DesignEnv {
            task,
            catalog,
            reward,
            gamma,
            reference_indexes,
            forbid_repeat_materials: false,
            state: DesignState::zeros(task.layer_budget),
            layers: Vec::new(),
            trace: EpisodeTrace::default(),
            done: false,
            sim_calls: 0,
        })
    }

    /// Masks placing the same material twice in a row.
    pub fn forbid_repeat_materials(mut self, forbid: bool) -> Self {
        self.forbid_repeat_materials = forbid;
        self
    }

    pub fn task(&self) -> &TaskSpec {
        self.task
    }

    pub fn catalog(&self) -> &MaterialCatalog {
        self.catalog
    }

    pub fn reward_params(&self) -> &RewardParams {
        &self.reward
    }

    /// Real indexes of the task materials, in task order.
    pub fn reference_indexes(&self) -> &[f64] {
        &self.reference_indexes
    }

    pub fn state(&self) -> &DesignState {
        &self.state
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Number of simulator invocations since construction.
    pub fn sim_calls(&self) -> u64 {
        self.sim_calls
    }

    pub fn reset(&mut self) -> DesignState {
        self.state = DesignState::zeros(self.task.layer_budget);
        self.layers.clear();
        self.trace = EpisodeTrace::default();
        self.done = false;
        self.state.clone()
    }

    /// Which task materials (by task position) may be placed next.
    pub fn allowed_materials(&self) -> Vec<bool> {
        let previous = self.layers.last().map(|l| l.material);
        self.task
            .material_ids
            .iter()
            .map(|&id| !(self.forbid_repeat_materials && previous == Some(id)))
            .collect()
    }

    pub fn material_slot(&self, id: u32) -> Option<usize> {
        self.task.material_ids.iter().position(|&m| m == id)
    }

    pub fn step(&mut self, action: Action) -> Result<(DesignState, bool)> {
        if self.done {
            return Err(Error::usage("step called on a finished episode"));
        }
        let before = self.state.clone();
        let terminal = match action {
            Action::Terminate => true,
            Action::Place {
                material,
                thickness,
            } => {
                let slot = self.material_slot(material).ok_or_else(|| {
                    Error::invalid(format!("material {material} is not available in this task"))
                })?;
                if !self.allowed_materials()[slot] {
                    return Err(Error::invalid(format!(
                        "material {material} may not repeat the previous layer"
                    )));
                }
                if !(thickness >= self.task.t_min && thickness <= self.task.t_max) {
                    return Err(Error::invalid(format!(
                        "thickness {thickness} outside [{}, {}] nm",
                        self.task.t_min, self.task.t_max
                    )));
                }
                let i = self.state.cursor;
                self.state.index_vec[i] = self.reference_indexes[slot];
                self.state.thickness_vec[i] = thickness / self.task.t_max;
                self.state.cursor += 1;
                self.layers.push(Layer {
                    material,
                    thickness,
                });
                self.state.cursor == self.task.layer_budget
            }
        };
        self.done = terminal;
        self.trace.steps.push(Step {
            state: before,
            action,
            next_state: self.state.clone(),
            terminal,
        });
        Ok((self.state.clone(), terminal))
    }

    /// Simulates the finished design once and backfills the step returns.
    pub fn finish(&mut self) -> Result<EpisodeOutcome> {
        if !self.done {
            return Err(Error::usage("episode has not terminated"));
        }
        let evaluation = self.evaluate_layers(&self.layers.clone())?;
        // the shaped reward is positive by construction; underflow would only
        // hide a hopeless design, so keep it strictly inside (0, 1]
        let final_reward = evaluation.reward.clamp(f64::MIN_POSITIVE, 1.0);
        let returns = finalize_episode(&self.trace, final_reward, self.gamma)?;
        Ok(EpisodeOutcome {
            trace: std::mem::take(&mut self.trace),
            layers: self.layers.clone(),
            evaluation,
            returns,
        })
    }

    fn evaluate_layers(&mut self, layers: &[Layer]) -> Result<Evaluation> {
        self.sim_calls += 1;
        self.task.evaluate(self.catalog, layers, &self.reward)
    }
}

/// Size of the design space with `thickness_values` discrete thicknesses,
/// `materials` materials and distinct neighbouring materials:
/// `sum_{l=1}^{L} T^l * N * (N-1)^(l-1)`.
pub fn state_space_size(layer_budget: u32, thickness_values: u32, materials: u32) -> BigUint {
    let t = BigUint::from(thickness_values);
    let n = BigUint::from(materials);
    let n1 = BigUint::from(materials.saturating_sub(1));
    let mut total = BigUint::from(0u32);
    let mut t_pow = t.clone();
    let mut n1_pow = BigUint::from(1u32);
    for _ in 1..=layer_budget {
        total += &t_pow * &n * &n1_pow;
        t_pow *= &t;
        n1_pow *= &n1;
    }
    total
}

/// Scientific notation with `digits` significant digits, e.g. `2.24e29`.
pub fn scientific(value: &BigUint, digits: usize) -> String {
    let digits = digits.max(1);
    let mut s = value.to_str_radix(10);
    let exp_base = s.len() - 1;
    while s.len() <= digits {
        s.push('0');
    }
    let mut head: Vec<u8> = s.as_bytes()[..digits].iter().map(|b| b - b'0').collect();
    let mut exp = exp_base;
    if s.as_bytes()[digits] >= b'5' {
        let mut i = digits;
        loop {
            if i == 0 {
                head.insert(0, 1);
                head.pop();
                exp += 1;
                break;
            }
            i -= 1;
            if head[i] == 9 {
                head[i] = 0;
            } else {
                head[i] += 1;
                break;
            }
        }
    }
    let body: String = head.iter().map(|d| char::from(b'0' + d)).collect();
    if digits == 1 {
        format!("{body}e{exp}")
    } else {
        format!("{}.{}e{exp}", &body[..1], &body[1..])
    }
}

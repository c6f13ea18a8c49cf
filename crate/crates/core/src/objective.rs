//! Design objective, reward shaping and the benchmark task definitions.
//!
//! The objective of a design is the negated mean squared deviation of its
//! reflectivity from the target curve, minus a thickness penalty
//! `mu / L * sum(t / t_max)` with `L` the layer budget, so unused slots count
//! as zero thickness and the penalty tracks total thickness. Rewards are
//! `exp(alpha * F)`, with `alpha` calibrated so that a typical random design
//! earns the lower reward bound.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::optics::{
    reflectivity_vector, GridRange, Layer, MaterialCatalog, SpectralGrid, Stack, AIR,
};
use crate::{Error, Result};

pub const DEFAULT_T_MIN: f64 = 1.0;
pub const DEFAULT_T_MAX: f64 = 150.0;
pub const DEFAULT_BETA1: f64 = 0.01;
pub const DEFAULT_BETA2: f64 = 1.0;

/// An inverse-design task: what to hit, where, and with which building blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub id: String,
    pub grid: SpectralGrid,
    /// Target reflectivity, one entry per grid point in angle-major order.
    pub target: Vec<f64>,
    pub layer_budget: usize,
    pub material_ids: Vec<u32>,
    /// Thickness penalty multiplier.
    pub mu: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub substrate_index: Complex64,
    /// Optional lower-bound reflectivity curve, display only.
    pub spec_band: Option<Vec<f64>>,
}

/// Named target curves, evaluated per wavelength (angle independent).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "formula", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetFormula {
    /// `slope * lambda + intercept`
    Linear { slope: f64, intercept: f64 },
    /// `0.5 * (1 - tanh((lambda - edge_nm) / width_nm))`
    TanhEdge {
        edge_nm: f64,
        #[serde(default = "one")]
        width_nm: f64,
    },
    Constant { value: f64 },
}

fn one() -> f64 {
    1.0
}

impl TargetFormula {
    pub fn eval(&self, wavelength: f64) -> f64 {
        match *self {
            TargetFormula::Linear { slope, intercept } => slope * wavelength + intercept,
            TargetFormula::TanhEdge { edge_nm, width_nm } => {
                0.5 * (1.0 - ((wavelength - edge_nm) / width_nm).tanh())
            }
            TargetFormula::Constant { value } => value,
        }
    }

    pub fn sample(&self, grid: &SpectralGrid) -> Vec<f64> {
        grid.points().map(|(_, w)| self.eval(w)).collect()
    }
}

impl TaskSpec {
    pub fn validate(&self, catalog: Option<&MaterialCatalog>) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::config("task id must not be empty"));
        }
        if self.target.len() != self.grid.len() {
            return Err(Error::config(format!(
                "target has {} entries, grid has {}",
                self.target.len(),
                self.grid.len()
            )));
        }
        if self
            .target
            .iter()
            .any(|&t| !(t.is_finite() && (0.0..=1.0).contains(&t)))
        {
            return Err(Error::config("target reflectivity must lie in [0, 1]"));
        }
        if let Some(band) = &self.spec_band {
            if band.len() != self.grid.len()
                || band.iter().any(|&t| !(t.is_finite() && (0.0..=1.0).contains(&t)))
            {
                return Err(Error::config(
                    "spec band must match the grid and lie in [0, 1]",
                ));
            }
        }
        if self.layer_budget == 0 || self.layer_budget > 1024 {
            return Err(Error::config("layer budget must be in 1..=1024"));
        }
        if self.material_ids.is_empty() {
            return Err(Error::config("task needs at least one material"));
        }
        let mut seen = self.material_ids.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.material_ids.len() {
            return Err(Error::config("task materials must be distinct"));
        }
        if let Some(cat) = catalog {
            for &id in &self.material_ids {
                cat.material(id)
                    .map_err(|_| Error::config(format!("task references unknown material {id}")))?;
            }
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(Error::config("penalty multiplier must be non-negative"));
        }
        if !(self.t_min.is_finite()
            && self.t_max.is_finite()
            && self.t_min >= 0.0
            && self.t_max > 0.0
            && self.t_min <= self.t_max)
        {
            return Err(Error::config("thickness range must satisfy 0 <= t_min <= t_max"));
        }
        let s = self.substrate_index;
        if !(s.re.is_finite() && s.im.is_finite() && s.re > 0.0 && s.im >= 0.0) {
            return Err(Error::config("substrate index must be passive"));
        }
        Ok(())
    }

    /// A stack with this task's ambient (air) and substrate.
    pub fn stack(&self, layers: Vec<Layer>) -> Stack {
        Stack {
            layers,
            ambient_index: AIR,
            substrate_index: self.substrate_index,
        }
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = mu;
        self
    }

    /// Simulates `layers` and scores them under `reward`.
    pub fn evaluate(
        &self,
        catalog: &MaterialCatalog,
        layers: &[Layer],
        reward: &RewardParams,
    ) -> Result<Evaluation> {
        let stack = self.stack(layers.to_vec());
        let reflectivity = reflectivity_vector(&stack, catalog, &self.grid)?;
        let thicknesses = stack.thicknesses();
        let mse = mean_squared_error(&reflectivity, &self.target)?;
        let penalty = thickness_penalty(&thicknesses, self.mu, self.t_max, self.layer_budget);
        let objective = -mse - penalty;
        Ok(Evaluation {
            reward: reward.reward(objective),
            unconstrained_reward: reward.reward(-mse),
            objective,
            unconstrained_objective: -mse,
            reflectivity,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TaskFile = serde_json::from_str(text)?;
        file.into_task()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&TaskFile::from(self)).expect("task serializes")
    }

    /// The three benchmark tasks: a linear ramp, a 550 nm edge filter, and an
    /// angle-tolerant narrow-band mirror.
    pub fn builtin(id: &str) -> Option<TaskSpec> {
        let visible = GridRange {
            start: 400.0,
            end: 700.0,
            step: 1.0,
        };
        let (grid, formula, budget, materials, mu) = match id {
            "task1" => (
                SpectralGrid::from_ranges(visible, GridRange::single(0.0)),
                TargetFormula::Linear {
                    slope: 1.0 / 375.0,
                    intercept: -16.0 / 15.0,
                },
                8,
                vec![1, 2, 3, 4],
                0.0,
            ),
            "task2" => (
                SpectralGrid::from_ranges(visible, GridRange::single(0.0)),
                TargetFormula::TanhEdge {
                    edge_nm: 550.0,
                    width_nm: 1.0,
                },
                8,
                vec![1, 2, 3, 4],
                0.0,
            ),
            "task3" => (
                SpectralGrid::from_ranges(
                    GridRange {
                        start: 445.0,
                        end: 455.0,
                        step: 1.0,
                    },
                    GridRange {
                        start: 0.0,
                        end: 60.0,
                        step: 1.0,
                    },
                ),
                TargetFormula::Constant { value: 1.0 },
                34,
                vec![1, 4],
                0.1,
            ),
            _ => return None,
        };
        let grid = grid.expect("builtin grids are valid");
        let target = formula.sample(&grid);
        // the linear ramp overshoots [0, 1] by rounding only at its ends
        let target = target.into_iter().map(|t| t.clamp(0.0, 1.0)).collect();
        Some(TaskSpec {
            id: id.to_string(),
            grid,
            target,
            layer_budget: budget,
            material_ids: materials,
            mu,
            t_min: DEFAULT_T_MIN,
            t_max: DEFAULT_T_MAX,
            substrate_index: AIR,
            spec_band: None,
        })
    }

    pub fn builtin_ids() -> &'static [&'static str] {
        &["task1", "task2", "task3"]
    }
}

/// Outcome of simulating and scoring a design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub reflectivity: Vec<f64>,
    pub objective: f64,
    pub reward: f64,
    /// Objective and reward with the thickness penalty dropped.
    pub unconstrained_objective: f64,
    pub unconstrained_reward: f64,
}

fn mean_squared_error(reflectivity: &[f64], target: &[f64]) -> Result<f64> {
    if reflectivity.len() != target.len() || target.is_empty() {
        return Err(Error::invalid(format!(
            "reflectivity has {} entries, target has {}",
            reflectivity.len(),
            target.len()
        )));
    }
    let sum: f64 = reflectivity
        .iter()
        .zip(target)
        .map(|(r, t)| (r - t) * (r - t))
        .sum();
    Ok(sum / target.len() as f64)
}

/// `mu / budget * sum(t / t_max)`; zero for an empty stack.
fn thickness_penalty(thicknesses: &[f64], mu: f64, t_max: f64, budget: usize) -> f64 {
    if thicknesses.is_empty() || mu == 0.0 {
        return 0.0;
    }
    let normalized: f64 = thicknesses.iter().map(|t| t / t_max).sum();
    mu * normalized / budget.max(thicknesses.len()) as f64
}

/// The constrained design objective, always `<= 0`.
pub fn objective_f(reflectivity: &[f64], task: &TaskSpec, thicknesses: &[f64]) -> Result<f64> {
    if thicknesses.len() > task.layer_budget {
        return Err(Error::invalid("more thicknesses than the layer budget"));
    }
    let mse = mean_squared_error(reflectivity, &task.target)?;
    Ok(-mse - thickness_penalty(thicknesses, task.mu, task.t_max, task.layer_budget))
}

/// Parameters of the exponential reward `r = exp(alpha * F)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Mean magnitude of the objective over random designs.
    pub eta: f64,
}

impl RewardParams {
    /// `alpha = -ln(beta1 / beta2) / eta`, so that `F = -eta` maps to `beta1`.
    pub fn from_eta(eta: f64, beta1: f64, beta2: f64) -> Result<Self> {
        if !(beta1.is_finite() && beta2.is_finite() && beta1 > 0.0 && beta1 < beta2) {
            return Err(Error::Calibration(format!(
                "reward bounds must satisfy 0 < beta1 < beta2, got {beta1} and {beta2}"
            )));
        }
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::Calibration(format!(
                "mean objective magnitude must be positive, got {eta}"
            )));
        }
        let alpha = -(beta1 / beta2).ln() / eta;
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::Calibration(format!("degenerate alpha {alpha}")));
        }
        Ok(RewardParams {
            alpha,
            beta1,
            beta2,
            eta,
        })
    }

    /// Fixed `alpha` with the default bounds; `eta` is back-solved.
    pub fn from_alpha(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
        }
        Ok(RewardParams {
            alpha,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            eta: -(DEFAULT_BETA1 / DEFAULT_BETA2).ln() / alpha,
        })
    }

    pub fn reward(&self, objective: f64) -> f64 {
        (self.alpha * objective).exp()
    }
}

/// Estimates the mean objective magnitude over random full-depth designs and
/// derives `alpha` from it.
pub fn calibrate_alpha(
    task: &TaskSpec,
    catalog: &MaterialCatalog,
    sample_count: usize,
    beta1: f64,
    beta2: f64,
    seed: u64,
) -> Result<RewardParams> {
    if sample_count == 0 {
        return Err(Error::Calibration("sample count must be at least 1".into()));
    }
    task.validate(Some(catalog))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..sample_count {
        let layers: Vec<Layer> = (0..task.layer_budget)
            .map(|_| Layer {
                material: task.material_ids[rng.gen_range(0..task.material_ids.len())],
                thickness: if task.t_min < task.t_max {
                    rng.gen_range(task.t_min..=task.t_max)
                } else {
                    task.t_min
                },
            })
            .collect();
        let stack = task.stack(layers);
        let r = reflectivity_vector(&stack, catalog, &task.grid)?;
        total -= objective_f(&r, task, &stack.thicknesses())?;
    }
    let eta = total / sample_count as f64;
    if eta <= 0.0 {
        return Err(Error::Calibration(
            "every sampled design is perfect; alpha is undefined".into(),
        ));
    }
    RewardParams::from_eta(eta, beta1, beta2)
}

// ---- task file format ----

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    lambda_start: f64,
    lambda_end: f64,
    #[serde(default = "one")]
    lambda_step: f64,
    #[serde(default)]
    phi_start: f64,
    #[serde(default)]
    phi_end: f64,
    #[serde(default = "one")]
    phi_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum TargetFile {
    Explicit(Vec<f64>),
    Formula(TargetFormula),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskFile {
    id: String,
    grid: GridFile,
    target: TargetFile,
    layer_budget: usize,
    materials: Vec<u32>,
    #[serde(default)]
    mu: f64,
    #[serde(default = "default_range")]
    thickness_range_nm: [f64; 2],
    #[serde(default = "default_substrate")]
    substrate: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spec_band: Option<Vec<f64>>,
}

fn default_range() -> [f64; 2] {
    [DEFAULT_T_MIN, DEFAULT_T_MAX]
}

fn default_substrate() -> [f64; 2] {
    [1.0, 0.0]
}

impl TaskFile {
    fn into_task(self) -> Result<TaskSpec> {
        let g = self.grid;
        let grid = SpectralGrid::from_ranges(
            GridRange {
                start: g.lambda_start,
                end: g.lambda_end,
                step: g.lambda_step,
            },
            GridRange {
                start: g.phi_start,
                end: g.phi_end,
                step: g.phi_step,
            },
        )?;
        let target = match self.target {
            TargetFile::Explicit(v) => v,
            TargetFile::Formula(f) => f.sample(&grid),
        };
        let task = TaskSpec {
            id: self.id,
            grid,
            target,
            layer_budget: self.layer_budget,
            material_ids: self.materials,
            mu: self.mu,
            t_min: self.thickness_range_nm[0],
            t_max: self.thickness_range_nm[1],
            substrate_index: Complex64::new(self.substrate[0], self.substrate[1]),
            spec_band: self.spec_band,
        };
        task.validate(None)?;
        Ok(task)
    }
}

impl From<&TaskSpec> for TaskFile {
    fn from(t: &TaskSpec) -> Self {
        let w = t.grid.wavelengths();
        let a = t.grid.angles();
        let step = |v: &[f64]| if v.len() > 1 { v[1] - v[0] } else { 1.0 };
        TaskFile {
            id: t.id.clone(),
            grid: GridFile {
                lambda_start: w[0],
                lambda_end: w[w.len() - 1],
                lambda_step: step(w),
                phi_start: a[0],
                phi_end: a[a.len() - 1],
                phi_step: step(a),
            },
            target: TargetFile::Explicit(t.target.clone()),
            layer_budget: t.layer_budget,
            materials: t.material_ids.clone(),
            mu: t.mu,
            thickness_range_nm: [t.t_min, t.t_max],
            substrate: [t.substrate_index.re, t.substrate_index.im],
            spec_band: t.spec_band.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task2() -> TaskSpec {
        TaskSpec::builtin("task2").unwrap()
    }

    #[test]
    fn perfect_match_scores_zero() {
        let t = task2();
        let f = objective_f(&t.target.clone(), &t, &[]).unwrap();
        assert_eq!(f, 0.0);
    }

    #[test]
    fn constant_offset_mse() {
        let t = task2();
        let r: Vec<f64> = t.target.iter().map(|x| x + 0.1).collect();
        let f = objective_f(&r, &t, &[50.0]).unwrap();
        assert!((f + 0.01).abs() < 1e-12);
    }

    #[test]
    fn thickness_penalty_uses_normalized_mean() {
        let t = task2().with_mu(0.1);
        let f = objective_f(&t.target.clone(), &t, &[75.0; 8]).unwrap();
        assert!((f + 0.05).abs() < 1e-15);
    }

    #[test]
    fn penalty_counts_empty_slots_as_zero() {
        // half the budget at half of t_max: 0.1 * (4 * 0.5) / 8
        let t = task2().with_mu(0.1);
        let f = objective_f(&t.target.clone(), &t, &[75.0; 4]).unwrap();
        assert!((f + 0.025).abs() < 1e-15, "{f}");
        // more thin layers never lower the penalty of a stack
        let thin = objective_f(&t.target.clone(), &t, &[75.0, 75.0, 75.0, 75.0, 1.0]).unwrap();
        assert!(thin < f);
    }

    #[test]
    fn length_mismatch_is_invalid_input() {
        let t = task2();
        assert!(matches!(
            objective_f(&[0.0; 3], &t, &[]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn reward_values() {
        let p = RewardParams::from_alpha(18.42).unwrap();
        assert_eq!(p.reward(0.0), 1.0);
        assert!((p.reward(-0.25) - 0.01).abs() < 1e-4);
        assert!((p.reward(-0.125) - 0.1).abs() < 1e-3);
    }

    #[test]
    fn alpha_from_eta() {
        let p = RewardParams::from_eta(0.25, 0.01, 1.0).unwrap();
        assert!((p.alpha - 18.42).abs() < 0.005);
        let q = RewardParams::from_eta(0.5, 0.01, 1.0).unwrap();
        assert!((q.alpha - 9.21).abs() < 0.005);
        assert!(matches!(
            RewardParams::from_eta(0.25, 0.5, 0.5),
            Err(Error::Calibration(_))
        ));
        assert!(RewardParams::from_eta(0.0, 0.01, 1.0).is_err());
    }

    #[test]
    fn near_optimal_designs_are_discriminated() {
        let p = RewardParams::from_alpha(18.42).unwrap();
        let (r1, r2) = (p.reward(-0.001), p.reward(-0.01));
        assert!(r1 / r2 > 1.18);
        assert!(r1 - r2 > 0.01 - 0.001);
    }

    #[test]
    fn calibration_is_deterministic() {
        let cat = MaterialCatalog::default();
        let t = task2();
        let a = calibrate_alpha(&t, &cat, 20, 0.01, 1.0, 3).unwrap();
        let b = calibrate_alpha(&t, &cat, 20, 0.01, 1.0, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.alpha > 0.0 && a.eta > 0.0);
        let c = calibrate_alpha(&t, &cat, 20, 0.01, 1.0, 4).unwrap();
        assert_ne!(a.eta, c.eta);
    }

    #[test]
    fn calibration_fails_when_every_design_is_perfect() {
        let cat = MaterialCatalog::default();
        let mut t = task2();
        // vanishingly thin layers on air reflect exactly nothing
        t.target = vec![0.0; t.grid.len()];
        t.t_min = 0.0;
        t.t_max = f64::MIN_POSITIVE;
        let err = calibrate_alpha(&t, &cat, 5, 0.01, 1.0, 1).unwrap_err();
        assert!(matches!(err, Error::Calibration(_)), "{err}");
    }

    #[test]
    fn builtin_tasks_match_their_tables() {
        let t1 = TaskSpec::builtin("task1").unwrap();
        assert_eq!(t1.target.len(), 301);
        assert!(t1.target[0].abs() < 1e-12);
        assert!((t1.target[300] - 0.8).abs() < 1e-12);
        let t2 = task2();
        assert!((t2.target[0] - 1.0).abs() < 1e-12);
        assert!((t2.target[150] - 0.5).abs() < 1e-12);
        let t3 = TaskSpec::builtin("task3").unwrap();
        assert_eq!(t3.grid.len(), 11 * 61);
        assert_eq!(t3.layer_budget, 34);
        assert_eq!(t3.material_ids.len(), 2);
        assert!(TaskSpec::builtin("task4").is_none());
    }

    #[test]
    fn task_file_formulas_and_round_trip() {
        let text = r#"{
            "id": "edge",
            "grid": {"lambda_start": 400, "lambda_end": 700, "lambda_step": 1},
            "target": {"formula": "tanh_edge", "edge_nm": 550},
            "layer_budget": 8,
            "materials": [1, 2, 3, 4]
        }"#;
        let t = TaskSpec::from_json(text).unwrap();
        assert_eq!(t.target, task2().target);
        let again = TaskSpec::from_json(&t.to_json()).unwrap();
        assert_eq!(t, again);
    }

    #[test]
    fn task_file_rejects_out_of_range_targets() {
        let text = r#"{
            "id": "bad", "grid": {"lambda_start": 400, "lambda_end": 410},
            "target": {"formula": "constant", "value": 1.5},
            "layer_budget": 2, "materials": [1, 2]
        }"#;
        assert!(TaskSpec::from_json(text).is_err());
        let short = r#"{
            "id": "bad", "grid": {"lambda_start": 400, "lambda_end": 410},
            "target": [0.5, 0.5],
            "layer_budget": 2, "materials": [1, 2]
        }"#;
        assert!(TaskSpec::from_json(short).is_err());
    }
}

//! Central-difference verification of [`Mlp::backward`].
//!
//! The probe loss is `sum(w * net(x))` for a fixed weight matrix `w`, whose
//! output gradient is exactly `w`.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Activation, Mlp};
use crate::Result;

pub const DEFAULT_STEP: f64 = 1e-5;
/// Below this absolute disagreement an entry counts as matching regardless of scale.
pub const NEAR_ZERO: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|a - n| / max(|a|, |n|)` over entries that disagree by more than [`NEAR_ZERO`].
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    pub entries_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_relative_error < rel_tol
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        let diff = (analytic - numeric).abs();
        self.entries_checked += 1;
        self.max_absolute_error = self.max_absolute_error.max(diff);
        if diff > NEAR_ZERO {
            let rel = diff / analytic.abs().max(numeric.abs());
            self.max_relative_error = self.max_relative_error.max(rel);
        }
    }

    fn merge(&mut self, other: GradCheckReport) {
        self.max_relative_error = self.max_relative_error.max(other.max_relative_error);
        self.max_absolute_error = self.max_absolute_error.max(other.max_absolute_error);
        self.entries_checked += other.entries_checked;
    }
}

fn probe(net: &Mlp<f64>, input: ArrayView2<f64>, weights: ArrayView2<f64>) -> Result<f64> {
    Ok((net.predict(input)? * weights).sum())
}

/// Compares every parameter and input gradient against central differences.
pub fn check(
    net: &Mlp<f64>,
    input: ArrayView2<f64>,
    output_weights: ArrayView2<f64>,
    step: f64,
) -> Result<GradCheckReport> {
    let (_, cache) = net.forward(input)?;
    let (grads, input_grad) = net.backward(&cache, output_weights);
    let analytic = grads.flat();

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
        entries_checked: 0,
    };
    let base = net.params_flat();
    let mut probe_net = net.clone();
    let mut params = base.clone();
    for i in 0..base.len() {
        params[i] = base[i] + step;
        probe_net.set_params_flat(&params)?;
        let up = probe(&probe_net, input, output_weights)?;
        params[i] = base[i] - step;
        probe_net.set_params_flat(&params)?;
        let down = probe(&probe_net, input, output_weights)?;
        params[i] = base[i];
        report.record(analytic[i], (up - down) / (2.0 * step));
    }

    let mut x = input.to_owned();
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let orig = x[[r, c]];
        x[[r, c]] = orig + step;
        let up = probe(net, x.view(), output_weights)?;
        x[[r, c]] = orig - step;
        let down = probe(net, x.view(), output_weights)?;
        x[[r, c]] = orig;
        report.record(input_grad[[r, c]], (up - down) / (2.0 * step));
    }
    Ok(report)
}

/// A random small network (at most 32 units per hidden layer) with input and probe weights.
pub fn random_case(seed: u64) -> Result<(Mlp<f64>, Array2<f64>, Array2<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = rng.gen_range(1..=8);
    let outputs = rng.gen_range(1..=5);
    let hidden = rng.gen_range(1..=2);
    let mut sizes = vec![inputs];
    sizes.extend((0..hidden).map(|_| rng.gen_range(2..=32)));
    sizes.push(outputs);
    let output = if rng.gen_bool(0.5) {
        Activation::Identity
    } else {
        Activation::Sigmoid
    };
    let net = Mlp::new(&sizes, output, rng.gen())?;
    let batch = rng.gen_range(1..=4);
    let x = Array2::from_shape_simple_fn((batch, inputs), || rng.gen_range(-1.0..1.0));
    let w = Array2::from_shape_simple_fn((batch, outputs), || rng.gen_range(-1.0..1.0));
    Ok((net, x, w))
}

/// Runs [`check`] over `count` random cases and merges the reports.
pub fn check_random(count: usize, seed: u64) -> Result<GradCheckReport> {
    let mut total = GradCheckReport {
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
        entries_checked: 0,
    };
    for i in 0..count as u64 {
        let (net, x, w) = random_case(seed.wrapping_add(i))?;
        total.merge(check(&net, x.view(), w.view(), DEFAULT_STEP)?);
    }
    Ok(total)
}

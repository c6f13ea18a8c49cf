//! Dense feed-forward networks with hand-written reverse-mode gradients.
//!
//! Networks are generic over the float type: agents train in `f32` for speed,
//! gradient verification runs in `f64`.

mod adam;
pub mod checkpoint;
pub mod gradcheck;

use std::fmt::{Debug, Display};

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;

use crate::{Error, Result};

/// Float types the networks can run in.
pub trait Scalar:
    LinalgScalar
    + Float
    + FromPrimitive
    + ToPrimitive
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + 'static
{
    const NAME: &'static str;

    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite conversion")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float to f64")
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    /// Logistic squash onto `(0, 1)`.
    Sigmoid,
}

impl Activation {
    fn apply<T: Scalar>(self, z: &mut Array2<T>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => z.mapv_inplace(|x| if x > T::zero() { x } else { T::zero() }),
            Activation::Sigmoid => z.mapv_inplace(|x| T::one() / (T::one() + (-x).exp())),
        }
    }

    /// Multiplies `grad` in place by the derivative, expressed through the activation output `a`.
    fn backprop<T: Scalar>(self, a: &Array2<T>, grad: &mut Array2<T>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => Zip::from(grad).and(a).for_each(|g, &a| {
                if a <= T::zero() {
                    *g = T::zero();
                }
            }),
            Activation::Sigmoid => Zip::from(grad)
                .and(a)
                .for_each(|g, &a| *g *= a * (T::one() - a)),
        }
    }
}

/// One affine layer, `y = x W + b` with `W` of shape `(inputs, outputs)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weights: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Dense<T> {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            weights: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    fn zeros_like(&self) -> Self {
        Dense::zeros(self.weights.nrows(), self.weights.ncols())
    }
}

/// Multilayer perceptron with rectifier hidden layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    layers: Vec<Dense<T>>,
    output: Activation,
    seed: u64,
}

/// Per-layer activations from a forward pass; `acts[0]` is the input.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    acts: Vec<Array2<T>>,
}

/// Parameter gradients, shaped like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().all(|x| x.is_finite()) && l.bias.iter().all(|x| x.is_finite())
        })
    }

    pub fn flat(&self) -> Vec<T> {
        flatten(&self.layers)
    }
}

fn flatten<T: Scalar>(layers: &[Dense<T>]) -> Vec<T> {
    let mut out = Vec::new();
    for l in layers {
        out.extend(l.weights.iter().copied());
        out.extend(l.bias.iter().copied());
    }
    out
}

impl<T: Scalar> Mlp<T> {
    /// Builds a network for `sizes = [input, hidden..., output]` with uniform
    /// fan-in initialization `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new(sizes: &[usize], output: Activation, seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::config(
                "a network needs at least input and output sizes, all non-zero",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let mut draw = || T::of(rng.gen_range(-bound..bound));
                let weights = Array2::from_shape_simple_fn((w[0], w[1]), &mut draw);
                let bias = Array1::from_shape_simple_fn(w[1], &mut draw);
                Dense { weights, bias }
            })
            .collect();
        Ok(Mlp {
            layers,
            output,
            seed,
        })
    }

    pub(crate) fn from_layers(layers: Vec<Dense<T>>, output: Activation, seed: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("network has no layers"));
        }
        for w in layers.windows(2) {
            if w[0].weights.ncols() != w[1].weights.nrows() {
                return Err(Error::config("layer shapes do not chain"));
            }
        }
        if layers.iter().any(|l| l.bias.len() != l.weights.ncols()) {
            return Err(Error::config("bias length does not match layer width"));
        }
        Ok(Mlp {
            layers,
            output,
            seed,
        })
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<T>] {
        &mut self.layers
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_size()];
        s.extend(self.layers.iter().map(|l| l.weights.ncols()));
        s
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_size(&self) -> usize {
        self.layers[self.layers.len() - 1].weights.ncols()
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Parameters in checkpoint order: per layer, weights row-major then bias.
    pub fn params_flat(&self) -> Vec<T> {
        flatten(&self.layers)
    }

    pub fn set_params_flat(&mut self, params: &[T]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        Ok(())
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            Activation::Relu
        }
    }

    fn check_input(&self, input: &ArrayView2<T>) -> Result<()> {
        if input.ncols() != self.input_size() {
            return Err(Error::usage(format!(
                "network expects {} inputs, got {}",
                self.input_size(),
                input.ncols()
            )));
        }
        Ok(())
    }

    /// Batched forward pass over the rows of `input`, keeping what backward needs.
    pub fn forward(&self, input: ArrayView2<T>) -> Result<(Array2<T>, ForwardCache<T>)> {
        self.check_input(&input)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_owned());
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = acts[i].dot(&l.weights);
            z += &l.bias;
            self.activation(i).apply(&mut z);
            acts.push(z);
        }
        let out = acts[acts.len() - 1].clone();
        Ok((out, ForwardCache { acts }))
    }

    /// Forward pass without a cache.
    pub fn predict(&self, input: ArrayView2<T>) -> Result<Array2<T>> {
        self.check_input(&input)?;
        let mut a = input.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = a.dot(&l.weights);
            z += &l.bias;
            self.activation(i).apply(&mut z);
            a = z;
        }
        Ok(a)
    }

    pub fn predict_one(&self, input: &[T]) -> Result<Vec<T>> {
        let view = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::usage(e.to_string()))?;
        Ok(self.predict(view)?.into_raw_vec_and_offset().0)
    }

    /// Reverse pass: parameter gradients and the gradient with respect to the input.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        grad_output: ArrayView2<T>,
    ) -> (Gradients<T>, Array2<T>) {
        let (grads, input_grad) = self.reverse(cache, grad_output, true);
        (grads.expect("parameter gradients requested"), input_grad)
    }

    /// Only the gradient with respect to the input; parameters are treated as constants.
    pub fn input_gradient(&self, cache: &ForwardCache<T>, grad_output: ArrayView2<T>) -> Array2<T> {
        self.reverse(cache, grad_output, false).1
    }

    fn reverse(
        &self,
        cache: &ForwardCache<T>,
        grad_output: ArrayView2<T>,
        want_params: bool,
    ) -> (Option<Gradients<T>>, Array2<T>) {
        let n = self.layers.len();
        let mut grads: Vec<Dense<T>> = if want_params {
            self.layers.iter().map(Dense::zeros_like).collect()
        } else {
            Vec::new()
        };
        let mut delta = grad_output.to_owned();
        for i in (0..n).rev() {
            self.activation(i).backprop(&cache.acts[i + 1], &mut delta);
            if want_params {
                grads[i].weights = cache.acts[i].t().dot(&delta);
                grads[i].bias = delta.sum_axis(Axis(0));
            }
            delta = delta.dot(&self.layers[i].weights.t());
        }
        (want_params.then_some(Gradients { layers: grads }), delta)
    }

    /// `self <- tau * source + (1 - tau) * self`, elementwise.
    pub fn polyak_from(&mut self, source: &Mlp<T>, tau: T) -> Result<()> {
        if self.sizes() != source.sizes() {
            return Err(Error::usage("polyak update between differently shaped networks"));
        }
        let keep = T::one() - tau;
        for (dst, src) in self.layers.iter_mut().zip(&source.layers) {
            Zip::from(&mut dst.weights)
                .and(&src.weights)
                .for_each(|d, &s| *d = tau * s + keep * *d);
            Zip::from(&mut dst.bias)
                .and(&src.bias)
                .for_each(|d, &s| *d = tau * s + keep * *d);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_weights_output_activation_of_bias() {
        let mut net = Mlp::<f64>::new(&[3, 4, 2], Activation::Sigmoid, 1).unwrap();
        for l in net.layers_mut() {
            l.weights.fill(0.0);
        }
        net.layers_mut()[0].bias.fill(0.0);
        net.layers_mut()[1].bias = array![0.0, 2.0];
        let y = net.predict_one(&[5.0, -1.0, 3.0]).unwrap();
        assert!((y[0] - 0.5).abs() < 1e-15);
        assert!((y[1] - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn identity_linear_layer_passes_input_through() {
        let mut net = Mlp::<f64>::new(&[3, 3], Activation::Identity, 1).unwrap();
        net.layers_mut()[0].weights = Array2::eye(3);
        net.layers_mut()[0].bias.fill(0.0);
        assert_eq!(net.predict_one(&[1.0, -2.0, 3.5]).unwrap(), vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn sigmoid_head_stays_in_unit_interval() {
        let net = Mlp::<f64>::new(&[2, 8, 3], Activation::Sigmoid, 9).unwrap();
        for x in [-100.0, -1.0, 0.0, 1.0, 100.0] {
            for y in net.predict_one(&[x, -x]).unwrap() {
                assert!((0.0..=1.0).contains(&y));
            }
        }
    }

    #[test]
    fn linear_input_gradient_is_transposed_weights() {
        let mut net = Mlp::<f64>::new(&[2, 3], Activation::Identity, 1).unwrap();
        let w = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        net.layers_mut()[0].weights = w.clone();
        let x = array![[0.3, -0.7]];
        let (_, cache) = net.forward(x.view()).unwrap();
        let g = array![[1.0, 0.5, -2.0]];
        let (_, gi) = net.backward(&cache, g.view());
        let expected = g.dot(&w.t());
        assert_eq!(gi, expected);
        assert_eq!(net.input_gradient(&cache, g.view()), expected);
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradients() {
        let net = Mlp::<f64>::new(&[3, 5, 2], Activation::Identity, 2).unwrap();
        let x = array![[0.1, 0.2, 0.3], [1.0, -1.0, 0.5]];
        let (_, cache) = net.forward(x.view()).unwrap();
        let (g, gi) = net.backward(&cache, Array2::zeros((2, 2)).view());
        assert!(g.flat().iter().all(|&v| v == 0.0));
        assert!(gi.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_a_usage_error() {
        let net = Mlp::<f64>::new(&[3, 2], Activation::Identity, 2).unwrap();
        assert!(matches!(
            net.forward(Array2::zeros((1, 4)).view()),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn flat_params_round_trip() {
        let a = Mlp::<f32>::new(&[4, 6, 3], Activation::Sigmoid, 5).unwrap();
        let mut b = Mlp::<f32>::new(&[4, 6, 3], Activation::Sigmoid, 6).unwrap();
        assert_ne!(a, b);
        b.set_params_flat(&a.params_flat()).unwrap();
        assert_eq!(a.params_flat(), b.params_flat());
        assert!(b.set_params_flat(&[0.0; 3]).is_err());
    }

    #[test]
    fn polyak_extremes_and_midpoint() {
        let src = Mlp::<f64>::new(&[2, 3, 1], Activation::Identity, 1).unwrap();
        let orig = Mlp::<f64>::new(&[2, 3, 1], Activation::Identity, 2).unwrap();
        let mut t = orig.clone();
        t.polyak_from(&src, 0.0).unwrap();
        assert_eq!(t, orig);
        t.polyak_from(&src, 1.0).unwrap();
        assert_eq!(t.params_flat(), src.params_flat());

        let mut a = Mlp::<f64>::new(&[1, 1], Activation::Identity, 0).unwrap();
        let mut b = a.clone();
        a.set_params_flat(&[2.0, 2.0]).unwrap();
        b.set_params_flat(&[1.0, 1.0]).unwrap();
        b.polyak_from(&a, 0.01).unwrap();
        for p in b.params_flat() {
            assert!((p - 1.01).abs() < 1e-15);
        }
    }

    #[test]
    fn initialization_is_seeded() {
        let a = Mlp::<f64>::new(&[4, 8, 2], Activation::Identity, 11).unwrap();
        let b = Mlp::<f64>::new(&[4, 8, 2], Activation::Identity, 11).unwrap();
        assert_eq!(a, b);
        let bound = 0.5;
        assert!(a.layers()[0].weights.iter().all(|w| w.abs() <= bound));
    }
}

use ndarray::Zip;

use super::{Dense, Gradients, Mlp, Scalar};
use crate::{Error, Result};

/// Adam with bias correction, one instance per network.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: u64,
    m: Vec<Dense<T>>,
    v: Vec<Dense<T>>,
}

impl<T: Scalar> Adam<T> {
    /// Standard moments `(0.9, 0.999)` and `eps = 1e-8`.
    pub fn new(net: &Mlp<T>, lr: f64) -> Self {
        Adam::with_moments(net, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_moments(net: &Mlp<T>, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Dense<T>> = net.layers().iter().map(Dense::zeros_like).collect();
        Adam {
            lr: T::of(lr),
            beta1: T::of(beta1),
            beta2: T::of(beta2),
            eps: T::of(eps),
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Descends along `grads`. Non-finite gradients are rejected before any
    /// parameter or moment is touched.
    pub fn step(&mut self, net: &mut Mlp<T>, grads: &Gradients<T>) -> Result<()> {
        if grads.layers.len() != self.m.len()
            || grads
                .layers
                .iter()
                .zip(&self.m)
                .any(|(g, m)| g.weights.dim() != m.weights.dim())
        {
            return Err(Error::usage("gradient shapes do not match the optimizer"));
        }
        if !grads.is_finite() {
            return Err(Error::training("non-finite gradient"));
        }
        self.step += 1;
        let t = self.step as i32;
        let one = T::one();
        let c1 = one - self.beta1.powi(t);
        let c2 = one - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let update = |p: &mut T, m: &mut T, v: &mut T, g: T| {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (((layer, m), v), g) in net
            .layers_mut()
            .iter_mut()
            .zip(&mut self.m)
            .zip(&mut self.v)
            .zip(&grads.layers)
        {
            Zip::from(&mut layer.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .and(&g.weights)
                .for_each(|p, m, v, &g| update(p, m, v, g));
            Zip::from(&mut layer.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&g.bias)
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
        Ok(())
    }
}

//! Coherent transfer-matrix (characteristic matrix) reflectance of planar multilayers.
//!
//! Indexes enter in the `n + ik` convention with `k >= 0` for absorbing media.
//! Internally the characteristic-matrix formulation uses the conjugate
//! `n - ik`, for which the per-layer matrix is
//!
//! ```text
//! | cos d        i sin d / y |
//! | i y sin d    cos d       |
//! ```
//!
//! with phase `d = 2 pi q t / lambda`, `q = N cos(theta)` from complex Snell
//! refraction, and tilted admittance `y = q` (s) or `y = N^2 / q` (p).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarization {
    S,
    P,
}

/// A homogeneous film resolved to its index at one wavelength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Film {
    pub index: Complex64,
    pub thickness: f64,
}

/// Single-pass amplitude attenuation (in nepers) beyond which a film is treated as opaque.
const OPAQUE_ATTENUATION: f64 = 300.0;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// `N cos(theta)` inside a medium, on the decaying branch (`Im <= 0` for `n - ik`).
fn normal_component(index: Complex64, invariant: Complex64) -> Complex64 {
    let mut q = (index * index - invariant * invariant).sqrt();
    if q.im > 0.0 || (q.im == 0.0 && q.re < 0.0) {
        q = -q;
    }
    if q.norm_sqr() == 0.0 {
        // grazing propagation exactly at the critical angle
        q = Complex64::new(0.0, -1e-150);
    }
    q
}

fn admittance(index: Complex64, q: Complex64, pol: Polarization) -> Complex64 {
    match pol {
        Polarization::S => q,
        Polarization::P => index * index / q,
    }
}

/// Power reflectance of `films` between semi-infinite `ambient` and `substrate`.
///
/// `angle_deg` is the incidence angle in the ambient medium. The result is
/// clamped to `[0, 1]` to absorb rounding at total reflection.
pub fn reflectance(
    ambient: Complex64,
    films: &[Film],
    substrate: Complex64,
    wavelength: f64,
    angle_deg: f64,
    pol: Polarization,
) -> f64 {
    let ambient = ambient.conj();
    let mut substrate = substrate.conj();
    let invariant = ambient * angle_deg.to_radians().sin();

    let q0 = normal_component(ambient, invariant);
    let y0 = admittance(ambient, q0, pol);

    // running product of characteristic matrices, row-major
    let (mut m11, mut m12, mut m21, mut m22) = (
        Complex64::new(1.0, 0.0),
        Complex64::new(0.0, 0.0),
        Complex64::new(0.0, 0.0),
        Complex64::new(1.0, 0.0),
    );
    let k0 = 2.0 * std::f64::consts::PI / wavelength;
    for film in films {
        if film.thickness == 0.0 {
            continue;
        }
        let n = film.index.conj();
        let q = normal_component(n, invariant);
        let delta = q * (k0 * film.thickness);
        if delta.im < -OPAQUE_ATTENUATION {
            // nothing returns through this film; it acts as the substrate
            substrate = n;
            break;
        }
        let y = admittance(n, q, pol);
        let (c, s) = (delta.cos(), delta.sin());
        let a12 = I * s / y;
        let a21 = I * y * s;
        let (n11, n12, n21, n22) = (
            m11 * c + m12 * a21,
            m11 * a12 + m12 * c,
            m21 * c + m22 * a21,
            m21 * a12 + m22 * c,
        );
        m11 = n11;
        m12 = n12;
        m21 = n21;
        m22 = n22;
    }

    let qs = normal_component(substrate, invariant);
    let ys = admittance(substrate, qs, pol);
    let b = m11 + m12 * ys;
    let c = m21 + m22 * ys;
    let r = (y0 * b - c) / (y0 * b + c);
    r.norm_sqr().clamp(0.0, 1.0)
}

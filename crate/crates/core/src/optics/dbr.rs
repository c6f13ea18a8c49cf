use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{Film, Layer, Stack};
use crate::{Error, Result};
use num_complex::Complex64;

/// A quarter-wave Bragg reflector whose first-order stopband ends at `band_edge`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbrSpec {
    pub n1: f64,
    pub n2: f64,
    pub band_edge: f64,
    /// Stopband center `lambda0`, nm.
    pub center_wavelength: f64,
    /// Stopband width, nm.
    pub stopband_width: f64,
    /// Low-index layer thickness, nm.
    pub t1: f64,
    /// High-index layer thickness, nm.
    pub t2: f64,
    pub periods: usize,
}

/// Solves `dl = (4/pi) l0 asin|(n2-n1)/(n2+n1)|`, `l0 + dl = band_edge` for the
/// stopband center and sizes both layers to a quarter wave at that center.
pub fn design_dbr(n1: f64, n2: f64, band_edge: f64, periods: usize) -> Result<DbrSpec> {
    if !(n1.is_finite() && n2.is_finite() && n1 > 0.0) {
        return Err(Error::invalid("refractive indexes must be positive"));
    }
    if n1 >= n2 {
        return Err(Error::invalid(format!(
            "low index n1={n1} must be below high index n2={n2}"
        )));
    }
    if !(band_edge.is_finite() && band_edge > 0.0) {
        return Err(Error::invalid("band edge must be positive"));
    }
    if periods == 0 {
        return Err(Error::invalid("a reflector needs at least one period"));
    }
    let relative_width = 4.0 / PI * ((n2 - n1) / (n2 + n1)).abs().asin();
    let center = band_edge / (1.0 + relative_width);
    Ok(DbrSpec {
        n1,
        n2,
        band_edge,
        center_wavelength: center,
        stopband_width: band_edge - center,
        t1: center / (4.0 * n1),
        t2: center / (4.0 * n2),
        periods,
    })
}

impl DbrSpec {
    pub fn total_thickness(&self) -> f64 {
        self.periods as f64 * (self.t1 + self.t2)
    }

    /// Low/high bilayers, low-index film first, as lossless films.
    pub fn films(&self) -> Vec<Film> {
        let low = Film {
            index: Complex64::new(self.n1, 0.0),
            thickness: self.t1,
        };
        let high = Film {
            index: Complex64::new(self.n2, 0.0),
            thickness: self.t2,
        };
        (0..self.periods).flat_map(|_| [low, high]).collect()
    }

    /// The reflector as a free-standing stack of catalog materials.
    pub fn stack(&self, low_material: u32, high_material: u32) -> Stack {
        let layers = (0..self.periods)
            .flat_map(|_| {
                [
                    Layer {
                        material: low_material,
                        thickness: self.t1,
                    },
                    Layer {
                        material: high_material,
                        thickness: self.t2,
                    },
                ]
            })
            .collect();
        Stack::free_standing(layers)
    }
}

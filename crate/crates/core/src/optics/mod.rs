//! Forward optical model: materials, spectral grids, layer stacks and their
//! reflectivity, plus the analytic Bragg-reflector designer.

mod dbr;
mod material;
pub mod tmm;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use dbr::{design_dbr, DbrSpec};
pub use material::{
    Dispersion, DispersionSample, Material, MaterialCatalog, DEFAULT_REFERENCE_WAVELENGTH,
};
pub use tmm::{Film, Polarization};

use crate::{Error, Result};

pub const AIR: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// Inclusive `start..=end` sampled every `step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRange {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl GridRange {
    pub fn single(value: f64) -> Self {
        GridRange {
            start: value,
            end: value,
            step: 1.0,
        }
    }

    pub fn values(&self) -> Result<Vec<f64>> {
        let GridRange { start, end, step } = *self;
        if !(start.is_finite() && end.is_finite() && step.is_finite()) {
            return Err(Error::config("grid range must be finite"));
        }
        if end < start {
            return Err(Error::config("grid range end precedes start"));
        }
        if start == end {
            return Ok(vec![start]);
        }
        if step <= 0.0 {
            return Err(Error::config("grid step must be positive"));
        }
        let count = ((end - start) / step + 1e-9).floor();
        if count > 1e6 {
            return Err(Error::config("grid has too many points"));
        }
        Ok((0..=count as usize)
            .map(|i| start + i as f64 * step)
            .collect())
    }
}

/// Upper bound on wavelength-angle pairs in one grid.
pub const MAX_GRID_POINTS: usize = 1_000_000;

/// Wavelengths (nm) and incidence angles (degrees) at which a design is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralGrid {
    wavelengths: Vec<f64>,
    angles: Vec<f64>,
}

impl SpectralGrid {
    pub fn new(wavelengths: Vec<f64>, angles: Vec<f64>) -> Result<Self> {
        if wavelengths.is_empty() || angles.is_empty() {
            return Err(Error::config("spectral grid must be non-empty"));
        }
        if wavelengths.iter().any(|&w| !(w.is_finite() && w > 0.0)) {
            return Err(Error::config("wavelengths must be positive"));
        }
        if angles.iter().any(|&a| !(a.is_finite() && (0.0..90.0).contains(&a))) {
            return Err(Error::config("angles must lie in [0, 90) degrees"));
        }
        if wavelengths.len().saturating_mul(angles.len()) > MAX_GRID_POINTS {
            return Err(Error::config("grid has too many points"));
        }
        Ok(SpectralGrid {
            wavelengths,
            angles,
        })
    }

    pub fn from_ranges(wavelengths: GridRange, angles: GridRange) -> Result<Self> {
        SpectralGrid::new(wavelengths.values()?, angles.values()?)
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn len(&self) -> usize {
        self.wavelengths.len() * self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(angle, wavelength)` pairs, angle-major.
    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.angles
            .iter()
            .flat_map(move |&a| self.wavelengths.iter().map(move |&w| (a, w)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub material: u32,
    #[serde(rename = "thickness_nm")]
    pub thickness: f64,
}

/// A multilayer between a semi-infinite ambient (light side) and substrate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stack {
    pub layers: Vec<Layer>,
    #[serde(default = "air", rename = "ambient")]
    pub ambient_index: Complex64,
    #[serde(default = "air", rename = "substrate")]
    pub substrate_index: Complex64,
}

fn air() -> Complex64 {
    AIR
}

impl Stack {
    pub fn new(ambient_index: Complex64, substrate_index: Complex64) -> Self {
        Stack {
            layers: Vec::new(),
            ambient_index,
            substrate_index,
        }
    }

    /// Air on both sides.
    pub fn free_standing(layers: Vec<Layer>) -> Self {
        Stack {
            layers,
            ambient_index: AIR,
            substrate_index: AIR,
        }
    }

    pub fn push(&mut self, material: u32, thickness: f64) {
        self.layers.push(Layer {
            material,
            thickness,
        });
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn total_thickness(&self) -> f64 {
        self.layers.iter().map(|l| l.thickness).sum()
    }

    pub fn thicknesses(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.thickness).collect()
    }

    /// Checks layer count, thickness range and material ids.
    pub fn validate(
        &self,
        catalog: &MaterialCatalog,
        max_layers: usize,
        t_min: f64,
        t_max: f64,
    ) -> Result<()> {
        if self.layers.len() > max_layers {
            return Err(Error::invalid(format!(
                "stack has {} layers, budget is {max_layers}",
                self.layers.len()
            )));
        }
        for (i, l) in self.layers.iter().enumerate() {
            catalog.material(l.material)?;
            if !(l.thickness >= t_min && l.thickness <= t_max) {
                return Err(Error::invalid(format!(
                    "layer {i}: thickness {} outside [{t_min}, {t_max}] nm",
                    l.thickness
                )));
            }
        }
        self.check_media()
    }

    fn check_media(&self) -> Result<()> {
        for (what, n) in [("ambient", self.ambient_index), ("substrate", self.substrate_index)] {
            if !(n.re.is_finite() && n.im.is_finite() && n.re > 0.0 && n.im >= 0.0) {
                return Err(Error::invalid(format!("{what} index must be passive")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let stack: Stack = serde_json::from_str(text)?;
        stack.check_media()?;
        if stack
            .layers
            .iter()
            .any(|l| !(l.thickness.is_finite() && l.thickness >= 0.0))
        {
            return Err(Error::invalid("layer thicknesses must be finite and non-negative"));
        }
        Ok(stack)
    }

    fn films(&self, catalog: &MaterialCatalog, wavelength: f64) -> Result<Vec<Film>> {
        self.layers
            .iter()
            .map(|l| {
                Ok(Film {
                    index: catalog.material(l.material)?.refractive_index(wavelength)?,
                    thickness: l.thickness,
                })
            })
            .collect()
    }
}

/// Reflectance of `stack` for one polarization.
pub fn reflectivity(
    stack: &Stack,
    catalog: &MaterialCatalog,
    wavelength: f64,
    angle_deg: f64,
    polarization: Polarization,
) -> Result<f64> {
    if !(wavelength.is_finite() && wavelength > 0.0) {
        return Err(Error::invalid("wavelength must be positive"));
    }
    if !(angle_deg.is_finite() && (0.0..90.0).contains(&angle_deg)) {
        return Err(Error::invalid("angle must lie in [0, 90) degrees"));
    }
    let films = stack.films(catalog, wavelength)?;
    Ok(tmm::reflectance(
        stack.ambient_index,
        &films,
        stack.substrate_index,
        wavelength,
        angle_deg,
        polarization,
    ))
}

/// Unpolarized reflectivity `(R_s + R_p) / 2` at every grid point, angle-major.
pub fn reflectivity_vector(
    stack: &Stack,
    catalog: &MaterialCatalog,
    grid: &SpectralGrid,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(grid.len());
    let per_wavelength = grid
        .wavelengths()
        .iter()
        .map(|&w| stack.films(catalog, w))
        .collect::<Result<Vec<_>>>()?;
    for &angle in grid.angles() {
        for (&w, films) in grid.wavelengths().iter().zip(&per_wavelength) {
            let rs = tmm::reflectance(
                stack.ambient_index,
                films,
                stack.substrate_index,
                w,
                angle,
                Polarization::S,
            );
            // s and p coincide at normal incidence
            let rp = if angle == 0.0 {
                rs
            } else {
                tmm::reflectance(
                    stack.ambient_index,
                    films,
                    stack.substrate_index,
                    w,
                    angle,
                    Polarization::P,
                )
            };
            out.push(0.5 * (rs + rp));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_counts() {
        let g = SpectralGrid::from_ranges(
            GridRange {
                start: 400.0,
                end: 700.0,
                step: 1.0,
            },
            GridRange::single(0.0),
        )
        .unwrap();
        assert_eq!(g.len(), 301);
        let g3 = SpectralGrid::from_ranges(
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
        )
        .unwrap();
        assert_eq!(g3.len(), 11 * 61);
        let pts: Vec<_> = g3.points().take(12).collect();
        assert_eq!(pts[10], (0.0, 455.0));
        assert_eq!(pts[11], (1.0, 445.0));
    }

    #[test]
    fn grid_rejects_bad_angles() {
        assert!(SpectralGrid::new(vec![500.0], vec![90.0]).is_err());
        assert!(SpectralGrid::new(vec![0.0], vec![0.0]).is_err());
        assert!(SpectralGrid::new(vec![], vec![0.0]).is_err());
    }

    #[test]
    fn empty_air_stack_reflects_nothing() {
        let cat = MaterialCatalog::default();
        let grid = SpectralGrid::new(vec![400.0, 550.0, 700.0], vec![0.0, 30.0]).unwrap();
        let r = reflectivity_vector(&Stack::free_standing(vec![]), &cat, &grid).unwrap();
        assert_eq!(r, vec![0.0; 6]);
    }

    #[test]
    fn unknown_material_is_rejected() {
        let cat = MaterialCatalog::default();
        let stack = Stack::free_standing(vec![Layer {
            material: 9,
            thickness: 10.0,
        }]);
        assert!(reflectivity(&stack, &cat, 500.0, 0.0, Polarization::S).is_err());
    }

    #[test]
    fn stack_json_defaults_to_air() {
        let s = Stack::from_json(r#"{"layers":[{"material":1,"thickness_nm":72.85}]}"#).unwrap();
        assert_eq!(s.ambient_index, AIR);
        assert_eq!(s.substrate_index, AIR);
        assert!(Stack::from_json(r#"{"layers":[],"substrate":[-1.0,0.0]}"#).is_err());
    }

    #[test]
    fn stack_validation_enforces_budget_and_range() {
        let cat = MaterialCatalog::default();
        let mut s = Stack::free_standing(vec![]);
        s.push(1, 50.0);
        s.push(2, 151.0);
        assert!(s.validate(&cat, 8, 1.0, 150.0).is_err());
        s.layers[1].thickness = 150.0;
        assert!(s.validate(&cat, 8, 1.0, 150.0).is_ok());
        assert!(s.validate(&cat, 1, 1.0, 150.0).is_err());
    }
}

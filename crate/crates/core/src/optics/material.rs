use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default wavelength (nm) at which materials are summarized by a single real index.
pub const DEFAULT_REFERENCE_WAVELENGTH: f64 = 550.0;

/// One sample of a tabulated dispersion curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispersionSample {
    pub wavelength: f64,
    pub index: Complex64,
}

/// Wavelength dependence of a material's complex refractive index `n + ik`.
#[derive(Debug, Clone, PartialEq)]
pub enum Dispersion {
    Constant(Complex64),
    /// Samples ordered by strictly increasing wavelength.
    Table(Vec<DispersionSample>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Material {
    pub id: u32,
    pub name: String,
    pub dispersion: Dispersion,
}

fn check_index(index: Complex64, what: &str) -> Result<()> {
    if !(index.re.is_finite() && index.im.is_finite()) {
        return Err(Error::config(format!("{what}: refractive index is not finite")));
    }
    if index.re <= 0.0 {
        return Err(Error::config(format!(
            "{what}: real part of refractive index must be positive, got {}",
            index.re
        )));
    }
    if index.im < 0.0 {
        return Err(Error::config(format!(
            "{what}: imaginary part of refractive index must be non-negative, got {}",
            index.im
        )));
    }
    Ok(())
}

impl Material {
    pub fn constant(id: u32, name: impl Into<String>, index: Complex64) -> Result<Self> {
        let m = Material {
            id,
            name: name.into(),
            dispersion: Dispersion::Constant(index),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn tabulated(
        id: u32,
        name: impl Into<String>,
        samples: Vec<DispersionSample>,
    ) -> Result<Self> {
        let m = Material {
            id,
            name: name.into(),
            dispersion: Dispersion::Table(samples),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let what = format!("material {}", self.id);
        match &self.dispersion {
            Dispersion::Constant(n) => check_index(*n, &what),
            Dispersion::Table(samples) => {
                if samples.is_empty() {
                    return Err(Error::config(format!("{what}: empty dispersion table")));
                }
                for s in samples {
                    if !(s.wavelength.is_finite() && s.wavelength > 0.0) {
                        return Err(Error::config(format!(
                            "{what}: dispersion wavelengths must be positive"
                        )));
                    }
                    check_index(s.index, &what)?;
                }
                if samples.windows(2).any(|w| w[1].wavelength <= w[0].wavelength) {
                    return Err(Error::config(format!(
                        "{what}: dispersion wavelengths must be strictly increasing"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Complex index at `wavelength` nm.
    ///
    /// Tables are interpolated linearly (real and imaginary parts separately)
    /// and clamped to the end samples outside their range.
    pub fn refractive_index(&self, wavelength: f64) -> Result<Complex64> {
        // also rejects NaN
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(wavelength > 0.0) {
            return Err(Error::invalid(format!(
                "wavelength must be positive, got {wavelength}"
            )));
        }
        match &self.dispersion {
            Dispersion::Constant(n) => Ok(*n),
            Dispersion::Table(samples) => {
                let (first, last) = match (samples.first(), samples.last()) {
                    (Some(f), Some(l)) => (f, l),
                    _ => {
                        return Err(Error::config(format!(
                            "material {}: empty dispersion table",
                            self.id
                        )))
                    }
                };
                if wavelength <= first.wavelength {
                    return Ok(first.index);
                }
                if wavelength >= last.wavelength {
                    return Ok(last.index);
                }
                let hi = samples.partition_point(|s| s.wavelength < wavelength);
                let (a, b) = (&samples[hi - 1], &samples[hi]);
                let w = (wavelength - a.wavelength) / (b.wavelength - a.wavelength);
                Ok(Complex64::new(
                    a.index.re + w * (b.index.re - a.index.re),
                    a.index.im + w * (b.index.im - a.index.im),
                ))
            }
        }
    }
}

/// The ordered set of materials a design may draw from.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialCatalog {
    materials: Vec<Material>,
    reference_wavelength: f64,
}

impl MaterialCatalog {
    /// Materials are reordered by id; ids must be exactly `1..=len`.
    pub fn new(mut materials: Vec<Material>, reference_wavelength: f64) -> Result<Self> {
        if materials.len() < 2 {
            return Err(Error::config("catalog needs at least two materials"));
        }
        if !(reference_wavelength.is_finite() && reference_wavelength > 0.0) {
            return Err(Error::config("reference wavelength must be positive"));
        }
        materials.sort_by_key(|m| m.id);
        for (i, m) in materials.iter().enumerate() {
            if m.id as usize != i + 1 {
                return Err(Error::config(
                    "material ids must be unique and contiguous starting at 1",
                ));
            }
            m.validate()?;
        }
        Ok(MaterialCatalog {
            materials,
            reference_wavelength,
        })
    }

    pub fn materials(&self) -> &[Material] {
        &self.materials
    }

    pub fn len(&self) -> usize {
        self.materials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.materials.is_empty()
    }

    pub fn reference_wavelength(&self) -> f64 {
        self.reference_wavelength
    }

    pub fn get(&self, id: u32) -> Option<&Material> {
        let idx = (id as usize).checked_sub(1)?;
        self.materials.get(idx)
    }

    pub fn material(&self, id: u32) -> Result<&Material> {
        self.get(id)
            .ok_or_else(|| Error::invalid(format!("unknown material id {id}")))
    }

    /// Real part of the material's index at the reference wavelength.
    pub fn reference_index(&self, id: u32) -> Result<f64> {
        Ok(self
            .material(id)?
            .refractive_index(self.reference_wavelength)?
            .re)
    }

    /// Looks up a material by its real index at the reference wavelength.
    pub fn find_by_real_index(&self, n: f64, tol: f64) -> Option<u32> {
        self.materials.iter().find_map(|m| {
            let re = m.refractive_index(self.reference_wavelength).ok()?.re;
            ((re - n).abs() <= tol).then_some(m.id)
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: CatalogFile = serde_json::from_str(text)?;
        raw.into_catalog()
    }

    pub fn to_json(&self) -> String {
        let file = CatalogFile::from(self);
        serde_json::to_string_pretty(&file).expect("catalog serializes")
    }
}

impl Default for MaterialCatalog {
    /// The four dielectrics used throughout the benchmark tasks, as lossless constants.
    fn default() -> Self {
        let materials = [1.457, 1.645, 1.860, 2.327]
            .iter()
            .enumerate()
            .map(|(i, &n)| Material {
                id: i as u32 + 1,
                name: format!("material-{}", i + 1),
                dispersion: Dispersion::Constant(Complex64::new(n, 0.0)),
            })
            .collect();
        MaterialCatalog::new(materials, DEFAULT_REFERENCE_WAVELENGTH)
            .expect("default catalog is valid")
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogFile {
    #[serde(default = "default_reference", alias = "reference_wavelength")]
    reference_wavelength_nm: f64,
    materials: Vec<MaterialEntry>,
}

fn default_reference() -> f64 {
    DEFAULT_REFERENCE_WAVELENGTH
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaterialEntry {
    id: u32,
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_const: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dispersion: Option<Vec<[f64; 3]>>,
}

impl CatalogFile {
    fn into_catalog(self) -> Result<MaterialCatalog> {
        let materials = self
            .materials
            .into_iter()
            .map(|e| {
                let dispersion = match (e.n_const, e.dispersion) {
                    (Some([re, im]), None) => Dispersion::Constant(Complex64::new(re, im)),
                    (None, Some(rows)) => Dispersion::Table(
                        rows.into_iter()
                            .map(|[wl, re, im]| DispersionSample {
                                wavelength: wl,
                                index: Complex64::new(re, im),
                            })
                            .collect(),
                    ),
                    _ => {
                        return Err(Error::config(format!(
                            "material {}: exactly one of `n_const` or `dispersion` is required",
                            e.id
                        )))
                    }
                };
                Ok(Material {
                    id: e.id,
                    name: e.name,
                    dispersion,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        MaterialCatalog::new(materials, self.reference_wavelength_nm)
    }
}

impl From<&MaterialCatalog> for CatalogFile {
    fn from(c: &MaterialCatalog) -> Self {
        CatalogFile {
            reference_wavelength_nm: c.reference_wavelength,
            materials: c
                .materials
                .iter()
                .map(|m| match &m.dispersion {
                    Dispersion::Constant(n) => MaterialEntry {
                        id: m.id,
                        name: m.name.clone(),
                        n_const: Some([n.re, n.im]),
                        dispersion: None,
                    },
                    Dispersion::Table(rows) => MaterialEntry {
                        id: m.id,
                        name: m.name.clone(),
                        n_const: None,
                        dispersion: Some(
                            rows.iter()
                                .map(|s| [s.wavelength, s.index.re, s.index.im])
                                .collect(),
                        ),
                    },
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> Material {
        Material::tabulated(
            1,
            "t",
            vec![
                DispersionSample {
                    wavelength: 400.0,
                    index: Complex64::new(2.0, 0.0),
                },
                DispersionSample {
                    wavelength: 500.0,
                    index: Complex64::new(2.2, 0.0),
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn constant_index_is_returned_unchanged() {
        let cat = MaterialCatalog::default();
        let n = cat.material(1).unwrap().refractive_index(550.0).unwrap();
        assert_eq!(n, Complex64::new(1.457, 0.0));
    }

    #[test]
    fn table_interpolates_and_clamps() {
        let m = table();
        assert!((m.refractive_index(450.0).unwrap().re - 2.1).abs() < 1e-12);
        assert_eq!(m.refractive_index(700.0).unwrap().re, 2.2);
        assert_eq!(m.refractive_index(300.0).unwrap().re, 2.0);
        assert_eq!(m.refractive_index(500.0).unwrap().re, 2.2);
    }

    #[test]
    fn empty_table_is_a_config_error() {
        let m = Material {
            id: 1,
            name: "x".into(),
            dispersion: Dispersion::Table(vec![]),
        };
        assert!(matches!(m.refractive_index(500.0), Err(Error::Config(_))));
        assert!(matches!(m.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_gain_media_and_unsorted_tables() {
        assert!(Material::constant(1, "g", Complex64::new(1.5, -0.1)).is_err());
        assert!(Material::constant(1, "z", Complex64::new(0.0, 0.0)).is_err());
        let bad = vec![
            DispersionSample {
                wavelength: 500.0,
                index: Complex64::new(2.0, 0.0),
            },
            DispersionSample {
                wavelength: 500.0,
                index: Complex64::new(2.1, 0.0),
            },
        ];
        assert!(Material::tabulated(1, "u", bad).is_err());
    }

    #[test]
    fn catalog_ids_must_be_contiguous() {
        let a = Material::constant(1, "a", Complex64::new(1.5, 0.0)).unwrap();
        let b = Material::constant(3, "b", Complex64::new(2.0, 0.0)).unwrap();
        assert!(MaterialCatalog::new(vec![a.clone(), b], 550.0).is_err());
        assert!(MaterialCatalog::new(vec![a], 550.0).is_err());
    }

    #[test]
    fn catalog_json_round_trip() {
        let text = r#"{
            "reference_wavelength_nm": 550,
            "materials": [
                {"id": 2, "name": "hi", "dispersion": [[400, 2.0, 0.0], [500, 2.2, 0.01]]},
                {"id": 1, "name": "lo", "n_const": [1.457, 0.0]}
            ]
        }"#;
        let cat = MaterialCatalog::from_json(text).unwrap();
        assert_eq!(cat.len(), 2);
        assert_eq!(cat.material(1).unwrap().name, "lo");
        let again = MaterialCatalog::from_json(&cat.to_json()).unwrap();
        assert_eq!(cat, again);
    }

    #[test]
    fn catalog_json_requires_one_index_form() {
        let text = r#"{"materials": [
            {"id": 1, "name": "a"},
            {"id": 2, "name": "b", "n_const": [2.0, 0.0]}
        ]}"#;
        assert!(MaterialCatalog::from_json(text).is_err());
    }

    #[test]
    fn default_catalog_reference_indexes() {
        let cat = MaterialCatalog::default();
        let ns: Vec<f64> = (1..=4).map(|id| cat.reference_index(id).unwrap()).collect();
        assert_eq!(ns, vec![1.457, 1.645, 1.860, 2.327]);
        assert_eq!(cat.find_by_real_index(2.327, 1e-9), Some(4));
    }
}

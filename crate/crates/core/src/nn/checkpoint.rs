//! On-disk network format: a JSON manifest plus a flat array of little-endian
//! `f64` parameters in [`Mlp::params_flat`] order.
//!
//! Decoding treats both parts as untrusted and never panics.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, Dense, Mlp, Scalar};
use crate::{Error, Result};

pub const FORMAT: &str = "optistack-mlp";
pub const VERSION: u32 = 1;

const MAX_LAYERS: usize = 64;
const MAX_WIDTH: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    /// Float type the network trained in; parameters are always stored as `f64`.
    pub scalar: String,
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    /// Optimizer steps taken when the snapshot was written.
    pub step_count: u64,
    pub seed: u64,
    pub param_count: usize,
}

impl Manifest {
    fn expected_params(&self) -> Result<usize> {
        let sizes = &self.layer_sizes;
        if sizes.len() < 2 || sizes.len() > MAX_LAYERS + 1 {
            return Err(Error::Checkpoint(format!(
                "layer count {} out of range",
                sizes.len().saturating_sub(1)
            )));
        }
        if sizes.iter().any(|&s| s == 0 || s > MAX_WIDTH) {
            return Err(Error::Checkpoint("layer width out of range".into()));
        }
        sizes.windows(2).try_fold(0usize, |acc, w| {
            w[0].checked_mul(w[1])
                .and_then(|n| n.checked_add(w[1]))
                .and_then(|n| acc.checked_add(n))
                .ok_or_else(|| Error::Checkpoint("parameter count overflows".into()))
        })
    }
}

pub fn encode<T: Scalar>(net: &Mlp<T>, step_count: u64) -> (Manifest, Vec<u8>) {
    let params = net.params_flat();
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        scalar: T::NAME.into(),
        layer_sizes: net.sizes(),
        hidden_activation: Activation::Relu,
        output_activation: net.output_activation(),
        step_count,
        seed: net.seed(),
        param_count: params.len(),
    };
    let mut bytes = Vec::with_capacity(params.len() * 8);
    for p in params {
        bytes.extend_from_slice(&p.as_f64().to_le_bytes());
    }
    (manifest, bytes)
}

pub fn decode<T: Scalar>(manifest: &Manifest, bytes: &[u8]) -> Result<Mlp<T>> {
    if manifest.format != FORMAT {
        return Err(Error::Checkpoint(format!("unknown format {:?}", manifest.format)));
    }
    if manifest.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {}",
            manifest.version
        )));
    }
    if manifest.scalar != "f32" && manifest.scalar != "f64" {
        return Err(Error::Checkpoint(format!("unknown scalar {:?}", manifest.scalar)));
    }
    if manifest.hidden_activation != Activation::Relu {
        return Err(Error::Checkpoint("only rectifier hidden layers are supported".into()));
    }
    let expected = manifest.expected_params()?;
    if manifest.param_count != expected {
        return Err(Error::Checkpoint(format!(
            "manifest declares {} parameters, layer sizes imply {expected}",
            manifest.param_count
        )));
    }
    if bytes.len() != expected.saturating_mul(8) || expected > usize::MAX / 8 {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter bytes, got {}",
            expected.saturating_mul(8),
            bytes.len()
        )));
    }
    let mut values = bytes.chunks_exact(8).map(|c| {
        let mut b = [0u8; 8];
        b.copy_from_slice(c);
        f64::from_le_bytes(b)
    });
    let mut layers = Vec::with_capacity(manifest.layer_sizes.len() - 1);
    for w in manifest.layer_sizes.windows(2) {
        let mut take = |n: usize| -> Result<Vec<T>> {
            (0..n)
                .map(|_| {
                    let v = values.next().unwrap_or(f64::NAN);
                    if v.is_finite() {
                        Ok(T::of(v))
                    } else {
                        Err(Error::Checkpoint("non-finite parameter".into()))
                    }
                })
                .collect()
        };
        let weights = ndarray::Array2::from_shape_vec((w[0], w[1]), take(w[0] * w[1])?)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let bias = ndarray::Array1::from_vec(take(w[1])?);
        layers.push(Dense { weights, bias });
    }
    Mlp::from_layers(layers, manifest.output_activation, manifest.seed)
        .map_err(|e| Error::Checkpoint(e.to_string()))
}

/// Decodes a manifest given as JSON text.
pub fn decode_json<T: Scalar>(manifest_json: &str, bytes: &[u8]) -> Result<(Mlp<T>, Manifest)> {
    let manifest: Manifest = serde_json::from_str(manifest_json)
        .map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;
    let net = decode(&manifest, bytes)?;
    Ok((net, manifest))
}

/// Writes `<name>.json` and `<name>.bin` under `dir`, creating it if needed.
pub fn save<T: Scalar>(net: &Mlp<T>, step_count: u64, dir: &Path, name: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (manifest, bytes) = encode(net, step_count);
    fs::write(
        dir.join(format!("{name}.json")),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    fs::write(dir.join(format!("{name}.bin")), bytes)?;
    Ok(())
}

pub fn load<T: Scalar>(dir: &Path, name: &str) -> Result<(Mlp<T>, Manifest)> {
    let manifest = fs::read_to_string(dir.join(format!("{name}.json")))?;
    let bytes = fs::read(dir.join(format!("{name}.bin")))?;
    decode_json(&manifest, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let net = Mlp::<f64>::new(&[5, 7, 3], Activation::Sigmoid, 42).unwrap();
        let (m, b) = encode(&net, 17);
        assert_eq!(m.param_count, 5 * 7 + 7 + 7 * 3 + 3);
        assert_eq!(b.len(), m.param_count * 8);
        let back: Mlp<f64> = decode(&m, &b).unwrap();
        let bits = |n: &Mlp<f64>| n.params_flat().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&net));
        assert_eq!(back.output_activation(), Activation::Sigmoid);
        assert_eq!(back.seed(), 42);
    }

    #[test]
    fn f32_round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let net = Mlp::<f32>::new(&[4, 6, 2], Activation::Identity, 1).unwrap();
        save(&net, 3, dir.path(), "q").unwrap();
        let (back, m) = load::<f32>(dir.path(), "q").unwrap();
        assert_eq!(back, net);
        assert_eq!(m.scalar, "f32");
        assert_eq!(m.step_count, 3);
    }

    #[test]
    fn rejects_inconsistent_payloads() {
        let net = Mlp::<f64>::new(&[2, 2], Activation::Identity, 1).unwrap();
        let (m, b) = encode(&net, 0);
        assert!(decode::<f64>(&m, &b[..b.len() - 1]).is_err());
        let mut bad = m.clone();
        bad.param_count += 1;
        assert!(decode::<f64>(&bad, &b).is_err());
        let mut bad = m.clone();
        bad.layer_sizes = vec![usize::MAX, usize::MAX];
        assert!(decode::<f64>(&bad, &b).is_err());
        let mut nan = b.clone();
        nan[..8].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(decode::<f64>(&m, &nan), Err(Error::Checkpoint(_))));
        assert!(decode_json::<f64>("{", &b).is_err());
    }
}

//! Binary checkpoint: magic, version, a JSON header echoing the network
//! configuration and coordinate normalization, then the flattened
//! parameters as little-endian f64.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{NetworkConfig, Params};
use crate::pointset::{Aabb, Normalization};

const MAGIC: &[u8; 8] = b"NSURFCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: NetworkConfig,
    normalization: Normalization,
    bounds: Aabb,
    layer_shapes: Vec<(usize, usize)>,
    num_params: usize,
}

/// A trained network together with the frame it was trained in.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    pub params: Params,
    /// Map from raw input coordinates to the network's input frame.
    pub normalization: Normalization,
    /// Bounding box of the training points in the network's frame.
    pub bounds: Aabb,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.params.check_shapes(&self.config)?;
        let header = Header {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            normalization: self.normalization,
            bounds: self.bounds,
            layer_shapes: self.params.layers.iter().map(|l| l.weights.shape()).collect(),
            num_params: self.params.num_params(),
        };
        let json = serde_json::to_vec(&header)?;
        let flat = self.params.flatten();
        let mut out = Vec::with_capacity(16 + json.len() + flat.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for v in flat {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic bytes"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + len).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        if header.version != version {
            return Err(bad("header version disagrees with preamble"));
        }
        header.config.validate()?;
        let data = &bytes[16 + len..];
        if data.len() != header.num_params * 8 || header.num_params != header.config.num_params() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {} bytes of data",
                header.config.num_params(),
                data.len()
            )));
        }
        let flat: Vec<f64> =
            data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let params = Params::unflatten(&header.config, &flat)?;
        let shapes: Vec<(usize, usize)> = params.layers.iter().map(|l| l.weights.shape()).collect();
        if shapes != header.layer_shapes {
            return Err(bad("layer shapes disagree with configuration"));
        }
        Ok(Self {
            config: header.config,
            params,
            normalization: header.normalization,
            bounds: header.bounds,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::FileNotFound(path.to_path_buf()));
        }
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_params, ArchitectureKind};

    fn sample() -> Checkpoint {
        let config = NetworkConfig::surface(ArchitectureKind::Res, 3, 5, 11);
        Checkpoint {
            params: init_params(&config).unwrap(),
            config,
            normalization: Normalization { scale: 0.5, offset: crate::pointset::Point3::new(0.1, -0.2, 0.3) },
            bounds: Aabb::cube(1.0),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), c);
        assert_eq!(c.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rejects_other_versions() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("version 7"), "{err}");
    }

    #[test]
    fn rejects_truncation_and_garbage() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
        assert!(Checkpoint::from_bytes(b"not a checkpoint").is_err());
        assert!(Checkpoint::from_bytes(&bytes[..20]).is_err());
    }

    #[test]
    fn missing_file() {
        let err = Checkpoint::load("/nonexistent/checkpoint.bin").unwrap_err();
        assert!(matches!(err, Error::FileNotFound(_)));
    }
}

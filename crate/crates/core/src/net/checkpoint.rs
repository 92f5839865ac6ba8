//! Versioned binary checkpoints: magic bytes, a JSON header describing the
//! configuration and parameter shapes, then the little-endian f64 stream.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::model::{Model, ModelConfig, ParamTensor};

const MAGIC: &[u8; 4] = b"FSPE";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamShape {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    params: Vec<ParamShape>,
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let header = Header {
        config: model.config().clone(),
        params: model
            .params()
            .iter()
            .map(|p| ParamShape {
                name: p.name.clone(),
                rows: p.value.nrows(),
                cols: p.value.ncols(),
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(MAGIC)?;
    file.write_all(&VERSION.to_le_bytes())?;
    file.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    file.write_all(&header_bytes)?;
    for p in model.params() {
        for v in p.value.iter() {
            file.write_all(&v.to_le_bytes())?;
        }
    }
    file.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse("not a checkpoint file (bad magic)".into()));
    }
    let mut word = [0u8; 4];
    file.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
    }
    file.read_exact(&mut word)?;
    let header_len = u32::from_le_bytes(word) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Parse(format!("checkpoint header: {e}")))?;

    let mut params = Vec::with_capacity(header.params.len());
    let mut buf = [0u8; 8];
    for shape in &header.params {
        let mut data = Vec::with_capacity(shape.rows * shape.cols);
        for _ in 0..shape.rows * shape.cols {
            file.read_exact(&mut buf).map_err(|_| {
                Error::Parse(format!("checkpoint truncated inside {}", shape.name))
            })?;
            data.push(f64::from_le_bytes(buf));
        }
        let value = Array2::from_shape_vec((shape.rows, shape.cols), data)
            .map_err(|e| Error::Parse(format!("parameter {}: {e}", shape.name)))?;
        params.push(ParamTensor { name: shape.name.clone(), value });
    }
    let mut trailing = [0u8; 1];
    if file.read(&mut trailing)? != 0 {
        return Err(Error::Parse("checkpoint has trailing bytes".into()));
    }
    Model::from_parts(header.config, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{FeatureMapKind, PeKind};
    use crate::grid::linear_grid;
    use ndarray::Array2;

    fn model() -> Model {
        Model::new(ModelConfig {
            layers: 1,
            heads: 2,
            model_dim: 8,
            ff_dim: 8,
            pe_kind: PeKind::Rff,
            feature_map: FeatureMapKind::EluPlusOne,
            n_f: 2,
            realizations: 4,
            levels: 1,
            level_mask: None,
            dropout: 0.0,
            seed: 77,
        })
        .unwrap()
    }

    #[test]
    fn round_trip_preserves_parameters_and_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.fspe");
        let original = model();
        save(&original, &path).unwrap();
        let restored = load(&path).unwrap();
        for (a, b) in original.params().iter().zip(restored.params()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
        }
        let x = Array2::zeros((4, super::super::model::INPUT_WIDTH));
        let grid = linear_grid(4).unwrap();
        assert_eq!(original.forward(&x, &grid).unwrap(), restored.forward(&x, &grid).unwrap());
    }

    #[test]
    fn save_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.fspe");
        let b = dir.path().join("b.fspe");
        let m = model();
        save(&m, &a).unwrap();
        save(&m, &b).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.fspe");
        std::fs::write(&path, b"NOPE0000").unwrap();
        assert!(matches!(load(&path), Err(Error::Parse(_))));

        let good = dir.path().join("good.fspe");
        save(&model(), &good).unwrap();
        let bytes = std::fs::read(&good).unwrap();
        let cut = dir.path().join("cut.fspe");
        std::fs::write(&cut, &bytes[..bytes.len() - 3]).unwrap();
        assert!(load(&cut).is_err());
    }
}

//! Binary model files: magic, format version, a JSON header with config,
//! scaling and tensor shapes, then all parameters as little-endian f64.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, ModelKind, ReactModel, Standardizer, MODE_COUNT};

const MAGIC: &[u8; 8] = b"RVAEMDL\0";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    kind: ModelKind,
    standardizer: Standardizer,
    feature_dim: usize,
    shapes: Vec<Vec<usize>>,
}

pub(super) fn save(model: &ReactModel, path: &Path) -> Result<(), ModelError> {
    let mut shapes = model.encoder.shapes();
    if let Some(d) = &model.decoder {
        shapes.extend(d.shapes());
    }
    let header = Header {
        config: model.config.clone(),
        kind: model.kind,
        standardizer: model.standardizer.clone(),
        feature_dim: model.feature_dim(),
        shapes,
    };
    let json = serde_json::to_vec(&header).map_err(|e| ModelError::Format {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    let params = model.flat_params();
    let mut buf = Vec::with_capacity(16 + json.len() + 8 * params.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    fs::write(path, buf).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub(super) fn load(path: &Path) -> Result<ReactModel, ModelError> {
    let p = path.display().to_string();
    let bad = |msg: &str| ModelError::Format {
        path: p.clone(),
        msg: msg.to_string(),
    };
    let buf = fs::read(path).map_err(|source| ModelError::Io { path: p.clone(), source })?;
    let take = |at: usize, n: usize| buf.get(at..at + n).ok_or_else(|| bad("truncated file"));
    if take(0, 8)? != MAGIC {
        return Err(bad("not a model file"));
    }
    let version = u32::from_le_bytes(take(8, 4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let hlen = u32::from_le_bytes(take(12, 4)?.try_into().expect("4 bytes")) as usize;
    let header: Header = serde_json::from_slice(take(16, hlen)?).map_err(|e| bad(&format!("header: {e}")))?;
    let at = 16 + hlen;
    let count = u64::from_le_bytes(take(at, 8)?.try_into().expect("8 bytes")) as usize;
    let body = take(at + 8, count.checked_mul(8).ok_or_else(|| bad("bad parameter count"))?)?;
    if buf.len() != at + 8 + 8 * count {
        return Err(bad("trailing bytes"));
    }
    header.config.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = ReactModel::init(&header.config, header.kind, header.standardizer, header.feature_dim, &mut rng);
    let mut shapes = model.encoder.shapes();
    if let Some(d) = &model.decoder {
        shapes.extend(d.shapes());
    }
    if shapes != header.shapes || model.encoder.input() != MODE_COUNT + header.feature_dim {
        return Err(bad("tensor shapes do not match the configuration"));
    }
    let flat: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if flat.len() != model.flat_params().len() {
        return Err(bad("parameter count does not match the configuration"));
    }
    model.set_flat_params(&flat);
    Ok(model)
}

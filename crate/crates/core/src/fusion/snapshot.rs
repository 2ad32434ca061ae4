use std::fs;
use std::path::Path;

use ndarray::ArrayD;
use ndarray_npy::{read_npy, write_npy};
use serde::{Deserialize, Serialize};

use super::{MssaConfig, MssaParams, ScaleParams};
use crate::error::{Error, Result};
use crate::TOOL_VERSION;

pub const SNAPSHOT_MANIFEST: &str = "params.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotManifest {
    pub tool_version: String,
    pub config: MssaConfig,
    pub shared: bool,
    pub tensors: Vec<TensorRecord>,
}

fn shapes(p: &ScaleParams) -> Vec<Vec<usize>> {
    let mut out = vec![p.w_proj.shape().to_vec(), p.router_w.shape().to_vec()];
    for ex in &p.experts {
        out.push(ex.w1.shape().to_vec());
        out.push(ex.b1.shape().to_vec());
        out.push(ex.w2.shape().to_vec());
        out.push(ex.b2.shape().to_vec());
    }
    out.push(p.w_gate.shape().to_vec());
    out.push(vec![]);
    out
}

/// Write every tensor as an f64 `.npy` file plus a JSON shape manifest.
pub fn save_params(dir: &Path, params: &MssaParams, config: &MssaConfig) -> Result<SnapshotManifest> {
    fs::create_dir_all(dir)?;
    let mut tensors = Vec::new();
    for (r, rec) in params.records().iter().enumerate() {
        for ((name, _, vals), shape) in rec.tensors().into_iter().zip(shapes(rec)) {
            let name = format!("record{r}.{name}");
            let file = format!("{name}.npy");
            let arr = ArrayD::from_shape_vec(shape.clone(), vals.to_vec()).expect("shape matches data");
            let path = dir.join(&file);
            write_npy(&path, &arr).map_err(|e| Error::decode(&path, e))?;
            tensors.push(TensorRecord { name, file, shape });
        }
    }
    let manifest = SnapshotManifest {
        tool_version: TOOL_VERSION.to_string(),
        config: config.clone(),
        shared: params.is_shared(),
        tensors,
    };
    fs::write(dir.join(SNAPSHOT_MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Inverse of [`save_params`].
pub fn load_params(dir: &Path) -> Result<(MssaConfig, MssaParams)> {
    let manifest: SnapshotManifest = serde_json::from_slice(&fs::read(dir.join(SNAPSHOT_MANIFEST))?)?;
    let config = manifest.config;
    config.validate()?;
    let n_records = if manifest.shared { 1 } else { config.n_scales };
    let mut records: Vec<ScaleParams> = (0..n_records)
        .map(|_| ScaleParams::zeros(&config.dims, config.experts_allocated()))
        .collect();
    let mut files = manifest.tensors.iter();
    for rec in &mut records {
        let want_shapes = shapes(rec);
        for (slot, shape) in rec.tensors_mut().into_iter().zip(want_shapes) {
            let t = files
                .next()
                .ok_or_else(|| Error::invalid("snapshot lists too few tensors"))?;
            let path = dir.join(&t.file);
            let arr: ArrayD<f64> = read_npy(&path).map_err(|e| Error::decode(&path, e))?;
            if arr.shape() != shape.as_slice() || t.shape != shape {
                return Err(Error::decode(
                    &path,
                    format!("shape {:?}, expected {shape:?}", arr.shape()),
                ));
            }
            slot.copy_from_slice(arr.as_slice().expect("standard layout"));
        }
    }
    if files.next().is_some() {
        return Err(Error::invalid("snapshot lists too many tensors"));
    }
    let params = if manifest.shared {
        MssaParams::shared(records.pop().expect("one record"), config.n_scales)
    } else {
        MssaParams::independent(records)
    };
    Ok((config, params))
}

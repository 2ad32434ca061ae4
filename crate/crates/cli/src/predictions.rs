use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fde_core::bench::ManifestEntry;
use fde_core::metrics::PredSpace;
use fde_core::DepthFormat;
use serde::{Deserialize, Serialize};

/// Fields shared by every entry unless overridden.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionDefaults {
    pub pred_space: Option<PredSpace>,
    pub format: Option<DepthFormat>,
    pub scale: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionEntry {
    pub pred_path: PathBuf,
    pub pred_space: Option<PredSpace>,
    pub format: Option<DepthFormat>,
    pub scale: Option<f64>,
}

/// Prediction files keyed by triplet id, by image (`dataset/source_id`, the
/// triplet id without its `#instance` suffix), or by group key. Lookups try
/// those keys in that order, so per-triplet predictions override image-level
/// ones.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionsIndex {
    #[serde(default)]
    pub defaults: PredictionDefaults,
    pub entries: BTreeMap<String, PredictionEntry>,
    #[serde(skip)]
    base: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedPrediction {
    pub path: PathBuf,
    pub format: DepthFormat,
    pub scale: f64,
    pub pred_space: PredSpace,
}

impl PredictionsIndex {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut index: Self =
            serde_json::from_str(&text).with_context(|| format!("parsing predictions index {}", path.display()))?;
        index.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(index)
    }

    pub fn resolve(&self, entry: &ManifestEntry, fallback_space: PredSpace) -> Result<ResolvedPrediction> {
        let image_key = entry
            .triplet_id
            .rsplit_once('#')
            .map_or(entry.triplet_id.as_str(), |(img, _)| img);
        let hit = [entry.triplet_id.as_str(), image_key, entry.group_key.as_str()]
            .into_iter()
            .find_map(|k| self.entries.get(k))
            .with_context(|| format!("no prediction for `{}`", entry.triplet_id))?;
        let path = if hit.pred_path.is_absolute() {
            hit.pred_path.clone()
        } else {
            self.base.join(&hit.pred_path)
        };
        let format = match hit.format.or(self.defaults.format) {
            Some(f) => f,
            None => DepthFormat::from_path(&path)
                .with_context(|| format!("cannot infer prediction format of {}", path.display()))?,
        };
        Ok(ResolvedPrediction {
            format,
            scale: hit.scale.or(self.defaults.scale).unwrap_or(1.0),
            pred_space: hit.pred_space.or(self.defaults.pred_space).unwrap_or(fallback_space),
            path,
        })
    }
}

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{ManifestEntry, ManifestHeader, MANIFEST_SCHEMA_VERSION};
use super::splits::{split_for, Split};
use super::targets::{extract_targets, instance_areas, DEFAULT_MIN_AREA_FRAC};
use crate::depth::ValidityBounds;
use crate::error::{Error, Result};
use crate::io::{decode_depth_checked, decode_instance_map, DepthFormat};
use crate::TOOL_VERSION;

/// One source image with its depth and instance map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceRecord {
    /// Stable per-dataset identifier, usually the file stem.
    pub source_id: String,
    pub image_path: PathBuf,
    pub depth_path: PathBuf,
    pub instance_map_path: PathBuf,
    pub group_key: String,
    #[serde(default)]
    pub class_names: Option<BTreeMap<u16, String>>,
    #[serde(default)]
    pub pseudo_mask: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub dataset: String,
    pub min_area_frac: f64,
    pub val_ratio: f64,
    pub seed: u64,
    /// Overrides the extension-derived format.
    pub depth_format: Option<DepthFormat>,
    pub depth_scale: f64,
    pub min_depth: f64,
    #[serde(with = "super::manifest::unbounded")]
    pub max_depth: f64,
    /// Explicit group→split table; hash assignment when absent.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub split_table: Option<BTreeMap<String, Split>>,
    /// Stored paths are made relative to this directory when possible.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl BuildConfig {
    pub fn new(dataset: impl Into<String>) -> Self {
        Self {
            dataset: dataset.into(),
            min_area_frac: DEFAULT_MIN_AREA_FRAC,
            val_ratio: 0.2,
            seed: 0,
            depth_format: None,
            depth_scale: 0.001,
            min_depth: ValidityBounds::METRIC.min_depth,
            max_depth: ValidityBounds::METRIC.max_depth,
            split_table: None,
            base_dir: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dataset.is_empty() || self.dataset.contains(['/', '#']) {
            return Err(Error::invalid(format!(
                "dataset name `{}` must be non-empty without `/` or `#`",
                self.dataset
            )));
        }
        if !(self.val_ratio > 0.0 && self.val_ratio < 1.0) {
            return Err(Error::invalid(format!(
                "val_ratio must lie in (0, 1), got {}",
                self.val_ratio
            )));
        }
        if !(self.depth_scale.is_finite() && self.depth_scale > 0.0) {
            return Err(Error::invalid(format!(
                "depth_scale must be positive, got {}",
                self.depth_scale
            )));
        }
        ValidityBounds::new(self.min_depth, self.max_depth)?;
        Ok(())
    }

    fn split_of(&self, group_key: &str) -> Result<Split> {
        match &self.split_table {
            Some(table) => table
                .get(group_key)
                .copied()
                .ok_or_else(|| Error::invalid(format!("group `{group_key}` missing from split table"))),
            None => Ok(split_for(group_key, self.val_ratio, self.seed)),
        }
    }

    fn stored_path(&self, p: &Path) -> String {
        let rel = self
            .base_dir
            .as_deref()
            .and_then(|base| p.strip_prefix(base).ok())
            .unwrap_or(p);
        rel.to_string_lossy().replace('\\', "/")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedSource {
    pub source_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub images: usize,
    pub triplets: usize,
}

/// Counts over a build, one bucket per split and per category.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub dataset: String,
    pub sources: usize,
    /// Images contributing at least one triplet.
    pub images: usize,
    pub triplets: usize,
    /// Instances dropped by the area filter.
    pub rejected_masks: usize,
    pub pseudo_mask_triplets: usize,
    pub splits: BTreeMap<Split, SplitCounts>,
    pub prompt_types: BTreeMap<String, usize>,
    pub categories: BTreeMap<String, usize>,
    /// Sources that failed to decode or had no retained target.
    pub skipped: Vec<SkippedSource>,
}

#[derive(Clone, Debug)]
pub struct BuildOutput {
    pub header: ManifestHeader,
    pub entries: Vec<ManifestEntry>,
    pub report: BuildReport,
}

pub fn triplet_id(dataset: &str, source_id: &str, instance_id: u16) -> String {
    format!("{dataset}/{source_id}#{instance_id:05}")
}

struct SourceOutcome {
    entries: Vec<ManifestEntry>,
    rejected: usize,
}

fn process_source(src: &SourceRecord, config: &BuildConfig) -> Result<SourceOutcome> {
    let map = decode_instance_map(&src.instance_map_path)?;
    let format = match config.depth_format {
        Some(f) => f,
        None => DepthFormat::from_path(&src.depth_path)
            .ok_or_else(|| Error::decode(&src.depth_path, "cannot infer depth format from extension"))?,
    };
    // Decoding here catches unreadable or mis-sized depth before evaluation.
    decode_depth_checked(&src.depth_path, format, config.depth_scale, (map.height, map.width))?;
    let split = config.split_of(&src.group_key)?;
    let total = instance_areas(&map).len();
    let targets = extract_targets(&map, config.min_area_frac)?;
    let rejected = total - targets.len();

    let entries = targets
        .into_iter()
        .map(|t| ManifestEntry {
            triplet_id: triplet_id(&config.dataset, &src.source_id, t.instance_id),
            dataset: config.dataset.clone(),
            split,
            group_key: src.group_key.clone(),
            image_path: config.stored_path(&src.image_path),
            depth_path: config.stored_path(&src.depth_path),
            mask_path: config.stored_path(&src.instance_map_path),
            depth_format: format,
            depth_scale: config.depth_scale,
            instance_id: Some(t.instance_id),
            bbox: t.bbox,
            text_prompt: src
                .class_names
                .as_ref()
                .and_then(|names| names.get(&t.instance_id))
                .cloned(),
            pseudo_mask: src.pseudo_mask,
            min_depth: config.min_depth,
            max_depth: config.max_depth,
        })
        .collect();
    Ok(SourceOutcome { entries, rejected })
}

/// Build a sorted manifest from `sources`, using up to `jobs` worker threads
/// (0 picks the rayon default). Output is independent of `jobs`.
pub fn build_manifest(sources: &[SourceRecord], config: &BuildConfig, jobs: usize) -> Result<BuildOutput> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let outcomes: Vec<(usize, Result<SourceOutcome>)> = pool.install(|| {
        sources
            .par_iter()
            .enumerate()
            .map(|(i, src)| (i, process_source(src, config)))
            .collect()
    });

    let mut report = BuildReport {
        dataset: config.dataset.clone(),
        sources: sources.len(),
        ..Default::default()
    };
    let mut entries = Vec::new();
    let mut images_per_split: BTreeMap<Split, BTreeSet<usize>> = BTreeMap::new();
    for (i, outcome) in outcomes {
        let src = &sources[i];
        match outcome {
            Ok(out) => {
                report.rejected_masks += out.rejected;
                if out.entries.is_empty() {
                    log::warn!("{}: no target passes the area filter", src.source_id);
                    report.skipped.push(SkippedSource {
                        source_id: src.source_id.clone(),
                        reason: "no retained targets".into(),
                    });
                    continue;
                }
                for e in &out.entries {
                    images_per_split.entry(e.split).or_default().insert(i);
                }
                entries.extend(out.entries);
            }
            Err(err) => {
                log::warn!("skipping {}: {err}", src.source_id);
                report.skipped.push(SkippedSource {
                    source_id: src.source_id.clone(),
                    reason: err.to_string(),
                });
            }
        }
    }

    entries.sort_by(|a, b| a.triplet_id.cmp(&b.triplet_id));
    if let Some(w) = entries.windows(2).find(|w| w[0].triplet_id == w[1].triplet_id) {
        return Err(Error::DuplicateTripletId(w[0].triplet_id.clone()));
    }
    report.skipped.sort_by(|a, b| a.source_id.cmp(&b.source_id));

    report.images = images_per_split.values().map(BTreeSet::len).sum();
    report.triplets = entries.len();
    for (split, imgs) in &images_per_split {
        report.splits.entry(*split).or_default().images = imgs.len();
    }
    for e in &entries {
        report.splits.entry(e.split).or_default().triplets += 1;
        *report.prompt_types.entry(e.prompt_types().to_string()).or_default() += 1;
        if let Some(name) = &e.text_prompt {
            *report.categories.entry(name.clone()).or_default() += 1;
        }
        if e.pseudo_mask {
            report.pseudo_mask_triplets += 1;
        }
    }

    let header = ManifestHeader {
        schema_version: MANIFEST_SCHEMA_VERSION,
        tool_version: TOOL_VERSION.to_string(),
        dataset: config.dataset.clone(),
        config: serde_json::to_value(config)?,
    };
    Ok(BuildOutput {
        header,
        entries,
        report,
    })
}

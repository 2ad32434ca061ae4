use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Args;
use fde_core::bench::{ManifestEntry, ManifestReader, Split};
use fde_core::io::decode_depth_checked;
use fde_core::metrics::{
    evaluate_triplet, AlignmentMode, EvalConfig, PredSpace, TripletResult, DEFAULT_DELTA_THRESHOLD,
};
use fde_core::{compute_valid, decode_mask, tight_bbox, BandShape, DEFAULT_BAND_RADIUS};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::jsonl::JsonlWriter;
use crate::predictions::PredictionsIndex;

/// Triplets evaluated per parallel batch; bounds memory on large manifests.
const BATCH: usize = 512;

pub const RESULTS_SCHEMA_VERSION: u32 = 1;

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Predictions index (JSON).
    #[arg(long)]
    predictions: PathBuf,
    /// Output results file (.jsonl).
    #[arg(long)]
    out: PathBuf,
    /// Method name used as the report row label; defaults to the
    /// predictions file stem.
    #[arg(long)]
    method: Option<String>,
    #[arg(long, default_value_t = DEFAULT_BAND_RADIUS)]
    radius: usize,
    #[arg(long, default_value_t = BandShape::Disk)]
    band_shape: BandShape,
    #[arg(long, default_value_t = DEFAULT_DELTA_THRESHOLD)]
    delta_threshold: f64,
    /// Prediction space when the index does not say.
    #[arg(long, default_value_t = PredSpace::Depth)]
    pred_space: PredSpace,
    #[arg(long, default_value_t = AlignmentMode::Affine)]
    alignment: AlignmentMode,
    #[arg(long, env = "FDE_JOBS", default_value_t = 0)]
    jobs: usize,
}

/// First line of a results file. Worker count is deliberately absent so
/// output does not depend on it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsHeader {
    pub schema_version: u32,
    pub tool_version: String,
    pub method: String,
    pub manifest: String,
    pub manifest_tool_version: String,
    pub predictions: String,
    pub config: EvalConfig,
}

#[derive(Debug, Serialize)]
struct TripletError {
    triplet_id: String,
    error: String,
}

fn evaluate_entry(
    entry: &ManifestEntry,
    base: &Path,
    index: &PredictionsIndex,
    config: &EvalConfig,
) -> Result<TripletResult> {
    let mask = decode_mask(&ManifestEntry::resolve(base, &entry.mask_path), entry.instance_id)?;
    let bbox = tight_bbox(&mask)?;
    if bbox != entry.bbox {
        bail!(
            "stored bbox {:?} is not the tight box {:?} of the mask",
            entry.bbox,
            bbox
        );
    }
    let gt = decode_depth_checked(
        &ManifestEntry::resolve(base, &entry.depth_path),
        entry.depth_format,
        entry.depth_scale,
        mask.dims(),
    )?;
    let valid = compute_valid(&gt, entry.bounds()?);
    let pred_ref = index.resolve(entry, config.pred_space)?;
    let pred = decode_depth_checked(&pred_ref.path, pred_ref.format, pred_ref.scale, mask.dims())?;
    let cfg = EvalConfig {
        pred_space: pred_ref.pred_space,
        ..*config
    };
    let metrics = evaluate_triplet(&pred, &gt, &mask, &valid, &cfg)?;
    Ok(metrics.into_result(&entry.triplet_id, &entry.dataset, entry.prompt_types()))
}

/// Streaming checks that need only constant state per group.
#[derive(Default)]
struct ManifestChecks {
    prev: Option<String>,
    group_split: BTreeMap<String, Split>,
}

impl ManifestChecks {
    fn observe(&mut self, e: &ManifestEntry) -> Result<()> {
        if let Some(prev) = &self.prev {
            if prev.as_str() >= e.triplet_id.as_str() {
                bail!("manifest is not strictly sorted at `{}`", e.triplet_id);
            }
        }
        self.prev = Some(e.triplet_id.clone());
        if let Some(s) = self.group_split.insert(e.group_key.clone(), e.split) {
            if s != e.split {
                bail!("group `{}` appears in both splits", e.group_key);
            }
        }
        Ok(())
    }
}

pub fn run(args: EvaluateArgs) -> Result<ExitCode> {
    let config = EvalConfig {
        radius: args.radius,
        band_shape: args.band_shape,
        delta_threshold: args.delta_threshold,
        pred_space: args.pred_space,
        alignment: args.alignment,
    };
    if config.radius < 1 || config.delta_threshold.is_nan() || config.delta_threshold <= 1.0 {
        bail!("--radius must be >= 1 and --delta-threshold > 1");
    }
    let index = PredictionsIndex::load(&args.predictions)?;
    let reader = ManifestReader::open(&args.manifest)
        .with_context(|| format!("opening manifest {}", args.manifest.display()))?;
    let base = args.manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let method = args.method.clone().unwrap_or_else(|| {
        args.predictions
            .file_stem()
            .map_or_else(|| "method".into(), |s| s.to_string_lossy().into_owned())
    });

    let header = ResultsHeader {
        schema_version: RESULTS_SCHEMA_VERSION,
        tool_version: fde_core::TOOL_VERSION.to_string(),
        method,
        manifest: args.manifest.display().to_string(),
        manifest_tool_version: reader.header().tool_version.clone(),
        predictions: args.predictions.display().to_string(),
        config,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .context("building thread pool")?;

    let mut out = JsonlWriter::create(&args.out)?;
    out.write(&header)?;
    let mut checks = ManifestChecks::default();
    let mut errors = Vec::new();
    let mut evaluated = 0usize;
    let mut entries = reader.peekable();
    while entries.peek().is_some() {
        let batch: Vec<ManifestEntry> = entries
            .by_ref()
            .take(BATCH)
            .collect::<Result<_, _>>()
            .context("reading manifest")?;
        for e in &batch {
            checks.observe(e)?;
        }
        let results: Vec<Result<TripletResult>> = pool.install(|| {
            batch
                .par_iter()
                .map(|e| evaluate_entry(e, &base, &index, &config))
                .collect()
        });
        for (e, r) in batch.iter().zip(results) {
            match r {
                Ok(res) => {
                    out.write(&res)?;
                    evaluated += 1;
                }
                Err(err) => {
                    log::warn!("{}: {err:#}", e.triplet_id);
                    errors.push(TripletError {
                        triplet_id: e.triplet_id.clone(),
                        error: format!("{err:#}"),
                    });
                }
            }
        }
    }
    out.finish()?;

    let failed = errors.len();
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "results": args.out,
            "evaluated": evaluated,
            "failed": failed,
            "errors": errors,
        }))?
    );
    Ok(if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

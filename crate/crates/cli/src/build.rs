use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use fde_core::bench::{
    build_manifest, parse_split_file, BuildConfig, SkippedSource, SourceRecord, DEFAULT_MIN_AREA_FRAC,
};
use fde_core::{DepthFormat, ValidityBounds};
use serde_json::Value;
use walkdir::WalkDir;

use crate::jsonl::{write_json, JsonlWriter};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GroupBy {
    /// Parent directory of the source (sequence-level); the source itself
    /// when it sits at the top level.
    Parent,
    /// Each source image is its own group.
    Image,
}

#[derive(Args, Debug)]
pub struct BuildArgs {
    /// Directory of RGB images (carried as opaque paths).
    #[arg(long)]
    images: PathBuf,
    /// Directory of depth maps (.png 16-bit or .npy f32).
    #[arg(long)]
    depth: PathBuf,
    /// Directory of instance-ID maps (.png, 8- or 16-bit). Drives discovery.
    #[arg(long)]
    instances: PathBuf,
    /// JSON class names: `{"<id>": "name"}` for all sources, or
    /// `{"<source_id>": {"<id>": "name"}}` per source.
    #[arg(long)]
    classes: Option<PathBuf>,
    #[arg(long)]
    dataset: String,
    #[arg(long, default_value_t = DEFAULT_MIN_AREA_FRAC)]
    min_area_frac: f64,
    #[arg(long, default_value_t = 0.2)]
    val_ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = GroupBy::Parent)]
    group_by: GroupBy,
    /// Explicit `group_key split` table; replaces hash assignment.
    #[arg(long)]
    split_file: Option<PathBuf>,
    /// Meters per PNG count.
    #[arg(long, default_value_t = 0.001)]
    depth_scale: f64,
    /// Override the extension-derived depth format (npy-f32 | png-16).
    #[arg(long)]
    depth_format: Option<DepthFormat>,
    #[arg(long, default_value_t = ValidityBounds::METRIC.min_depth)]
    min_depth: f64,
    /// Use `inf` for no upper bound.
    #[arg(long, default_value_t = ValidityBounds::METRIC.max_depth)]
    max_depth: f64,
    /// Mark every entry as carrying an automatically generated mask.
    #[arg(long)]
    pseudo_mask: bool,
    /// Output manifest (.jsonl).
    #[arg(long)]
    out: PathBuf,
    /// Build report path; defaults to `<out>.report.json`.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, env = "FDE_JOBS", default_value_t = 0)]
    jobs: usize,
}

fn find_with_ext(dir: &Path, stem: &Path, exts: &[&str]) -> Option<PathBuf> {
    exts.iter()
        .map(|e| dir.join(stem).with_extension(e))
        .find(|p| p.is_file())
}

type ClassNames = BTreeMap<u16, String>;

/// Global names and per-source names; at most one of them is non-empty.
fn load_classes(path: &Path) -> Result<(ClassNames, BTreeMap<String, ClassNames>)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let Value::Object(top) = value else {
        bail!("{}: expected a JSON object", path.display());
    };
    let parse_map = |obj: &serde_json::Map<String, Value>| -> Result<BTreeMap<u16, String>> {
        obj.iter()
            .map(|(k, v)| {
                let id: u16 = k.parse().with_context(|| format!("instance id `{k}`"))?;
                let name = v
                    .as_str()
                    .with_context(|| format!("class name for {k} is not a string"))?;
                Ok((id, name.to_string()))
            })
            .collect()
    };
    if top.values().all(Value::is_string) {
        return Ok((parse_map(&top)?, BTreeMap::new()));
    }
    let mut per_source = BTreeMap::new();
    for (src, v) in &top {
        let obj = v
            .as_object()
            .with_context(|| format!("classes for `{src}` must be an object"))?;
        per_source.insert(src.clone(), parse_map(obj)?);
    }
    Ok((BTreeMap::new(), per_source))
}

/// Walk the instance directory and pair every map with its depth and image.
fn discover(args: &BuildArgs) -> Result<(Vec<SourceRecord>, Vec<SkippedSource>)> {
    let (global, per_source) = match &args.classes {
        Some(p) => load_classes(p)?,
        None => Default::default(),
    };
    let mut sources = Vec::new();
    let mut skipped = Vec::new();
    for entry in WalkDir::new(&args.instances).sort_by_file_name() {
        let entry = entry.with_context(|| format!("walking {}", args.instances.display()))?;
        let path = entry.path();
        if !entry.file_type().is_file() || path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let rel = path.strip_prefix(&args.instances).expect("walk stays under root");
        let stem = rel.with_extension("");
        let source_id = stem.to_string_lossy().replace('\\', "/");
        let depth = find_with_ext(&args.depth, &stem, &["png", "npy"]);
        let image = find_with_ext(&args.images, &stem, &["png", "jpg", "jpeg"]);
        let (Some(depth), Some(image)) = (depth, image) else {
            log::warn!("{source_id}: missing depth or image file");
            skipped.push(SkippedSource {
                source_id,
                reason: "missing depth or image file".into(),
            });
            continue;
        };
        let group_key = match args.group_by {
            GroupBy::Image => source_id.clone(),
            GroupBy::Parent => match stem.parent().filter(|p| !p.as_os_str().is_empty()) {
                Some(p) => p.to_string_lossy().replace('\\', "/"),
                None => source_id.clone(),
            },
        };
        let class_names = per_source
            .get(&source_id)
            .cloned()
            .or_else(|| (!global.is_empty()).then(|| global.clone()));
        sources.push(SourceRecord {
            source_id,
            image_path: std::path::absolute(&image)?,
            depth_path: std::path::absolute(&depth)?,
            instance_map_path: std::path::absolute(path)?,
            group_key,
            class_names,
            pseudo_mask: args.pseudo_mask,
        });
    }
    Ok((sources, skipped))
}

pub fn run(args: BuildArgs) -> Result<ExitCode> {
    let (sources, missing) = discover(&args)?;
    let out_dir = std::path::absolute(args.out.parent().unwrap_or(Path::new(".")))?;
    let split_table = match &args.split_file {
        Some(p) => Some(parse_split_file(
            &std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )?),
        None => None,
    };
    let config = BuildConfig {
        dataset: args.dataset.clone(),
        min_area_frac: args.min_area_frac,
        val_ratio: args.val_ratio,
        seed: args.seed,
        depth_format: args.depth_format,
        depth_scale: args.depth_scale,
        min_depth: args.min_depth,
        max_depth: args.max_depth,
        split_table,
        base_dir: Some(out_dir),
    };
    let mut output = build_manifest(&sources, &config, args.jobs)?;
    output.report.sources += missing.len();
    output.report.skipped.extend(missing);
    output.report.skipped.sort_by(|a, b| a.source_id.cmp(&b.source_id));

    let mut w = JsonlWriter::create(&args.out)?;
    w.write(&output.header)?;
    for e in &output.entries {
        w.write(e)?;
    }
    w.finish()?;

    let report_path = args.report.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".report.json");
        PathBuf::from(p)
    });
    let report = serde_json::json!({
        "tool_version": fde_core::TOOL_VERSION,
        "config": output.header.config,
        "report": output.report,
    });
    write_json(&report_path, &report)?;
    println!(
        "{}",
        serde_json::json!({
            "manifest": args.out,
            "report": report_path,
            "images": output.report.images,
            "triplets": output.report.triplets,
            "skipped": output.report.skipped.len(),
        })
    );
    Ok(ExitCode::SUCCESS)
}

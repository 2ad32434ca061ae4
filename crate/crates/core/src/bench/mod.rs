//! Benchmark construction: target extraction, split assignment, and the
//! JSON-lines triplet manifest.

mod build;
mod manifest;
mod splits;
mod targets;

pub use build::{
    build_manifest, triplet_id, BuildConfig, BuildOutput, BuildReport, SkippedSource, SourceRecord, SplitCounts,
};
pub use manifest::{
    read_manifest, validate_entry, validate_manifest, write_manifest, ManifestEntry, ManifestHeader, ManifestReader,
    MANIFEST_SCHEMA_VERSION,
};
pub use splits::{assign_splits, parse_split_file, split_for, Split};
pub use targets::{extract_targets, instance_areas, Target, DEFAULT_MIN_AREA_FRAC};

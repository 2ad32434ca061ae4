//! Triplet manifests: a header line followed by one JSON entry per line,
//! sorted by `triplet_id`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Lines, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::splits::Split;
use crate::depth::{tight_bbox, BBox, ValidityBounds};
use crate::error::{Error, Result};
use crate::io::{decode_mask, DepthFormat};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// `+inf` is not representable in JSON; it round-trips as `null`.
pub(crate) mod unbounded {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// First line of a manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub schema_version: u32,
    pub tool_version: String,
    pub dataset: String,
    pub config: serde_json::Value,
}

/// One image–target–depth triplet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub triplet_id: String,
    pub dataset: String,
    pub split: Split,
    pub group_key: String,
    pub image_path: String,
    pub depth_path: String,
    pub mask_path: String,
    pub depth_format: DepthFormat,
    pub depth_scale: f64,
    pub instance_id: Option<u16>,
    pub bbox: BBox,
    pub text_prompt: Option<String>,
    pub pseudo_mask: bool,
    pub min_depth: f64,
    #[serde(with = "unbounded")]
    pub max_depth: f64,
}

impl ManifestEntry {
    pub fn bounds(&self) -> Result<ValidityBounds> {
        ValidityBounds::new(self.min_depth, self.max_depth)
    }

    /// `box` or `box/text`.
    pub fn prompt_types(&self) -> &'static str {
        if self.text_prompt.is_some() {
            "box/text"
        } else {
            "box"
        }
    }

    /// Resolve a stored path against the manifest's directory.
    pub fn resolve(base: &Path, stored: &str) -> PathBuf {
        let p = Path::new(stored);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }
}

/// Write header and entries as JSON lines.
pub fn write_manifest<W: Write>(mut out: W, header: &ManifestHeader, entries: &[ManifestEntry]) -> Result<()> {
    serde_json::to_writer(&mut out, header)?;
    out.write_all(b"\n")?;
    for entry in entries {
        serde_json::to_writer(&mut out, entry)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Streaming manifest reader.
pub struct ManifestReader<R> {
    header: ManifestHeader,
    lines: Lines<R>,
    line_no: usize,
    path: PathBuf,
}

impl ManifestReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        Self::new(BufReader::new(File::open(path)?), path)
    }
}

impl<R: BufRead> ManifestReader<R> {
    pub fn new(reader: R, path: &Path) -> Result<Self> {
        let mut lines = reader.lines();
        let first = lines.next().transpose()?.ok_or_else(|| Error::Record {
            path: path.to_path_buf(),
            line: 1,
            reason: "empty manifest".into(),
        })?;
        let header: ManifestHeader = serde_json::from_str(&first).map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: 1,
            reason: format!("bad header: {e}"),
        })?;
        if header.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Record {
                path: path.to_path_buf(),
                line: 1,
                reason: format!("unsupported schema_version {}", header.schema_version),
            });
        }
        Ok(Self {
            header,
            lines,
            line_no: 1,
            path: path.to_path_buf(),
        })
    }

    pub fn header(&self) -> &ManifestHeader {
        &self.header
    }
}

impl<R: BufRead> Iterator for ManifestReader<R> {
    type Item = Result<ManifestEntry>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            return Some(serde_json::from_str(&line).map_err(|e| Error::Record {
                path: self.path.clone(),
                line: self.line_no,
                reason: e.to_string(),
            }));
        }
    }
}

/// Read a whole manifest into memory.
pub fn read_manifest(path: &Path) -> Result<(ManifestHeader, Vec<ManifestEntry>)> {
    let reader = ManifestReader::open(path)?;
    let header = reader.header().clone();
    let entries = reader.collect::<Result<Vec<_>>>()?;
    Ok((header, entries))
}

/// Check a single entry against its mask file: mask non-empty and the stored
/// box equal to its tight bounding box.
pub fn validate_entry(entry: &ManifestEntry, base: &Path) -> Result<()> {
    let mask_path = ManifestEntry::resolve(base, &entry.mask_path);
    let mask = decode_mask(&mask_path, entry.instance_id)?;
    let bbox = tight_bbox(&mask)?;
    if bbox != entry.bbox {
        return Err(Error::invalid(format!(
            "{}: stored bbox {:?} is not the tight box {:?}",
            entry.triplet_id, entry.bbox, bbox
        )));
    }
    entry.bounds()?;
    Ok(())
}

/// Manifest-level checks: unique ids in sorted order, one split per group.
pub fn validate_manifest(entries: &[ManifestEntry]) -> Result<()> {
    let mut seen = BTreeSet::new();
    let mut group_split: BTreeMap<&str, Split> = BTreeMap::new();
    let mut prev: Option<&str> = None;
    for e in entries {
        if !seen.insert(e.triplet_id.as_str()) {
            return Err(Error::DuplicateTripletId(e.triplet_id.clone()));
        }
        if prev.is_some_and(|p| p > e.triplet_id.as_str()) {
            return Err(Error::invalid(format!("manifest not sorted at `{}`", e.triplet_id)));
        }
        prev = Some(&e.triplet_id);
        match group_split.insert(&e.group_key, e.split) {
            Some(s) if s != e.split => {
                return Err(Error::invalid(format!(
                    "group `{}` appears in both splits",
                    e.group_key
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, group: &str, split: Split) -> ManifestEntry {
        ManifestEntry {
            triplet_id: id.into(),
            dataset: "toy".into(),
            split,
            group_key: group.into(),
            image_path: "rgb/a.png".into(),
            depth_path: "depth/a.png".into(),
            mask_path: "inst/a.png".into(),
            depth_format: DepthFormat::Png16,
            depth_scale: 0.001,
            instance_id: Some(3),
            bbox: BBox {
                x_min: 0,
                y_min: 0,
                x_max: 1,
                y_max: 1,
            },
            text_prompt: None,
            pseudo_mask: false,
            min_depth: 1e-6,
            max_depth: f64::INFINITY,
        }
    }

    #[test]
    fn unbounded_depth_round_trips() {
        let e = entry("a", "g", Split::Train);
        let line = serde_json::to_string(&e).unwrap();
        assert!(line.contains("\"max_depth\":null"));
        let back: ManifestEntry = serde_json::from_str(&line).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn manifest_round_trip_through_reader() {
        let header = ManifestHeader {
            schema_version: MANIFEST_SCHEMA_VERSION,
            tool_version: "test".into(),
            dataset: "toy".into(),
            config: serde_json::json!({"seed": 1}),
        };
        let entries = vec![entry("a", "g1", Split::Train), entry("b", "g2", Split::Val)];
        let mut buf = Vec::new();
        write_manifest(&mut buf, &header, &entries).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 3);
        let reader = ManifestReader::new(&buf[..], Path::new("mem")).unwrap();
        assert_eq!(reader.header(), &header);
        let back: Vec<_> = reader.collect::<Result<_>>().unwrap();
        assert_eq!(back, entries);
    }

    #[test]
    fn bad_lines_report_their_position() {
        let text = format!(
            "{}\n{{\"nope\":1}}\n",
            serde_json::json!({"schema_version":1,"tool_version":"t","dataset":"d","config":{}})
        );
        let mut reader = ManifestReader::new(text.as_bytes(), Path::new("m.jsonl")).unwrap();
        let err = reader.next().unwrap().unwrap_err();
        assert!(err.to_string().contains("m.jsonl:2"));
    }

    #[test]
    fn group_leakage_is_detected() {
        let ok = vec![entry("a", "g", Split::Val), entry("b", "g", Split::Val)];
        assert!(validate_manifest(&ok).is_ok());
        let leak = vec![entry("a", "g", Split::Val), entry("b", "g", Split::Train)];
        assert!(validate_manifest(&leak).is_err());
        let dup = vec![entry("a", "g", Split::Val), entry("a", "g", Split::Val)];
        assert!(matches!(validate_manifest(&dup), Err(Error::DuplicateTripletId(_))));
    }
}

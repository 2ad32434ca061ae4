use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use twox_hash::XxHash64;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Val => "val",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "val" | "validation" => Ok(Self::Val),
            other => Err(Error::invalid(format!("unknown split `{other}`"))),
        }
    }
}

/// Split of a single group: XxHash64 of the key under `seed`, mapped to
/// `[0, 1)` and compared against `val_ratio`.
pub fn split_for(group_key: &str, val_ratio: f64, seed: u64) -> Split {
    let h = XxHash64::oneshot(seed, group_key.as_bytes());
    // Top 53 bits give an exactly representable unit fraction.
    let u = (h >> 11) as f64 / (1u64 << 53) as f64;
    if u < val_ratio {
        Split::Val
    } else {
        Split::Train
    }
}

/// Deterministic group-level split assignment. Every key maps to one split,
/// so all triplets of an image or sequence land together.
pub fn assign_splits<S: AsRef<str>>(group_keys: &[S], val_ratio: f64, seed: u64) -> Result<BTreeMap<String, Split>> {
    if !(val_ratio > 0.0 && val_ratio < 1.0) {
        return Err(Error::invalid(format!("val_ratio must lie in (0, 1), got {val_ratio}")));
    }
    Ok(group_keys
        .iter()
        .map(|k| (k.as_ref().to_string(), split_for(k.as_ref(), val_ratio, seed)))
        .collect())
}

/// Parse an explicit split file: one `group_key<whitespace>split` per line,
/// `#` comments and blank lines ignored.
pub fn parse_split_file(text: &str) -> Result<BTreeMap<String, Split>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, split) = line
            .rsplit_once(char::is_whitespace)
            .ok_or_else(|| Error::invalid(format!("split file line {}: expected `key split`", i + 1)))?;
        let split: Split = split.trim().parse()?;
        if let Some(prev) = out.insert(key.trim().to_string(), split) {
            if prev != split {
                return Err(Error::invalid(format!(
                    "split file assigns `{}` to both splits",
                    key.trim()
                )));
            }
        }
    }
    Ok(out)
}

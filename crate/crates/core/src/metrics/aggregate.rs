use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;

/// Which statistic a table headlines.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StatMode {
    #[default]
    #[serde(rename = "median-quartiles")]
    MedianQuartiles,
    #[serde(rename = "mean")]
    Mean,
}

impl fmt::Display for StatMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::MedianQuartiles => "median-quartiles",
            Self::Mean => "mean",
        })
    }
}

impl FromStr for StatMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "median" | "median-quartiles" => Ok(Self::MedianQuartiles),
            "mean" => Ok(Self::Mean),
            other => Err(Error::invalid(format!("unknown statistic `{other}`"))),
        }
    }
}

/// Summary of one metric over the triplets of a group.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub median: Option<f64>,
    pub q25: Option<f64>,
    pub q75: Option<f64>,
    pub mean: Option<f64>,
    pub count: usize,
    pub statistic_mode: StatMode,
}

impl AggregateStats {
    pub fn empty(mode: StatMode) -> Self {
        Self {
            median: None,
            q25: None,
            q75: None,
            mean: None,
            count: 0,
            statistic_mode: mode,
        }
    }
}

/// Quantile of sorted data with linear interpolation at `h = (n − 1)·q`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Median, quartiles, and mean of `values`. Every statistic is computed over
/// the sorted values, so the result does not depend on input order.
pub fn aggregate(values: &[f64], mode: StatMode) -> AggregateStats {
    if values.is_empty() {
        return AggregateStats::empty(mode);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    AggregateStats {
        median: quantile_sorted(&sorted, 0.5),
        q25: quantile_sorted(&sorted, 0.25),
        q75: quantile_sorted(&sorted, 0.75),
        mean: Some(pairwise_sum(&sorted) / sorted.len() as f64),
        count: sorted.len(),
        statistic_mode: mode,
    }
}

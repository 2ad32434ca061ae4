//! Table rendering in the benchmark's cell style: δ1 as `median (q25, q75)`
//! and AbsRel as `median`, three decimals.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::aggregate::{AggregateStats, StatMode};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Boundary,
    Foreground,
    Global,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Boundary, Region::Foreground, Region::Global];

    pub fn title(&self) -> &'static str {
        match self {
            Self::Boundary => "Boundary",
            Self::Foreground => "Foreground",
            Self::Global => "Global",
        }
    }

    pub fn key(&self) -> &'static str {
        match self {
            Self::Boundary => "boundary",
            Self::Foreground => "foreground",
            Self::Global => "global",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Delta1,
    Absrel,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::Delta1, Metric::Absrel];

    pub fn title(&self) -> &'static str {
        match self {
            Self::Delta1 => "δ1",
            Self::Absrel => "AbsRel",
        }
    }

    pub fn key(&self) -> &'static str {
        match self {
            Self::Delta1 => "delta1",
            Self::Absrel => "absrel",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Markdown,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markdown" | "md" => Ok(Self::Markdown),
            "csv" => Ok(Self::Csv),
            other => Err(Error::invalid(format!("unknown report format `{other}`"))),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Markdown => "markdown",
            Self::Csv => "csv",
        })
    }
}

/// dataset → method → region → metric → stats.
pub type StatsTable = BTreeMap<String, BTreeMap<String, BTreeMap<Region, BTreeMap<Metric, AggregateStats>>>>;

/// Round half away from zero to three decimals.
pub fn format_3dp(value: f64) -> String {
    let rounded = (value * 1000.0).round() / 1000.0;
    // Avoid "-0.000".
    let rounded = if rounded == 0.0 { 0.0 } else { rounded };
    format!("{rounded:.3}")
}

/// One table cell. Missing statistics render as `-`.
pub fn format_cell(stats: Option<&AggregateStats>, metric: Metric) -> String {
    let Some(stats) = stats else {
        return "-".to_string();
    };
    match stats.statistic_mode {
        StatMode::Mean => stats.mean.map_or_else(|| "-".to_string(), format_3dp),
        StatMode::MedianQuartiles => match (metric, stats.median, stats.q25, stats.q75) {
            (Metric::Delta1, Some(m), Some(lo), Some(hi)) => {
                format!("{} ({}, {})", format_3dp(m), format_3dp(lo), format_3dp(hi))
            }
            (Metric::Absrel, Some(m), _, _) => format_3dp(m),
            _ => "-".to_string(),
        },
    }
}

fn rows(table: &StatsTable) -> Vec<(&str, &str, Vec<String>)> {
    let mut out = Vec::new();
    for (dataset, methods) in table {
        for (method, regions) in methods {
            let cells = Region::ALL
                .iter()
                .flat_map(|region| {
                    Metric::ALL
                        .iter()
                        .map(move |metric| format_cell(regions.get(region).and_then(|m| m.get(metric)), *metric))
                })
                .collect();
            out.push((dataset.as_str(), method.as_str(), cells));
        }
    }
    out
}

/// Render a full table. Rows are ordered by dataset, then method.
pub fn render_report(table: &StatsTable, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Markdown => {
            let mut s = String::from("| Dataset | Method |");
            for region in Region::ALL {
                for metric in Metric::ALL {
                    write!(s, " {} {} |", region.title(), metric.title()).unwrap();
                }
            }
            s.push_str("\n|---|---|");
            s.push_str(&"---|".repeat(Region::ALL.len() * Metric::ALL.len()));
            s.push('\n');
            for (dataset, method, cells) in rows(table) {
                write!(s, "| {dataset} | {method} |").unwrap();
                for cell in cells {
                    write!(s, " {cell} |").unwrap();
                }
                s.push('\n');
            }
            Ok(s)
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header = vec!["dataset".to_string(), "method".to_string()];
            for region in Region::ALL {
                for metric in Metric::ALL {
                    header.push(format!("{}_{}", region.key(), metric.key()));
                }
            }
            w.write_record(&header).map_err(csv_err)?;
            for (dataset, method, cells) in rows(table) {
                let mut record = vec![dataset.to_string(), method.to_string()];
                record.extend(cells);
                w.write_record(&record).map_err(csv_err)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("csv: {e}"))
}

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Args;
use fde_core::metrics::{aggregate, render_report, Metric, Region, ReportFormat, StatMode, StatsTable, TripletResult};
use serde::{Deserialize, Serialize};

use crate::evaluate::ResultsHeader;
use crate::jsonl::write_json;

#[derive(Args, Debug)]
pub struct AggregateArgs {
    /// Results files written by `evaluate`.
    #[arg(long, required = true, num_args = 1..)]
    results: Vec<PathBuf>,
    /// `median` (median with quartiles) or `mean`.
    #[arg(long, default_value_t = StatMode::MedianQuartiles)]
    stat: StatMode,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Statistics file written by `aggregate`.
    #[arg(long)]
    stats: PathBuf,
    #[arg(long, default_value_t = ReportFormat::Markdown)]
    format: ReportFormat,
    /// Write to a file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StatsFile {
    pub tool_version: String,
    pub statistic_mode: StatMode,
    pub inputs: Vec<String>,
    pub table: StatsTable,
}

type Samples = BTreeMap<String, BTreeMap<String, BTreeMap<Region, BTreeMap<Metric, Vec<f64>>>>>;

fn collect(path: &PathBuf, samples: &mut Samples) -> Result<()> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .transpose()?
        .with_context(|| format!("{}: empty results file", path.display()))?;
    let header: ResultsHeader =
        serde_json::from_str(&first).with_context(|| format!("{}:1: bad results header", path.display()))?;
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: TripletResult =
            serde_json::from_str(&line).with_context(|| format!("{}:{}: bad result line", path.display(), i + 2))?;
        let row = format!("{}/{}", header.method, r.prompt_type);
        let by_region = samples.entry(r.dataset.clone()).or_default().entry(row).or_default();
        for region in Region::ALL {
            let m = r.regions.get(region);
            let cell = by_region.entry(region).or_default();
            for (metric, v) in [(Metric::Delta1, m.delta1), (Metric::Absrel, m.absrel)] {
                let values = cell.entry(metric).or_default();
                if let Some(v) = v {
                    values.push(v);
                }
            }
        }
    }
    Ok(())
}

/// Per-target statistics grouped by dataset, method/prompt type, region, and
/// metric. Regions left empty for a triplet do not contribute.
pub fn run_aggregate(args: AggregateArgs) -> Result<ExitCode> {
    let mut samples = Samples::new();
    for path in &args.results {
        collect(path, &mut samples)?;
    }
    let table: StatsTable = samples
        .into_iter()
        .map(|(dataset, rows)| {
            let rows = rows
                .into_iter()
                .map(|(row, regions)| {
                    let regions = regions
                        .into_iter()
                        .map(|(region, metrics)| {
                            let metrics = metrics
                                .into_iter()
                                .map(|(metric, values)| (metric, aggregate(&values, args.stat)))
                                .collect();
                            (region, metrics)
                        })
                        .collect();
                    (row, regions)
                })
                .collect();
            (dataset, rows)
        })
        .collect();
    let stats = StatsFile {
        tool_version: fde_core::TOOL_VERSION.to_string(),
        statistic_mode: args.stat,
        inputs: args.results.iter().map(|p| p.display().to_string()).collect(),
        table,
    };
    write_json(&args.out, &stats)?;
    println!(
        "{}",
        serde_json::json!({ "stats": args.out, "datasets": stats.table.len() })
    );
    Ok(ExitCode::SUCCESS)
}

pub fn run_report(args: ReportArgs) -> Result<ExitCode> {
    let text = std::fs::read_to_string(&args.stats).with_context(|| format!("reading {}", args.stats.display()))?;
    let stats: StatsFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", args.stats.display()))?;
    let rendered = render_report(&stats.table, args.format)?;
    match &args.out {
        Some(p) => std::fs::write(p, rendered).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{rendered}"),
    }
    Ok(ExitCode::SUCCESS)
}

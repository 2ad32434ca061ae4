use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::Args;
use fde_core::verify::run_all;

use crate::jsonl::write_json;

#[derive(Args, Debug)]
pub struct KernelCheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the suite reports as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

pub fn run(args: KernelCheckArgs) -> Result<ExitCode> {
    let reports = run_all(args.seed);
    for r in &reports {
        println!(
            "{} {:<16} {:>7} cases {:>7.2}s  {}",
            if r.pass { "PASS" } else { "FAIL" },
            r.name,
            r.cases,
            r.seconds,
            r.detail
        );
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.pass).map(|r| r.name.as_str()).collect();
    if let Some(path) = &args.json {
        write_json(
            path,
            &serde_json::json!({
                "tool_version": fde_core::TOOL_VERSION,
                "seed": args.seed,
                "suites": reports,
                "errors": failed,
            }),
        )?;
    }
    Ok(if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

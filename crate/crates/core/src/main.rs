use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Parser;

use blemesh::config::{ScenarioConfig, ScenarioKind};
use blemesh::scenario;

/// Runs a BLE mesh scenario and writes its KPIs as CSV.
#[derive(Debug, Parser)]
#[command(name = "blemesh", version)]
struct Cli {
    /// Scenario file (TOML). Without it the preset of `--scenario` is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed of the first run.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of runs; the seed increments by one per run.
    #[arg(long)]
    runs: Option<u32>,
    /// Output directory for packets.csv, nodes.csv and summary.csv.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// case1, case2, case3 or custom.
    #[arg(long)]
    scenario: Option<ScenarioKind>,
    /// Print link-layer counters of every run.
    #[arg(long)]
    verbose: bool,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = match (&cli.config, cli.scenario) {
        (Some(path), _) => ScenarioConfig::load(path)?,
        (None, Some(kind)) => scenario::preset(kind),
        (None, None) => ScenarioConfig::default(),
    };
    if let Some(kind) = cli.scenario {
        cfg.scenario = kind;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(runs) = cli.runs {
        cfg.runs = runs;
    }
    cfg.validate()?;
    if cli.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let report = scenario::run(&cfg)?;
    report.export(&cli.out).with_context(|| format!("exporting to {}", cli.out.display()))?;
    if cli.verbose {
        for r in &report.runs {
            eprintln!("seed {} end {:.3}s {:?}", r.seed, r.end.as_secs_f64(), r.stats);
        }
    }
    for row in &report.summary {
        println!(
            "{:<20} n={:<3} mean={:<10.4} min={:<10.4} max={:<10.4} sd={:.4}",
            row.metric, row.n, row.mean, row.min, row.max, row.stddev
        );
    }
    println!("wrote {} packet rows and {} node rows to {}", report.kpi.packets.len(), report.kpi.nodes.len(), cli.out.display());
    Ok(())
}

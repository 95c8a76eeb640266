use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fanet_core::harness::config::parse_seed_range;
use fanet_core::harness::output::{read_runs, summarize, to_csv, write_atomic};
use fanet_core::harness::{pipe_width_study, run_scenario, HarnessError, ScenarioConfig};
use fanet_core::proto::ProtocolKind;

#[derive(Parser)]
#[command(name = "fanet", version, about = "FANET routing simulator: AODV, LEPR and H-AODV")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario over a range of seeds and write per-run CSV files.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Inclusive seed range `a..b`, or one seed; defaults to the config's list.
        #[arg(long, value_parser = parse_seeds)]
        seeds: Option<Seeds>,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated protocols to run instead of the configured one.
        #[arg(long, value_delimiter = ',')]
        protocols: Vec<ProtocolKind>,
        /// Worker threads.
        #[arg(long, default_value_t = default_jobs())]
        jobs: usize,
    },
    /// Parameter studies.
    Study {
        #[command(subcommand)]
        which: Study,
    },
    /// Aggregate the runs in a directory into mean and 95% CI per metric.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum Study {
    /// Neighbors tracked and alternate routes per pipe width.
    PipeWidth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = parse_seeds)]
        seeds: Option<Seeds>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        widths: Vec<u32>,
        /// Seconds between route samples.
        #[arg(long, default_value_t = 5.0)]
        interval: f64,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    parse_seed_range(s).map(Seeds)
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn load(path: &PathBuf, seeds: Option<Seeds>) -> Result<ScenarioConfig, HarnessError> {
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(Seeds(s)) = seeds {
        cfg.seeds = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                HarnessError::Config(_) => ExitCode::from(2),
                HarnessError::Sim(_) => ExitCode::from(3),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<(), HarnessError> {
    match cmd {
        Cmd::Run { config, seeds, out, protocols, jobs } => {
            let cfg = load(&config, seeds)?;
            let cfgs: Vec<ScenarioConfig> = if protocols.is_empty() {
                vec![cfg.clone()]
            } else {
                protocols.iter().map(|&p| ScenarioConfig { protocol: p, ..cfg.clone() }).collect()
            };
            let output = run_scenario(&cfgs, &cfg.seeds, jobs)?;
            print!("{}", output.config);
            output.write_to(&out)?;
            let rows = read_runs(&out.join("runs.csv"))?;
            for r in &rows {
                println!(
                    "{} seed={} pdr={:.4} discoveries/flow={:.2} control_mb={:.3}",
                    r.protocol,
                    r.seed,
                    r.pdr,
                    r.discoveries_per_flow,
                    r.control_bytes as f64 / 1e6
                );
            }
            eprintln!("wrote {} runs to {}", rows.len(), out.display());
        }
        Cmd::Study { which: Study::PipeWidth { config, seeds, widths, interval, out } } => {
            let cfg = load(&config, seeds)?;
            let rows = pipe_width_study(&cfg, &widths, interval)?;
            println!("width,neighbors_mean,neighbors_ci_low,neighbors_ci_high,routes_le,routes_gt,routes_sampled,truncated");
            let mut csv_rows = Vec::new();
            for r in &rows {
                let row = PipeRow {
                    width: r.width,
                    neighbors_mean: r.neighbors.mean,
                    neighbors_ci_low: r.neighbors.ci_low,
                    neighbors_ci_high: r.neighbors.ci_high,
                    routes_le: r.routes_le,
                    routes_gt: r.routes_gt,
                    routes_sampled: r.routes_sampled,
                    truncated: r.truncated,
                };
                println!(
                    "{},{:.2},{:.2},{:.2},{:.2},{:.2},{},{}",
                    row.width,
                    row.neighbors_mean,
                    row.neighbors_ci_low,
                    row.neighbors_ci_high,
                    row.routes_le,
                    row.routes_gt,
                    row.routes_sampled,
                    row.truncated
                );
                csv_rows.push(row);
            }
            if let Some(path) = out {
                write_atomic(&path, &to_csv(&csv_rows)?)?;
            }
        }
        Cmd::Report { input, out } => {
            let rows = read_runs(&input.join("runs.csv"))?;
            let summary = summarize(&rows)?;
            write_atomic(&out, &to_csv(&summary)?)?;
            eprintln!("summarized {} runs into {} rows at {}", rows.len(), summary.len(), out.display());
        }
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct PipeRow {
    width: u32,
    neighbors_mean: f64,
    neighbors_ci_low: f64,
    neighbors_ci_high: f64,
    routes_le: f64,
    routes_gt: f64,
    routes_sampled: usize,
    truncated: usize,
}

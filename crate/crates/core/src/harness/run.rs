//! Building and running scenarios, optionally across worker threads.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use crate::harness::config::ScenarioConfig;
use crate::harness::metrics::RunMetrics;
use crate::harness::output::{flow_rows, run_row, series_rows, to_csv, write_atomic};
use crate::harness::HarnessError;
use crate::proto::router::{Router, RouterConfig};
use crate::sim::Network;

pub fn router_config(cfg: &ScenarioConfig) -> Arc<RouterConfig> {
    Arc::new(RouterConfig {
        protocol: cfg.protocol,
        constants: cfg.constants.clone(),
        flow_ttl: cfg.ttl,
        range: cfg.mac.range,
    })
}

pub fn build_network(cfg: &ScenarioConfig, seed: u64) -> Result<Network<Router>, HarnessError> {
    let rc = router_config(cfg);
    Ok(Network::new(cfg.sim_params(seed), cfg.flows(seed), |id| Router::new(id, rc.clone()))?)
}

pub fn run_once(cfg: &ScenarioConfig, seed: u64) -> Result<RunMetrics, HarnessError> {
    let net = build_network(cfg, seed)?;
    let flows = net.flows().to_vec();
    let report = net.run()?;
    Ok(RunMetrics::from_report(seed, &flows, &report))
}

/// Runs every seed on up to `jobs` threads; results come back in seed order.
pub fn run_seeds(cfg: &ScenarioConfig, seeds: &[u64], jobs: usize) -> Result<Vec<RunMetrics>, HarnessError> {
    let jobs = jobs.clamp(1, seeds.len().max(1));
    if jobs == 1 {
        return seeds.iter().map(|&s| run_once(cfg, s)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunMetrics, HarnessError>>>> =
        Mutex::new((0..seeds.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= seeds.len() {
                    break;
                }
                let r = run_once(cfg, seeds[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("every seed ran")).collect()
}

/// Output of one `run` invocation.
#[derive(Debug, Default)]
pub struct ScenarioOutput {
    pub runs: Vec<u8>,
    pub flows: Vec<u8>,
    pub series: Vec<u8>,
    pub config: String,
}

/// Runs each configuration over `seeds` and renders the CSV files.
pub fn run_scenario(cfgs: &[ScenarioConfig], seeds: &[u64], jobs: usize) -> Result<ScenarioOutput, HarnessError> {
    let mut runs = Vec::new();
    let mut flows = Vec::new();
    let mut series = Vec::new();
    let mut config = String::new();
    for cfg in cfgs {
        cfg.validate()?;
        let mut resolved = cfg.clone();
        resolved.seeds = seeds.to_vec();
        config.push_str(&format!("# ---- scenario `{}`, protocol {} ----\n", cfg.name, cfg.protocol));
        config.push_str(&format!(
            "# fanet {}; averages exclude the first {} s; traffic stops {} s before the end\n",
            env!("CARGO_PKG_VERSION"),
            cfg.warmup,
            cfg.ttl
        ));
        config.push_str(&resolved.to_toml());
        config.push('\n');
        for m in run_seeds(cfg, seeds, jobs)? {
            runs.push(run_row(cfg, &m));
            flows.extend(flow_rows(cfg, &m));
            series.extend(series_rows(cfg, &m));
        }
    }
    Ok(ScenarioOutput { runs: to_csv(&runs)?, flows: to_csv(&flows)?, series: to_csv(&series)?, config })
}

impl ScenarioOutput {
    pub fn write_to(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir)?;
        write_atomic(&dir.join("config.toml"), self.config.as_bytes())?;
        write_atomic(&dir.join("runs.csv"), &self.runs)?;
        write_atomic(&dir.join("flows.csv"), &self.flows)?;
        write_atomic(&dir.join("series.csv"), &self.series)?;
        Ok(())
    }
}

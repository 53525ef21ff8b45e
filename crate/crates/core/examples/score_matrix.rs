//! Full agent x scenario score matrix (BC, BC+, IQL, IQL+ and the PI data),
//! averaged over training seeds.
//!
//! Usage: cargo run --release --example score_matrix [-- <config.toml> [seeds]]
//!
//! Without a config file the compiled-in defaults are used (2000 IQL epochs,
//! which takes a while). A quick run:
//!
//!   printf '[iql]\nepochs = 100\n[cost]\nepochs = 300\n' > /tmp/quick.toml
//!   RUST_LOG=info cargo run --release --example score_matrix -- /tmp/quick.toml 1

use std::path::Path;

use polycstr::benchmark::{run_matrix, BenchmarkConfig, AGENTS};
use polycstr::config::PipelineConfig;
use polycstr::evaluation::{dataset_report, mean_score_table, ScoreReport};
use polycstr::scenario::Scenario;

fn main() -> polycstr::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().collect();
    let pipeline = match args.get(1) {
        Some(p) => PipelineConfig::load(Path::new(p))?,
        None => PipelineConfig::default(),
    };
    let n_seeds: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3);
    let cfg = BenchmarkConfig::new(pipeline);

    let mut rows = Vec::new();
    for scenario in Scenario::ALL {
        let ds = cfg.dataset(scenario)?;
        rows.push(dataset_report(&ds.metadata)?);
        let runs: Vec<_> = (0..n_seeds).map(|seed| run_matrix(&cfg, &ds, seed)).collect::<polycstr::Result<_>>()?;
        for agent in AGENTS {
            // pool the episodes of every training seed into one row
            let reports: Vec<&ScoreReport> = runs.iter().filter_map(|r| r.report(agent)).collect();
            let returns = reports.iter().flat_map(|r| r.returns.iter().copied()).collect();
            let seeds = reports.iter().flat_map(|r| r.seeds.iter().copied()).collect();
            let runaways = reports.iter().map(|r| r.runaways).sum();
            rows.push(ScoreReport::from_returns(agent, scenario.name(), returns, seeds, runaways, ds.metadata.anchors()?)?);
        }
        for run in &runs {
            println!("{} seed {}: PICNN test r2 {:.3} mae {:.3}", run.scenario, run.training_seed, run.cost_fit.r2, run.cost_fit.mae);
        }
    }
    println!("{}", mean_score_table(&rows)?);
    Ok(())
}

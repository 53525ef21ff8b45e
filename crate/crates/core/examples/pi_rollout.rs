//! One PI-controlled episode per scenario, with the trace written to CSV.
//!
//! Usage: cargo run --release --example pi_rollout [-- <out dir>]

use std::path::PathBuf;

use polycstr::env::{save_trace_csv, EnvConfig, PolyCstrEnv, TraceRow};
use polycstr::pi::{PiController, PiSampling};
use polycstr::scenario::Scenario;

fn main() -> polycstr::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/pi_traces".into()));
    std::fs::create_dir_all(&out).map_err(|e| polycstr::Error::Io { path: out.clone(), source: e })?;
    let cfg = EnvConfig::default();
    let gains = PiSampling::default().nominal;

    for scenario in Scenario::ALL {
        let mut env = PolyCstrEnv::new(cfg.clone(), scenario.config())?;
        let mut obs = env.reset(42)?;
        let mut pi = PiController::new(gains, &cfg);
        pi.reset(&obs);
        let mut rows = Vec::new();
        let (mut total_reward, mut total_cost) = (0.0, 0.0);
        while !env.is_done() {
            let action = pi.act(&obs, &cfg);
            let step = env.step(action)?;
            total_reward += step.reward;
            total_cost += step.cost;
            rows.push(TraceRow {
                step: rows.len(),
                time_h: (rows.len() + 1) as f64 * cfg.dt,
                state: step.info.state,
                obs: step.observation,
                action,
                controls: step.info.controls,
                reward: step.reward,
                cost: step.cost,
                done: step.done,
            });
            obs = step.observation;
        }
        let last = rows.last().expect("non-empty episode");
        let path = out.join(format!("{}.csv", scenario.name()));
        save_trace_csv(&rows, &path)?;
        println!(
            "{:<10} steps {:>3}  return {:>8.1}  total cost {:>8.1}  final C_P {:>6.2}  T {:>7.2}  -> {}",
            scenario.name(),
            rows.len(),
            total_reward,
            total_cost,
            last.state.c_p,
            last.state.t,
            path.display()
        );
    }
    Ok(())
}

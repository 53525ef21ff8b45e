//! Implicit Q-learning with a per-epoch log of the critic and actor losses,
//! followed by a comparison against behaviour cloning on the same data.
//!
//! Usage: cargo run --release --example iql_training [-- <scenario> [epochs]]
//!
//! The default 40 epochs is a smoke run; the compiled-in default is 2000.

use polycstr::correction::CorrectionConfig;
use polycstr::dataset::generate_dataset;
use polycstr::env::EnvConfig;
use polycstr::evaluation::evaluate_agent;
use polycstr::picnn::CostModel;
use polycstr::pi::PiSampling;
use polycstr::scenario::Scenario;
use polycstr::trainers::{train_bc, train_iql_with, BcConfig, IqlConfig};

fn main() -> polycstr::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let scenario: Scenario = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(Scenario::GradeDown);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(40);
    let env = EnvConfig::default();
    let ds = generate_dataset(&env, &scenario.config(), &PiSampling::default(), 100, 1000)?;
    let data = ds.arrays();

    println!("{:>6} {:>10} {:>10} {:>10} {:>10}", "epoch", "V loss", "Q loss", "pi loss", "mean w");
    let every = (epochs / 10).max(1);
    let iql = train_iql_with(&data, &IqlConfig { epochs, ..Default::default() }, |epoch, row| {
        if (epoch + 1) % every == 0 {
            println!("{:>6} {:>10.4} {:>10.4} {:>10.4} {:>10.3}", epoch + 1, row[0], row[1], row[2], row[3]);
        }
    })?;
    if let Some(audit) = &iql.audit {
        println!("critic evaluations on logged actions {}, on policy actions {}, elsewhere {}", audit.q_evaluations, audit.policy_evaluations, audit.foreign_action_evaluations);
    }
    let bc = train_bc(&data, &BcConfig { epochs: epochs.min(200), ..Default::default() })?;

    let anchors = ds.metadata.anchors()?;
    let none: Option<(&CostModel, &CorrectionConfig)> = None;
    for (name, agent) in [("BC", &bc), ("IQL", &iql)] {
        let (r, _) = evaluate_agent(name, &env, &scenario.config(), agent, none, 20, 7, anchors)?;
        println!("{name:<4} mean score {:>6.1}  worst {:>6.1}", r.stats.mean, r.stats.min);
    }
    Ok(())
}

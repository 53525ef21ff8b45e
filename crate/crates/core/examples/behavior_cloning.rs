//! Behaviour cloning on a freshly generated PI dataset, then a short
//! evaluation against the dataset's return anchors.
//!
//! Usage: cargo run --release --example behavior_cloning [-- <scenario> [epochs]]

use polycstr::correction::CorrectionConfig;
use polycstr::dataset::generate_dataset;
use polycstr::env::EnvConfig;
use polycstr::evaluation::evaluate_agent;
use polycstr::picnn::CostModel;
use polycstr::pi::PiSampling;
use polycstr::scenario::Scenario;
use polycstr::trainers::{train_bc, BcConfig};

fn main() -> polycstr::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let scenario: Scenario = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(Scenario::GradeDown);
    let epochs = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(50);
    let env = EnvConfig::default();

    let ds = generate_dataset(&env, &scenario.config(), &PiSampling::default(), 100, 1000)?;
    let bundle = train_bc(&ds.arrays(), &BcConfig { epochs, ..Default::default() })?;
    let nll = bundle.history.column("nll").unwrap_or_default();
    if let (Some(first), Some(last)) = (nll.first(), nll.last()) {
        println!("{epochs} epochs: NLL {first:.3} -> {last:.3}, log_std {:?}", bundle.policy.log_std);
    }

    let (report, _) = evaluate_agent("BC", &env, &scenario.config(), &bundle, None::<(&CostModel, &CorrectionConfig)>, 20, 7, ds.metadata.anchors()?)?;
    println!(
        "{}: mean score {:.1}, median {:.1}, worst {:.1}, runaways {}",
        scenario.name(),
        report.stats.mean,
        report.stats.median,
        report.stats.min,
        report.runaways
    );
    Ok(())
}

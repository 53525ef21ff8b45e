//! Generate the PI datasets for all three scenarios and print their return
//! anchors.
//!
//! Usage: cargo run --release --example dataset_generation [-- <out dir> [episodes] [seed]]

use std::path::PathBuf;

use polycstr::dataset::{generate_dataset, load_dataset};
use polycstr::env::EnvConfig;
use polycstr::pi::PiSampling;
use polycstr::scenario::Scenario;

fn main() -> polycstr::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let out = PathBuf::from(args.get(1).cloned().unwrap_or_else(|| "target/datasets".into()));
    let episodes = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(100);
    let seed = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0);
    let env = EnvConfig::default();

    for scenario in Scenario::ALL {
        let ds = generate_dataset(&env, &scenario.config(), &PiSampling::default(), episodes, seed)?;
        let path = out.join(format!("{}.csv", scenario.name()));
        ds.save(&path)?;
        let (lo, hi) = ds.metadata.anchors()?;
        println!(
            "{:<10} {:>3} episodes {:>6} transitions  runaway {:>2}  return range [{:>8.1}, {:>7.1}]  -> {}",
            scenario.name(),
            ds.metadata.n_episodes,
            ds.metadata.n_transitions,
            ds.metadata.runaway_episodes.len(),
            lo,
            hi,
            path.display()
        );

        let back = load_dataset(&path, Some(&env))?;
        assert_eq!(back.transitions, ds.transitions);
    }
    Ok(())
}

//! Gradient and Newton correction, first on a known quadratic cost and then
//! on a PICNN trained on PI data, rolled out behind a BC policy.
//!
//! Usage: cargo run --release --example action_correction [-- <scenario> [cost epochs]]

use polycstr::correction::{correct_action, CorrectionConfig, CorrectionMode, QuadraticCost};
use polycstr::dataset::generate_dataset;
use polycstr::env::EnvConfig;
use polycstr::evaluation::{evaluate_agent, run_episode};
use polycstr::picnn::{train_cost_model, CostData, CostTrainConfig, CostVariant};
use polycstr::pi::PiSampling;
use polycstr::scenario::Scenario;
use polycstr::trainers::{train_bc, BcConfig};

fn main() -> polycstr::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let scenario: Scenario = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(Scenario::GradeUp);
    let cost_epochs = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(100);

    let quad = QuadraticCost { minimizer: vec![0.3, -0.4], weights: vec![2.0, 0.5] };
    let a0 = [-0.8, 0.6];
    for cfg in [CorrectionConfig::gradient(0.1), CorrectionConfig::newton(0.0)] {
        let c = correct_action(&quad, &[], &a0, &cfg)?;
        println!("quadratic, {:?}: {a0:?} -> [{:.4}, {:.4}], cost {:.4} -> {:.4}", cfg.mode, c.corrected[0], c.corrected[1], c.cost_before, c.cost_after);
    }

    let env = EnvConfig::default();
    let ds = generate_dataset(&env, &scenario.config(), &PiSampling::default(), 100, 1000)?;
    let data = ds.arrays();
    let bc = train_bc(&data, &BcConfig { epochs: 50, ..Default::default() })?;
    let model = train_cost_model(&CostData::from_transitions(&data), CostVariant::Picnn, &CostTrainConfig { epochs: cost_epochs, ..Default::default() })?.model;

    let ep = run_episode(&env, &scenario.config(), &bc, Some((&model, &CorrectionConfig::default())), 3)?;
    println!("\n{:>4} {:>7} {:>7} {:>16} {:>16} {:>16}", "step", "C_P", "T", "proposed", "corrected", "grad");
    for r in ep.steps.iter().step_by(20) {
        println!(
            "{:>4} {:>7.2} {:>7.2} [{:>6.3},{:>6.3}] [{:>6.3},{:>6.3}] [{:>6.2},{:>6.2}]",
            r.step, r.state.c_p, r.state.t, r.raw_action.d_f_i, r.raw_action.d_t_c, r.action.d_f_i, r.action.d_t_c, r.grad[0], r.grad[1]
        );
    }

    let anchors = ds.metadata.anchors()?;
    println!();
    for mode in [CorrectionMode::Off, CorrectionMode::Gradient, CorrectionMode::Newton] {
        let cfg = CorrectionConfig { mode, ..Default::default() };
        let (r, _) = evaluate_agent("BC", &env, &scenario.config(), &bc, Some((&model, &cfg)), 20, 7, anchors)?;
        println!("{mode:?}: mean score {:.1}, worst {:.1}, runaways {}", r.stats.mean, r.stats.min, r.runaways);
    }
    Ok(())
}

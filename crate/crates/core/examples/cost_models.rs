//! Fit the PICNN and the plain MLP cost model on the same data, compare the
//! held-out fit and probe the PICNN's convexity in the action.
//!
//! Usage: cargo run --release --example cost_models [-- <scenario> [epochs]]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use polycstr::dataset::generate_dataset;
use polycstr::env::EnvConfig;
use polycstr::picnn::{train_cost_model, CostData, CostTrainConfig, CostVariant};
use polycstr::pi::PiSampling;
use polycstr::scenario::Scenario;

fn main() -> polycstr::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let scenario: Scenario = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(Scenario::GradeUp);
    let epochs = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(100);
    let ds = generate_dataset(&EnvConfig::default(), &scenario.config(), &PiSampling::default(), 100, 1000)?;
    let data = CostData::from_transitions(&ds.arrays());
    let cfg = CostTrainConfig { epochs, ..Default::default() };

    let picnn = train_cost_model(&data, CostVariant::Picnn, &cfg)?;
    let plain = train_cost_model(&data, CostVariant::Plain, &cfg)?;
    println!("{:<6} {:>9} {:>9} {:>9}", "model", "test MSE", "MAE", "R2");
    for (name, fit) in [("PICNN", &picnn), ("plain", &plain)] {
        println!("{name:<6} {:>9.3} {:>9.3} {:>9.4}", fit.test.mse, fit.test.mae, fit.test.r2);
    }

    // midpoint convexity along random action chords at logged states
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut gap = [f64::INFINITY; 2];
    for _ in 0..1000 {
        let s = ds.transitions[rng.gen_range(0..ds.transitions.len())].obs;
        let a1 = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let a2 = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let mid = [(a1[0] + a2[0]) / 2.0, (a1[1] + a2[1]) / 2.0];
        for (k, m) in [&picnn.model, &plain.model].into_iter().enumerate() {
            let chord = (m.cost(&s, &a1)? + m.cost(&s, &a2)?) / 2.0 - m.cost(&s, &mid)?;
            gap[k] = gap[k].min(chord);
        }
    }
    println!("smallest chord-minus-midpoint over 1000 chords: PICNN {:.2e}, plain {:.2e}", gap[0], gap[1]);

    let s = ds.transitions[ds.transitions.len() / 2].obs;
    let (c, g, h) = picnn.model.value_grad_hessian(&s, &[0.0, 0.0])?;
    println!("PICNN at a mid-episode state, a = 0: cost {c:.3}, grad {g:.3?}, Hessian {:.3?}", h.as_slice().unwrap_or_default());
    Ok(())
}

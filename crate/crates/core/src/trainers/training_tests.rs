use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::TransitionArrays;
use crate::nn::{Activation, Mlp, MlpArch, Normalizer};
use crate::trainers::iql::Batch;
use crate::trainers::*;

const OBS: usize = 9;

fn synthetic(n: usize, seed: u64) -> TransitionArrays {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obs = Array2::from_shape_fn((n, OBS), |_| rng.gen_range(-1.0..1.0));
    let next_obs = Array2::from_shape_fn((n, OBS), |_| rng.gen_range(-1.0..1.0));
    let actions = Array2::from_shape_fn((n, 2), |(i, j)| (0.5 * obs[[i, j]] + 0.2 * rng.gen_range(-1.0..1.0f64)).tanh());
    let rewards = Array1::from_shape_fn(n, |i| -(actions[[i, 0]] - 0.3).powi(2) - (actions[[i, 1]] + 0.2).powi(2));
    let dones = Array1::from_shape_fn(n, |i| if i % 20 == 19 { 1.0 } else { 0.0 });
    TransitionArrays { costs: rewards.mapv(f64::abs), obs, actions, rewards, next_obs, dones }
}

fn small_iql(epochs: usize) -> IqlConfig {
    IqlConfig { hidden: vec![32, 32], batch_size: 64, epochs, lr: 1e-3, ..Default::default() }
}

fn constant_net(input: usize, value: f64) -> Mlp {
    let mut m = Mlp::zeros(MlpArch::new(input, &[4], 1, Activation::Relu)).unwrap();
    m.bias_mut(1)[0] = value;
    m
}

fn batch_of(data: &TransitionArrays, norm: &Normalizer) -> Batch {
    let idx: Vec<usize> = (0..data.len()).collect();
    Batch::from_rows(data, norm, &idx).unwrap()
}

#[test]
fn bc_imitates_a_constant_action() {
    let mut data = synthetic(256, 1);
    data.actions.column_mut(0).fill(0.3);
    data.actions.column_mut(1).fill(-0.2);
    let cfg = BcConfig { hidden: vec![32, 32], lr: 1e-3, epochs: 400, batch_size: 64, ..Default::default() };
    let bundle = train_bc(&data, &cfg).unwrap();
    for i in 0..20 {
        let a = bundle.act(data.obs.row(i).as_slice().unwrap()).unwrap();
        assert!((a[0] - 0.3).abs() < 0.02 && (a[1] + 0.2).abs() < 0.02, "{a:?}");
    }
}

#[test]
fn bc_loss_decreases_early() {
    let data = synthetic(512, 2);
    let cfg = BcConfig { hidden: vec![32, 32], lr: 1e-3, epochs: 10, batch_size: 64, ..Default::default() };
    let nll = train_bc(&data, &cfg).unwrap().history.column("nll").unwrap();
    assert!(nll[9] < nll[0], "{nll:?}");
}

/// Expectile of Bernoulli(p) under asymmetry tau.
fn bernoulli_expectile(p: f64, tau: f64) -> f64 {
    tau * p / (tau * p + (1.0 - tau) * (1.0 - p))
}

/// Fits V on identical states against target-Q values that are 1 on a
/// fraction `p` of rows and 0 elsewhere.
fn fitted_expectile(tau: f64, p: f64) -> f64 {
    let n = 200;
    let mut data = synthetic(n, 3);
    data.obs.fill(0.5);
    let ones = (p * n as f64).round() as usize;
    for i in 0..n {
        data.actions[[i, 0]] = if i < ones { 1.0 } else { 0.0 };
    }
    let norm = Normalizer::fit(data.obs.view()).unwrap();
    let cfg = IqlConfig { hidden: vec![8], tau, ..small_iql(1) };
    let mut t = IqlTrainer::new(OBS, 2, norm.clone(), cfg).unwrap();
    // target Q(s, a) = relu(a_0)
    let mut q = Mlp::zeros(MlpArch::new(OBS + 2, &[1], 1, Activation::Relu)).unwrap();
    q.weight_mut(0)[[OBS, 0]] = 1.0;
    q.weight_mut(1)[[0, 0]] = 1.0;
    t.target_q = q;
    let b = batch_of(&data, &norm);
    for _ in 0..3000 {
        t.value_update(&b, 1e-2).unwrap();
    }
    t.v.forward_one(b.s.row(0).as_slice().unwrap()).unwrap()[0]
}

#[test]
fn value_is_mean_at_half_tau() {
    let v = fitted_expectile(0.5, 0.3);
    assert!((v - 0.3).abs() < 5e-3, "{v}");
}

#[test]
fn value_approaches_max_at_high_tau() {
    let v = fitted_expectile(0.99, 0.3);
    assert!((v - bernoulli_expectile(0.3, 0.99)).abs() < 1e-2 && v > 0.95, "{v}");
}

#[test]
fn value_increases_with_tau() {
    let vs: Vec<f64> = [0.5, 0.7, 0.9].iter().map(|&tau| fitted_expectile(tau, 0.3)).collect();
    for (v, tau) in vs.iter().zip([0.5, 0.7, 0.9]) {
        assert!((v - bernoulli_expectile(0.3, tau)).abs() < 1e-2, "{vs:?}");
    }
    assert!(vs[0] < vs[1] && vs[1] < vs[2], "{vs:?}");
}

fn trainer_on(data: &TransitionArrays, cfg: IqlConfig) -> (IqlTrainer, Batch) {
    let norm = Normalizer::fit(data.obs.view()).unwrap();
    let b = batch_of(data, &norm);
    (IqlTrainer::new(OBS, 2, norm, cfg).unwrap(), b)
}

#[test]
fn zero_discount_targets_are_rewards() {
    let data = synthetic(100, 4);
    let (mut t, b) = trainer_on(&data, IqlConfig { gamma: 0.0, ..small_iql(1) });
    t.v = constant_net(OBS, 7.0);
    assert_eq!(t.q_targets(&b).unwrap(), b.rewards);
}

#[test]
fn bootstrap_through_fixed_value() {
    let mut data = synthetic(100, 5);
    data.rewards.fill(1.0);
    let (mut t, b) = trainer_on(&data, small_iql(1));
    t.v = constant_net(OBS, 10.0);
    let y = t.q_targets(&b).unwrap();
    for i in 0..b.len() {
        if b.dones[i] == 1.0 {
            assert_eq!(y[i], 1.0);
        } else {
            assert!((y[i] - 10.0).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_temperature_policy_step_is_bc_step() {
    let data = synthetic(128, 6);
    let (t, b) = trainer_on(&data, IqlConfig { beta: 0.0, ..small_iql(1) });
    let (g, mean_w) = t.policy_loss_grads(&b).unwrap();
    let bc = t.policy.weighted_nll(b.obs.view(), b.u.view(), None).unwrap();
    assert_eq!(mean_w, 1.0);
    assert!((g.loss - bc.loss).abs() < 1e-10);
    for (x, y) in g.net.iter().chain(&g.log_std).zip(bc.net.iter().chain(&bc.log_std)) {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn advantage_weights_are_clipped() {
    let data = synthetic(128, 7);
    let (mut t, b) = trainer_on(&data, small_iql(1));
    t.v = constant_net(OBS, -100.0);
    let (_, w) = t.advantage_weights(&b).unwrap();
    assert!(w.iter().all(|&x| x == 100.0));
    t.v = constant_net(OBS, 100.0);
    let (_, w) = t.advantage_weights(&b).unwrap();
    assert!(w.iter().all(|&x| x > 0.0 && x <= 100.0));
}

#[test]
fn target_tracks_online_q_by_polyak_average() {
    let data = synthetic(128, 8);
    let (mut t, b) = trainer_on(&data, small_iql(1));
    let before = t.target_q.params().to_vec();
    t.step(&b, 1e-3).unwrap();
    for ((tq, old), q) in t.target_q.params().iter().zip(&before).zip(t.q.params()) {
        assert!((tq - (0.95 * old + 0.05 * q)).abs() < 1e-15);
    }
}

#[test]
fn training_uses_dataset_actions_only() {
    let bundle = train_iql(&synthetic(256, 9), &small_iql(3)).unwrap();
    let audit = bundle.audit.unwrap();
    assert!(audit.q_evaluations > 0 && audit.policy_evaluations > 0);
    assert_eq!(audit.foreign_action_evaluations, 0);
}

#[test]
fn training_is_deterministic() {
    let data = synthetic(256, 10);
    assert_eq!(train_iql(&data, &small_iql(2)).unwrap(), train_iql(&data, &small_iql(2)).unwrap());
    let cfg = BcConfig { hidden: vec![16], epochs: 2, batch_size: 64, ..Default::default() };
    assert_eq!(train_bc(&data, &cfg).unwrap(), train_bc(&data, &cfg).unwrap());
}

#[test]
fn iql_losses_finite_and_falling() {
    let data = synthetic(512, 11);
    let bootstrapped = train_iql(&data, &small_iql(50)).unwrap();
    assert!(bootstrapped.history.rows.iter().flatten().all(|v| v.is_finite()));
    let myopic = train_iql(&data, &IqlConfig { gamma: 0.0, ..small_iql(50) }).unwrap();
    let q = myopic.history.column("q_loss").unwrap();
    assert!(q[49] < q[0], "{q:?}");
}

#[test]
fn bundles_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic(128, 12);
    for bundle in [
        train_iql(&data, &small_iql(1)).unwrap(),
        train_bc(&data, &BcConfig { hidden: vec![16], epochs: 1, ..Default::default() }).unwrap(),
    ] {
        let p = dir.path().join(format!("{}.json", bundle.kind));
        bundle.save(&p).unwrap();
        let back = AgentBundle::load(&p).unwrap();
        assert_eq!(back.kind, bundle.kind);
        assert_eq!(back.policy, bundle.policy);
        assert_eq!((&back.q, &back.target_q, &back.v), (&bundle.q, &bundle.target_q, &bundle.v));
        assert_eq!(back.audit, bundle.audit);
    }
}

#[test]
fn iql_bundle_without_critics_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut bundle = train_iql(&synthetic(64, 13), &small_iql(1)).unwrap();
    bundle.v = None;
    let p = dir.path().join("broken.json");
    bundle.save(&p).unwrap();
    assert!(AgentBundle::load(&p).is_err());
}

//! Policy rollouts, min-max normalized scoring against a PI dataset and
//! box-plot summary statistics.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetMetadata;
use crate::correction::{correct_action, ActionCost, CorrectionConfig, CorrectionMode};
use crate::env::{Action, EnvConfig, Observation, PolyCstrEnv};
use crate::error::{Error, Result};
use crate::nn::GaussianPolicy;
use crate::parallel::map_ordered;
use crate::reactor::{ControlInputs, ReactorState};
use crate::scenario::ScenarioConfig;
use crate::trainers::AgentBundle;

/// Something that maps an observation to a normalized action.
pub trait Policy: Sync {
    fn act(&self, obs: &Observation) -> Result<Action>;
}

impl Policy for GaussianPolicy {
    fn act(&self, obs: &Observation) -> Result<Action> {
        let a = GaussianPolicy::act(self, &obs.to_array())?;
        Ok(Action::new(a[0], a[1]))
    }
}

impl Policy for AgentBundle {
    fn act(&self, obs: &Observation) -> Result<Action> {
        Policy::act(&self.policy, obs)
    }
}

/// One environment step of an evaluated episode.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub obs: Observation,
    pub raw_action: Action,
    pub action: Action,
    pub grad: [f64; 2],
    pub model_cost_before: Option<f64>,
    pub model_cost_after: Option<f64>,
    pub reward: f64,
    pub cost: f64,
    pub state: ReactorState,
    pub controls: ControlInputs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub total_reward: f64,
    pub total_cost: f64,
    pub runaway: bool,
}

/// Roll one episode with the deterministic policy, optionally correcting
/// each proposed action on a cost model.
pub fn run_episode<P: Policy + ?Sized, C: ActionCost + Sync + ?Sized>(
    env_cfg: &EnvConfig,
    scenario: &ScenarioConfig,
    policy: &P,
    correction: Option<(&C, &CorrectionConfig)>,
    seed: u64,
) -> Result<EpisodeResult> {
    let mut env = PolyCstrEnv::new(env_cfg.clone(), scenario.clone())?;
    let mut obs = env.reset(seed)?;
    let mut steps = Vec::with_capacity(env_cfg.horizon);
    let (mut total_reward, mut total_cost) = (0.0, 0.0);
    let mut runaway = false;
    while !env.is_done() {
        let raw = policy.act(&obs)?;
        let (action, grad, before, after) = match correction {
            Some((model, cfg)) if cfg.mode != CorrectionMode::Off => {
                let c = correct_action(model, &obs.to_array(), &raw.to_array(), cfg)?;
                (Action::new(c.corrected[0], c.corrected[1]), [c.grad[0], c.grad[1]], Some(c.cost_before), Some(c.cost_after))
            }
            _ => (raw, [0.0; 2], None, None),
        };
        let out = env.step(action)?;
        total_reward += out.reward;
        total_cost += out.cost;
        runaway |= out.info.runaway;
        steps.push(StepRecord {
            step: env.step_index() - 1,
            obs,
            raw_action: raw,
            action,
            grad,
            model_cost_before: before,
            model_cost_after: after,
            reward: out.reward,
            cost: out.cost,
            state: out.info.state,
            controls: out.info.controls,
        });
        obs = out.observation;
    }
    Ok(EpisodeResult { seed, steps, total_reward, total_cost, runaway })
}

/// Noise seeds for `n` evaluation episodes, derived from one base seed.
pub fn evaluation_seeds(base: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(7);
    (0..n).map(|_| rng.next_u64()).collect()
}

/// `100 (R - R_min) / (R_max - R_min)`, unclipped.
pub fn normalize_scores(returns: &[f64], r_min: f64, r_max: f64) -> Result<Vec<f64>> {
    if !(r_max > r_min) || !r_min.is_finite() || !r_max.is_finite() {
        return Err(Error::DegenerateAnchors(r_max - r_min));
    }
    Ok(returns.iter().map(|r| 100.0 * (r - r_min) / (r_max - r_min)).collect())
}

/// Linear-interpolation quantile of sorted data (`h = (n - 1) p`).
fn quantile_sorted(x: &[f64], p: f64) -> f64 {
    let h = (x.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(x.len() - 1);
    x[lo] + (h - lo as f64) * (x[hi] - x[lo])
}

/// Box-plot statistics with 1.5 IQR whiskers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub min: f64,
    pub max: f64,
    pub outliers: Vec<f64>,
}

impl SummaryStats {
    pub fn compute(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("score vector"));
        }
        let mut x = values.to_vec();
        x.sort_by(f64::total_cmp);
        let (q1, median, q3) = (quantile_sorted(&x, 0.25), quantile_sorted(&x, 0.5), quantile_sorted(&x, 0.75));
        let iqr = q3 - q1;
        let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside: Vec<f64> = x.iter().copied().filter(|v| *v >= lo_fence && *v <= hi_fence).collect();
        let outliers = x.iter().copied().filter(|v| *v < lo_fence || *v > hi_fence).collect();
        Ok(Self {
            n: x.len(),
            mean: x.iter().sum::<f64>() / x.len() as f64,
            median,
            q1,
            q3,
            iqr,
            whisker_low: inside.first().copied().unwrap_or(median),
            whisker_high: inside.last().copied().unwrap_or(median),
            min: x[0],
            max: x[x.len() - 1],
            outliers,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub agent: String,
    pub scenario: String,
    pub r_min: f64,
    pub r_max: f64,
    pub seeds: Vec<u64>,
    pub returns: Vec<f64>,
    pub scores: Vec<f64>,
    pub runaways: usize,
    pub stats: SummaryStats,
}

impl ScoreReport {
    pub fn from_returns(agent: &str, scenario: &str, returns: Vec<f64>, seeds: Vec<u64>, runaways: usize, anchors: (f64, f64)) -> Result<Self> {
        let scores = normalize_scores(&returns, anchors.0, anchors.1)?;
        let stats = SummaryStats::compute(&scores)?;
        Ok(Self {
            agent: agent.into(),
            scenario: scenario.into(),
            r_min: anchors.0,
            r_max: anchors.1,
            seeds,
            returns,
            scores,
            runaways,
            stats,
        })
    }

    pub fn write_episodes_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["agent", "scenario", "episode", "seed", "return", "score"])?;
        for (k, ((r, s), seed)) in self.returns.iter().zip(&self.scores).zip(&self.seeds).enumerate() {
            w.write_record([self.agent.clone(), self.scenario.clone(), k.to_string(), seed.to_string(), r.to_string(), s.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(Path::new("<episodes>"), e))
    }
}

impl ScoreReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::nn::checkpoint::save_json(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::nn::checkpoint::load_json(path)
    }
}

/// The behaviour data scored against its own anchors ("Data" row).
pub fn dataset_report(meta: &DatasetMetadata) -> Result<ScoreReport> {
    ScoreReport::from_returns(
        "Data",
        &meta.scenario.name,
        meta.episode_returns.clone(),
        meta.env_seeds.clone(),
        meta.runaway_episodes.len(),
        meta.anchors()?,
    )
}

/// Evaluate a policy over `n_episodes` fresh-noise episodes and score the
/// returns with the dataset's anchors.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_agent<P: Policy + ?Sized, C: ActionCost + Sync + ?Sized>(
    name: &str,
    env_cfg: &EnvConfig,
    scenario: &ScenarioConfig,
    policy: &P,
    correction: Option<(&C, &CorrectionConfig)>,
    n_episodes: usize,
    seed: u64,
    anchors: (f64, f64),
) -> Result<(ScoreReport, Vec<EpisodeResult>)> {
    let seeds = evaluation_seeds(seed, n_episodes);
    let episodes: Vec<EpisodeResult> = map_ordered(&seeds, |_, s| run_episode(env_cfg, scenario, policy, correction, *s))
        .into_iter()
        .collect::<Result<_>>()?;
    let returns = episodes.iter().map(|e| e.total_reward).collect();
    let runaways = episodes.iter().filter(|e| e.runaway).count();
    let report = ScoreReport::from_returns(name, &scenario.name, returns, seeds, runaways, anchors)?;
    Ok((report, episodes))
}

/// Markdown table with one row per report.
pub fn summary_markdown(reports: &[ScoreReport]) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::Empty("report list"));
    }
    let mut s = String::from("| agent | scenario | n | mean | median | Q1 | Q3 | IQR | whisker low | whisker high | outliers | runaways |\n");
    s.push_str("|---|---|---|---|---|---|---|---|---|---|---|---|\n");
    for r in reports {
        let t = &r.stats;
        writeln!(
            s,
            "| {} | {} | {} | {:.1} | {:.1} | {:.1} | {:.1} | {:.1} | {:.1} | {:.1} | {} | {} |",
            r.agent, r.scenario, t.n, t.mean, t.median, t.q1, t.q3, t.iqr, t.whisker_low, t.whisker_high, t.outliers.len(), r.runaways
        )
        .expect("string write");
    }
    Ok(s)
}

/// Mean scores laid out agents x scenarios with an overall mean column.
pub fn mean_score_table(reports: &[ScoreReport]) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::Empty("report list"));
    }
    let mut agents: Vec<&str> = Vec::new();
    let mut scenarios: Vec<&str> = Vec::new();
    for r in reports {
        if !agents.contains(&r.agent.as_str()) {
            agents.push(&r.agent);
        }
        if !scenarios.contains(&r.scenario.as_str()) {
            scenarios.push(&r.scenario);
        }
    }
    let mut s = format!("| agent | {} | mean |\n|---|{}---|\n", scenarios.join(" | "), "---|".repeat(scenarios.len()));
    for a in agents {
        let cells: Vec<Option<f64>> = scenarios
            .iter()
            .map(|sc| reports.iter().find(|r| r.agent == a && r.scenario == *sc).map(|r| r.stats.mean))
            .collect();
        let present: Vec<f64> = cells.iter().flatten().copied().collect();
        let mean = present.iter().sum::<f64>() / present.len() as f64;
        let body: Vec<String> = cells.iter().map(|c| c.map_or("-".into(), |v| format!("{v:.1}"))).collect();
        writeln!(s, "| {a} | {} | {mean:.1} |", body.join(" | ")).expect("string write");
    }
    Ok(s)
}

pub fn write_summary_csv<W: Write>(reports: &[ScoreReport], out: W) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::Empty("report list"));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "agent", "scenario", "n", "mean", "median", "q1", "q3", "iqr", "whisker_low", "whisker_high", "min", "max", "n_outliers", "runaways", "r_min", "r_max",
    ])?;
    for r in reports {
        let t = &r.stats;
        w.write_record([
            r.agent.clone(),
            r.scenario.clone(),
            t.n.to_string(),
            t.mean.to_string(),
            t.median.to_string(),
            t.q1.to_string(),
            t.q3.to_string(),
            t.iqr.to_string(),
            t.whisker_low.to_string(),
            t.whisker_high.to_string(),
            t.min.to_string(),
            t.max.to_string(),
            t.outliers.len().to_string(),
            r.runaways.to_string(),
            r.r_min.to_string(),
            r.r_max.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(Path::new("<summary>"), e))
}

/// Per-step trace of one evaluated episode, including correction gradients.
pub fn write_episode_trace_csv<W: Write>(ep: &EpisodeResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "step", "C_P", "T", "e_CP", "e_T", "F_I", "T_c", "raw_dF_I", "raw_dT_c", "dF_I", "dT_c", "grad_dF_I", "grad_dT_c", "model_cost_before",
        "model_cost_after", "reward", "cost",
    ])?;
    for r in &ep.steps {
        let vals = [
            r.state.c_p,
            r.state.t,
            r.obs.e_cp,
            r.obs.e_t,
            r.controls.f_i,
            r.controls.t_c,
            r.raw_action.d_f_i,
            r.raw_action.d_t_c,
            r.action.d_f_i,
            r.action.d_t_c,
            r.grad[0],
            r.grad[1],
        ];
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        let mut rec = vec![r.step.to_string()];
        rec.extend(vals.iter().map(|v| v.to_string()));
        rec.extend([opt(r.model_cost_before), opt(r.model_cost_after), r.reward.to_string(), r.cost.to_string()]);
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(Path::new("<trace>"), e))
}

//! The agent x scenario score matrix: BC, BC+, IQL and IQL+ trained on one
//! PI dataset per scenario and scored against that dataset's anchors.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::correction::{CorrectionConfig, CorrectionMode};
use crate::dataset::{generate_dataset, OfflineDataset};
use crate::evaluation::{evaluate_agent, ScoreReport};
use crate::picnn::{train_cost_model, CostData, CostModel, CostVariant, FitMetrics};
use crate::scenario::Scenario;
use crate::trainers::{train_bc, train_iql};
use crate::Result;

pub const AGENTS: [&str; 4] = ["BC", "BC+", "IQL", "IQL+"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub pipeline: PipelineConfig,
    pub dataset_seed: u64,
    pub eval_seed: u64,
}

impl BenchmarkConfig {
    pub fn new(pipeline: PipelineConfig) -> Self {
        Self { pipeline, dataset_seed: 1000, eval_seed: 77 }
    }

    /// Correction settings used for the "+" rows; `Off` in the pipeline
    /// config falls back to gradient mode.
    pub fn plus_correction(&self) -> CorrectionConfig {
        let mut c = self.pipeline.correction;
        if c.mode == CorrectionMode::Off {
            c.mode = CorrectionMode::Gradient;
        }
        c
    }

    pub fn dataset(&self, scenario: Scenario) -> Result<OfflineDataset> {
        let p = &self.pipeline;
        generate_dataset(&p.env, &scenario.config(), &p.dataset.pi, p.dataset.episodes, self.dataset_seed + scenario as u64)
    }
}

/// Scores of the four agents for one scenario and one training seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixRun {
    pub scenario: String,
    pub training_seed: u64,
    pub cost_fit: FitMetrics,
    pub reports: Vec<ScoreReport>,
}

impl MatrixRun {
    pub fn report(&self, agent: &str) -> Option<&ScoreReport> {
        self.reports.iter().find(|r| r.agent == agent)
    }
}

/// Train BC, IQL and a PICNN cost model with `training_seed` and evaluate
/// all four agents on the dataset's scenario.
pub fn run_matrix(cfg: &BenchmarkConfig, ds: &OfflineDataset, training_seed: u64) -> Result<MatrixRun> {
    let p = &cfg.pipeline;
    let data = ds.arrays();
    let scenario = &ds.metadata.scenario;
    let anchors = ds.metadata.anchors()?;

    let t = Instant::now();
    let bc = train_bc(&data, &crate::trainers::BcConfig { seed: training_seed, ..p.bc.clone() })?;
    log::info!("{} seed {training_seed}: BC trained in {:.0?}", scenario.name, t.elapsed());
    let t = Instant::now();
    let iql = train_iql(&data, &crate::trainers::IqlConfig { seed: training_seed, ..p.iql.clone() })?;
    log::info!("{} seed {training_seed}: IQL trained in {:.0?}", scenario.name, t.elapsed());
    let t = Instant::now();
    let fit = train_cost_model(&CostData::from_transitions(&data), CostVariant::Picnn, &crate::picnn::CostTrainConfig { seed: training_seed, ..p.cost })?;
    log::info!("{} seed {training_seed}: PICNN trained in {:.0?}, test r2 {:.3}", scenario.name, t.elapsed(), fit.test.r2);

    let corr = cfg.plus_correction();
    let none: Option<(&CostModel, &CorrectionConfig)> = None;
    let plus = Some((&fit.model, &corr));
    let n = p.evaluation.episodes;
    let seed = cfg.eval_seed;
    let mut reports = Vec::with_capacity(4);
    for (name, agent, correction) in [("BC", &bc, none), ("BC+", &bc, plus), ("IQL", &iql, none), ("IQL+", &iql, plus)] {
        let (r, _) = evaluate_agent(name, &p.env, scenario, agent, correction, n, seed, anchors)?;
        log::info!("{} seed {training_seed}: {name} mean {:.1} min {:.1}", scenario.name, r.stats.mean, r.stats.min);
        reports.push(r);
    }
    Ok(MatrixRun { scenario: scenario.name.clone(), training_seed, cost_fit: fit.test, reports })
}

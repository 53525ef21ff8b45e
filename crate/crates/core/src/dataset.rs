//! Offline datasets rolled out by randomized PI controllers.
//!
//! On disk a dataset is a CSV of transitions plus a JSON sidecar with the
//! generation metadata (same path, `.json` extension).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, PolyCstrEnv, ACT_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::pi::{PiController, PiGains, PiSampling};
use crate::scenario::ScenarioConfig;

pub const SCHEMA_VERSION: u32 = 1;
const N_COLUMNS: usize = 2 + OBS_DIM + ACT_DIM + 2 + OBS_DIM + 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub episode: usize,
    pub step: usize,
    pub obs: [f64; OBS_DIM],
    pub action: [f64; ACT_DIM],
    pub reward: f64,
    pub cost: f64,
    pub next_obs: [f64; OBS_DIM],
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub schema_version: u32,
    pub scenario: ScenarioConfig,
    pub seed: u64,
    pub n_episodes: usize,
    pub n_transitions: usize,
    /// Gains used for each episode, in episode order.
    pub gains: Vec<PiGains>,
    pub pi_sampling: PiSampling,
    /// Per-episode environment seeds.
    pub env_seeds: Vec<u64>,
    /// Per-episode total rewards; the min and max anchor score normalization.
    pub episode_returns: Vec<f64>,
    pub runaway_episodes: Vec<usize>,
    pub env_config: EnvConfig,
    pub env_config_hash: String,
    pub generator: String,
    /// Provenance warnings raised while loading (never written).
    #[serde(skip)]
    pub warnings: Vec<String>,
}

impl DatasetMetadata {
    /// Worst and best PI episode returns.
    pub fn anchors(&self) -> Result<(f64, f64)> {
        if self.episode_returns.is_empty() {
            return Err(Error::Empty("episode returns"));
        }
        let min = self.episode_returns.iter().copied().fold(f64::INFINITY, f64::min);
        let max = self.episode_returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok((min, max))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub transitions: Vec<Transition>,
    pub metadata: DatasetMetadata,
}

/// One rolled-out PI episode.
#[derive(Debug, Clone)]
pub struct PiEpisode {
    pub gains: PiGains,
    pub env_seed: u64,
    pub transitions: Vec<Transition>,
    pub total_reward: f64,
    pub runaway: bool,
}

/// Roll one PI episode and record it as transitions.
pub fn rollout_pi_episode(
    env_config: &EnvConfig,
    scenario: &ScenarioConfig,
    gains: PiGains,
    env_seed: u64,
    episode: usize,
) -> Result<PiEpisode> {
    let mut env = PolyCstrEnv::new(env_config.clone(), scenario.clone())?;
    let mut obs = env.reset(env_seed)?;
    let mut pi = PiController::new(gains, env_config);
    pi.reset(&obs);
    let mut transitions = Vec::with_capacity(env_config.horizon);
    let mut total = 0.0;
    let runaway;
    loop {
        let action = pi.act(&obs, env_config);
        let out = env.step(action)?;
        transitions.push(Transition {
            episode,
            step: env.step_index() - 1,
            obs: obs.to_array(),
            action: action.to_array(),
            reward: out.reward,
            cost: out.cost,
            next_obs: out.observation.to_array(),
            done: out.done,
        });
        total += out.reward;
        obs = out.observation;
        if out.done {
            runaway = out.info.runaway;
            break;
        }
    }
    Ok(PiEpisode {
        gains,
        env_seed,
        transitions,
        total_reward: total,
        runaway,
    })
}

/// Per-episode gains and env seeds drawn from one seeded stream.
pub fn episode_plan(sampling: &PiSampling, n_episodes: usize, seed: u64) -> Vec<(PiGains, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_episodes)
        .map(|_| {
            let gains = PiGains::sample(&sampling.nominal, sampling.spread, &mut rng);
            let env_seed: u64 = rng.gen();
            (gains, env_seed)
        })
        .collect()
}

/// Roll `n_episodes` PI episodes with freshly sampled gains.
pub fn generate_dataset(
    env_config: &EnvConfig,
    scenario: &ScenarioConfig,
    sampling: &PiSampling,
    n_episodes: usize,
    seed: u64,
) -> Result<OfflineDataset> {
    env_config.validate()?;
    scenario.validate()?;
    if n_episodes == 0 {
        return Err(Error::Precondition("n_episodes must be >= 1".into()));
    }
    let plan = episode_plan(sampling, n_episodes, seed);
    let episodes = crate::parallel::map_ordered(&plan, |k, &(gains, env_seed)| {
        rollout_pi_episode(env_config, scenario, gains, env_seed, k)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut transitions = Vec::with_capacity(n_episodes * env_config.horizon);
    let mut metadata = DatasetMetadata {
        schema_version: SCHEMA_VERSION,
        scenario: scenario.clone(),
        seed,
        n_episodes,
        n_transitions: 0,
        gains: Vec::with_capacity(n_episodes),
        pi_sampling: *sampling,
        env_seeds: Vec::with_capacity(n_episodes),
        episode_returns: Vec::with_capacity(n_episodes),
        runaway_episodes: Vec::new(),
        env_config: env_config.clone(),
        env_config_hash: env_config.hash(),
        generator: concat!("polycstr ", env!("CARGO_PKG_VERSION")).to_string(),
        warnings: Vec::new(),
    };
    for (k, ep) in episodes.into_iter().enumerate() {
        metadata.gains.push(ep.gains);
        metadata.env_seeds.push(ep.env_seed);
        metadata.episode_returns.push(ep.total_reward);
        if ep.runaway {
            metadata.runaway_episodes.push(k);
        }
        transitions.extend(ep.transitions);
    }
    metadata.n_transitions = transitions.len();
    Ok(OfflineDataset { transitions, metadata })
}

pub const CSV_HEADER: [&str; N_COLUMNS] = [
    "episode",
    "step",
    "obs_0",
    "obs_1",
    "obs_2",
    "obs_3",
    "obs_4",
    "obs_5",
    "obs_6",
    "obs_7",
    "obs_8",
    "act_0",
    "act_1",
    "reward",
    "cost",
    "next_obs_0",
    "next_obs_1",
    "next_obs_2",
    "next_obs_3",
    "next_obs_4",
    "next_obs_5",
    "next_obs_6",
    "next_obs_7",
    "next_obs_8",
    "done",
];

/// Path of the JSON sidecar for a dataset CSV.
pub fn metadata_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Column-stacked view of a dataset for minibatch training.
#[derive(Debug, Clone)]
pub struct TransitionArrays {
    pub obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub costs: Array1<f64>,
    pub next_obs: Array2<f64>,
    pub dones: Array1<f64>,
}

impl TransitionArrays {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

impl OfflineDataset {
    pub fn arrays(&self) -> TransitionArrays {
        let n = self.transitions.len();
        let t = &self.transitions;
        TransitionArrays {
            obs: Array2::from_shape_fn((n, OBS_DIM), |(i, k)| t[i].obs[k]),
            actions: Array2::from_shape_fn((n, ACT_DIM), |(i, k)| t[i].action[k]),
            rewards: t.iter().map(|x| x.reward).collect(),
            costs: t.iter().map(|x| x.cost).collect(),
            next_obs: Array2::from_shape_fn((n, OBS_DIM), |(i, k)| t[i].next_obs[k]),
            dones: t.iter().map(|x| if x.done { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Transitions grouped by episode, in file order.
    pub fn episodes(&self) -> Vec<&[Transition]> {
        let mut out = Vec::new();
        let mut start = 0;
        for k in 1..=self.transitions.len() {
            if k == self.transitions.len() || self.transitions[k].episode != self.transitions[start].episode {
                out.push(&self.transitions[start..k]);
                start = k;
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        let mut rec: Vec<String> = Vec::with_capacity(N_COLUMNS);
        for t in &self.transitions {
            rec.clear();
            rec.push(t.episode.to_string());
            rec.push(t.step.to_string());
            rec.extend(t.obs.iter().map(|v| v.to_string()));
            rec.extend(t.action.iter().map(|v| v.to_string()));
            rec.push(t.reward.to_string());
            rec.push(t.cost.to_string());
            rec.extend(t.next_obs.iter().map(|v| v.to_string()));
            rec.push(u8::from(t.done).to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<dataset>", e))?;
        Ok(())
    }

    /// Write the CSV at `path` and the metadata sidecar next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(BufWriter::new(f))?;
        let meta = metadata_path(path);
        let json = serde_json::to_string_pretty(&self.metadata)?;
        fs::write(&meta, json + "\n").map_err(|e| Error::io(&meta, e))?;
        Ok(())
    }
}

fn parse_transitions(csv_text: &str) -> Result<Vec<Transition>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(csv_text.as_bytes());
    let header = rdr.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Schema(format!("unexpected CSV header: {header:?}")));
    }
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let row = row + 1;
        let rec = rec.map_err(|e| Error::CorruptRow { row, reason: e.to_string() })?;
        if rec.len() != N_COLUMNS {
            return Err(Error::CorruptRow {
                row,
                reason: format!("expected {N_COLUMNS} fields, found {}", rec.len()),
            });
        }
        let num = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|e| Error::CorruptRow {
                row,
                reason: format!("column {}: {e}", CSV_HEADER[i]),
            })
        };
        let int = |i: usize| -> Result<usize> {
            rec[i].parse::<usize>().map_err(|e| Error::CorruptRow {
                row,
                reason: format!("column {}: {e}", CSV_HEADER[i]),
            })
        };
        let mut obs = [0.0; OBS_DIM];
        let mut next_obs = [0.0; OBS_DIM];
        for k in 0..OBS_DIM {
            obs[k] = num(2 + k)?;
            next_obs[k] = num(15 + k)?;
        }
        let done = match &rec[24] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::CorruptRow {
                    row,
                    reason: format!("done must be 0 or 1, got `{other}`"),
                })
            }
        };
        out.push(Transition {
            episode: int(0)?,
            step: int(1)?,
            obs,
            action: [num(11)?, num(12)?],
            reward: num(13)?,
            cost: num(14)?,
            next_obs,
            done,
        });
    }
    Ok(out)
}

/// Load a dataset written by [`OfflineDataset::save`]. If `expected_env` is
/// given and its hash differs from the recorded one, a warning is attached
/// to the returned metadata.
pub fn load_dataset(path: &Path, expected_env: Option<&EnvConfig>) -> Result<OfflineDataset> {
    let meta_path = metadata_path(path);
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let raw: serde_json::Value = serde_json::from_str(&meta_text)?;
    let version = raw.get("schema_version").and_then(|v| v.as_u64());
    if version != Some(u64::from(SCHEMA_VERSION)) {
        return Err(Error::Schema(format!(
            "dataset schema_version {version:?}, this build reads {SCHEMA_VERSION}"
        )));
    }
    let mut metadata: DatasetMetadata = serde_json::from_value(raw)?;
    let csv_text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if !csv_text.is_empty() && !csv_text.ends_with('\n') {
        let rows = csv_text.lines().count().saturating_sub(1);
        return Err(Error::CorruptRow {
            row: rows,
            reason: "file truncated mid-row".into(),
        });
    }
    let transitions = parse_transitions(&csv_text)?;
    if transitions.len() != metadata.n_transitions {
        return Err(Error::CorruptRow {
            row: transitions.len(),
            reason: format!("metadata records {} transitions, file has {}", metadata.n_transitions, transitions.len()),
        });
    }
    if metadata.env_config.hash() != metadata.env_config_hash {
        metadata.warnings.push("recorded env config does not match its recorded hash".into());
    }
    if let Some(env) = expected_env {
        if env.hash() != metadata.env_config_hash {
            metadata
                .warnings
                .push(format!("env config hash mismatch: dataset {}, current {}", metadata.env_config_hash, env.hash()));
        }
    }
    for w in &metadata.warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(OfflineDataset { transitions, metadata })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Scenario;

    fn small() -> OfflineDataset {
        let cfg = EnvConfig { horizon: 12, ..EnvConfig::default() };
        generate_dataset(&cfg, &Scenario::GradeUp.config(), &PiSampling::default(), 3, 9).unwrap()
    }

    #[test]
    fn counts_and_chaining() {
        let ds = small();
        assert_eq!(ds.len(), 36);
        assert_eq!(ds.metadata.gains.len(), 3);
        assert_eq!(ds.episodes().len(), 3);
        for ep in ds.episodes() {
            for w in ep.windows(2) {
                assert_eq!(w[0].next_obs, w[1].obs);
                assert_eq!(w[0].step + 1, w[1].step);
            }
            assert!(ep.last().unwrap().done);
            assert!(ep.iter().all(|t| t.cost >= 0.0));
        }
        let total: f64 = ds.episodes()[0].iter().map(|t| t.reward).sum();
        assert_eq!(total, ds.metadata.episode_returns[0]);
    }

    #[test]
    fn save_load_round_trip() {
        let ds = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grade_up.csv");
        ds.save(&path).unwrap();
        let back = load_dataset(&path, Some(&ds.metadata.env_config)).unwrap();
        assert_eq!(back, ds);
        assert!(back.metadata.warnings.is_empty());
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let ds = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        ds.save(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, &text[..text.len() - 40]).unwrap();
        assert!(matches!(load_dataset(&path, None), Err(Error::CorruptRow { .. })));
    }

    #[test]
    fn env_hash_mismatch_is_a_warning() {
        let ds = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        ds.save(&path).unwrap();
        let other = EnvConfig { tau_t: 1.5, ..EnvConfig::default() };
        let back = load_dataset(&path, Some(&other)).unwrap();
        assert_eq!(back.metadata.warnings.len(), 1);
        assert_eq!(back.transitions, ds.transitions);
    }

    #[test]
    fn schema_version_checked() {
        let ds = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        ds.save(&path).unwrap();
        let meta = metadata_path(&path);
        let text = fs::read_to_string(&meta).unwrap().replace("\"schema_version\": 1", "\"schema_version\": 7");
        fs::write(&meta, text).unwrap();
        assert!(matches!(load_dataset(&path, None), Err(Error::Schema(_))));
    }

    #[test]
    fn stored_actions_reproduce_actuator_moves() {
        let ds = small();
        let cfg = &ds.metadata.env_config;
        for t in &ds.transitions {
            let cur = crate::reactor::ControlInputs::new(t.obs[7], t.obs[8]);
            let next = cfg.apply_action(cur, crate::env::Action::from_array(t.action));
            assert!((next.f_i - t.next_obs[7]).abs() < 1e-12);
            assert!((next.t_c - t.next_obs[8]).abs() < 1e-12);
        }
    }
}

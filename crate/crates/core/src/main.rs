use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use polycstr::config::PipelineConfig;
use polycstr::correction::CorrectionMode;
use polycstr::dataset::{generate_dataset, load_dataset, OfflineDataset};
use polycstr::env::OBS_DIM;
use polycstr::evaluation::{dataset_report, evaluate_agent, mean_score_table, summary_markdown, write_episode_trace_csv, write_summary_csv, ScoreReport};
use polycstr::parallel::set_jobs;
use polycstr::picnn::{train_cost_model, CostData, CostModel, CostVariant};
use polycstr::scenario::Scenario;
use polycstr::trainers::{train_bc, train_iql, AgentBundle, AgentKind, TrainHistory};
use polycstr::Error;

#[derive(Parser)]
#[command(name = "polycstr", version, about = "Polymerisation CSTR offline RL pipeline")]
struct Cli {
    /// Worker threads for rollouts (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// TOML file overriding the compiled-in hyperparameters.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out randomized PI controllers and write a dataset.
    Generate {
        #[arg(long, value_parser = parse_scenario)]
        scenario: Scenario,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory; the dataset is written as <scenario>.csv plus a .json sidecar.
        #[arg(long, env = "POLYCSTR_DATA_DIR", default_value = "data")]
        out: PathBuf,
        /// Episodes to roll out [default: 100].
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Train an agent or a cost model on a dataset.
    Train(TrainArgs),
    /// Roll out a trained agent and score it against the dataset anchors.
    Evaluate(EvaluateArgs),
    /// Merge saved score reports into summary tables.
    Report {
        /// Score report JSON files written by `evaluate`.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Datasets whose PI episodes are added as "Data" rows.
        #[arg(long = "dataset")]
        datasets: Vec<PathBuf>,
        #[arg(long, env = "POLYCSTR_REPORT_DIR", default_value = "reports")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainKind {
    Bc,
    Iql,
    CostPicnn,
    CostNn,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(value_enum)]
    kind: TrainKind,
    #[arg(long)]
    dataset: PathBuf,
    /// Checkpoint path; the loss history goes next to it as <stem>.history.csv.
    #[arg(long)]
    out: PathBuf,
    /// Override the number of epochs [defaults: bc 200, iql 2000, cost 1000].
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Override the learning rate [defaults: bc/iql 3e-4, cost 1e-3].
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Agent checkpoint written by `train bc|iql`.
    #[arg(long)]
    agent: PathBuf,
    /// Dataset providing the scenario and the normalization anchors.
    #[arg(long)]
    dataset: PathBuf,
    /// Cost-model checkpoint, required unless --correct off.
    #[arg(long)]
    cost_model: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "off")]
    correct: CorrectArg,
    /// Gradient step size in normalized action units [default: 0.1].
    #[arg(long)]
    eta: Option<f64>,
    /// Hessian regularization for Newton mode [default: 1e-4].
    #[arg(long)]
    lambda: Option<f64>,
    /// Evaluation episodes [default: 100].
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Row label in the reports [default: BC, BC+, IQL or IQL+].
    #[arg(long)]
    name: Option<String>,
    #[arg(long, env = "POLYCSTR_REPORT_DIR", default_value = "reports")]
    out: PathBuf,
    /// Also write per-step traces for this many episodes.
    #[arg(long, default_value_t = 0)]
    traces: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CorrectArg {
    Off,
    Gradient,
    Newton,
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Failure with the process exit code it maps to.
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CmdResult = Result<(), Failure>;

fn require_file(path: &Path, what: &str) -> CmdResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} `{}` does not exist", path.display())))
    }
}

fn create_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| Failure::Runtime(Error::Io { path: dir.to_path_buf(), source: e }))
}

fn create_file(path: &Path) -> Result<File, Failure> {
    File::create(path).map_err(|e| Failure::Runtime(Error::Io { path: path.to_path_buf(), source: e }))
}

fn open_dataset(path: &Path, cfg: &PipelineConfig) -> Result<OfflineDataset, Failure> {
    require_file(path, "dataset")?;
    let ds = load_dataset(path, Some(&cfg.env))?;
    for w in &ds.metadata.warnings {
        log::warn!("{w}");
    }
    Ok(ds)
}

fn history_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into());
    out.with_file_name(format!("{stem}.history.csv"))
}

fn cmd_generate(cfg: &PipelineConfig, scenario: Scenario, seed: u64, out: &Path, episodes: Option<usize>) -> CmdResult {
    let n = episodes.unwrap_or(cfg.dataset.episodes);
    let ds = generate_dataset(&cfg.env, &scenario.config(), &cfg.dataset.pi, n, seed)?;
    let path = out.join(format!("{}.csv", scenario.name()));
    ds.save(&path)?;
    println!(
        "{}: {} episodes, {} transitions, {} runaway -> {}",
        scenario.name(),
        ds.metadata.n_episodes,
        ds.metadata.n_transitions,
        ds.metadata.runaway_episodes.len(),
        path.display()
    );
    Ok(())
}

fn cmd_train(cfg: &PipelineConfig, args: &TrainArgs) -> CmdResult {
    let ds = open_dataset(&args.dataset, cfg)?;
    let data = ds.arrays();
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let history = match args.kind {
        TrainKind::Bc | TrainKind::Iql => {
            let bundle = if let TrainKind::Bc = args.kind {
                let mut c = cfg.bc.clone();
                c.epochs = args.epochs.unwrap_or(c.epochs);
                c.seed = args.seed.unwrap_or(c.seed);
                c.lr = args.lr.unwrap_or(c.lr);
                train_bc(&data, &c)?
            } else {
                let mut c = cfg.iql.clone();
                c.epochs = args.epochs.unwrap_or(c.epochs);
                c.seed = args.seed.unwrap_or(c.seed);
                c.lr = args.lr.unwrap_or(c.lr);
                train_iql(&data, &c)?
            };
            bundle.save(&args.out)?;
            bundle.history
        }
        TrainKind::CostPicnn | TrainKind::CostNn => {
            let variant = if let TrainKind::CostPicnn = args.kind { CostVariant::Picnn } else { CostVariant::Plain };
            let mut c = cfg.cost;
            c.epochs = args.epochs.unwrap_or(c.epochs);
            c.seed = args.seed.unwrap_or(c.seed);
            c.lr = args.lr.unwrap_or(c.lr);
            let fit = train_cost_model(&CostData::from_transitions(&data), variant, &c)?;
            fit.model.save(&args.out)?;
            println!("test mse {:.4} mae {:.4} r2 {:.4}", fit.test.mse, fit.test.mae, fit.test.r2);
            let mut h = TrainHistory::new(&["mse"]);
            for loss in &fit.history {
                h.push(vec![*loss]);
            }
            h
        }
    };
    history.save_csv(&history_path(&args.out))?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_evaluate(cfg: &PipelineConfig, args: &EvaluateArgs) -> CmdResult {
    require_file(&args.agent, "agent checkpoint")?;
    let ds = open_dataset(&args.dataset, cfg)?;
    let mut corr = cfg.correction;
    corr.mode = match args.correct {
        CorrectArg::Off => CorrectionMode::Off,
        CorrectArg::Gradient => CorrectionMode::Gradient,
        CorrectArg::Newton => CorrectionMode::Newton,
    };
    corr.eta = args.eta.unwrap_or(corr.eta);
    corr.lambda_reg = args.lambda.unwrap_or(corr.lambda_reg);
    corr.validate()?;
    let model = match (&args.cost_model, args.correct) {
        (Some(p), _) => {
            require_file(p, "cost model")?;
            Some(CostModel::load(p)?)
        }
        (None, CorrectArg::Off) => None,
        (None, _) => return Err(Failure::Usage("--correct requires --cost-model".into())),
    };
    let agent = AgentBundle::load(&args.agent)?;
    let obs_dim = OBS_DIM;
    if agent.obs_norm.dim() != obs_dim {
        return Err(Error::DimMismatch { expected: obs_dim, got: agent.obs_norm.dim() }.into());
    }
    if let Some(m) = &model {
        if m.state_dim() != obs_dim {
            return Err(Error::DimMismatch { expected: obs_dim, got: m.state_dim() }.into());
        }
    }
    let corrected = corr.mode != CorrectionMode::Off;
    let name = args.name.clone().unwrap_or_else(|| {
        let base = match agent.kind {
            AgentKind::Bc => "BC",
            AgentKind::Iql => "IQL",
        };
        if corrected {
            format!("{base}+")
        } else {
            base.to_string()
        }
    });
    let correction = model.as_ref().map(|m| (m, &corr));
    let episodes = args.episodes.unwrap_or(cfg.evaluation.episodes);
    let scenario = &ds.metadata.scenario;
    let (report, results) = evaluate_agent(&name, &cfg.env, scenario, &agent, correction, episodes, args.seed, ds.metadata.anchors()?)?;
    create_dir(&args.out)?;
    let tag = format!("{}_{}", name.replace('+', "_plus"), scenario.name);
    report.save(&args.out.join(format!("{tag}.json")))?;
    report.write_episodes_csv(create_file(&args.out.join(format!("{tag}_episodes.csv")))?)?;
    for (k, ep) in results.iter().take(args.traces).enumerate() {
        write_episode_trace_csv(ep, create_file(&args.out.join(format!("{tag}_trace_{k}.csv")))?)?;
    }
    print!("{}", summary_markdown(std::slice::from_ref(&report))?);
    Ok(())
}

fn cmd_report(reports: &[PathBuf], datasets: &[PathBuf], out: &Path, cfg: &PipelineConfig) -> CmdResult {
    let mut all = Vec::new();
    for p in datasets {
        all.push(dataset_report(&open_dataset(p, cfg)?.metadata)?);
    }
    for p in reports {
        require_file(p, "score report")?;
        all.push(ScoreReport::load(p)?);
    }
    create_dir(out)?;
    let md = format!("{}\n{}", mean_score_table(&all)?, summary_markdown(&all)?);
    let md_path = out.join("summary.md");
    fs::write(&md_path, &md).map_err(|e| Failure::Runtime(Error::Io { path: md_path, source: e }))?;
    write_summary_csv(&all, create_file(&out.join("summary.csv"))?)?;
    print!("{md}");
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    set_jobs(cli.jobs);
    let cfg = match &cli.config {
        Some(p) => {
            require_file(p, "config")?;
            PipelineConfig::load(p).map_err(|e| match e {
                Error::Config(m) => Failure::Usage(format!("{}: {m}", p.display())),
                other => Failure::Runtime(other),
            })?
        }
        None => PipelineConfig::default(),
    };
    match &cli.command {
        Command::Generate { scenario, seed, out, episodes } => cmd_generate(&cfg, *scenario, *seed, out, *episodes),
        Command::Train(args) => cmd_train(&cfg, args),
        Command::Evaluate(args) => cmd_evaluate(&cfg, args),
        Command::Report { reports, datasets, out } => cmd_report(reports, datasets, out, &cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

//! Command-line surface of the `streetnav` binary.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use streetnav_core::env::write_trajectories;

use crate::config::{ExperimentConfig, GenConfig, Scenario, SplitName};
use crate::data::{
    build_splits, create_dir, generate, load_splits, load_world, train_bpe, write_splits,
    write_world,
};
use crate::eval::{evaluate, oracle_eval, Subtask};
use crate::masking::{mask_eval, parse_kind};
use crate::report::{report, OracleRow, ORACLE_FILE};
use crate::run::{
    load_run_model, repetition_dir, run_experiment, trajectory_logs, Inputs, CONFIG_FILE,
    METRICS_FILE, TRAJECTORIES_FILE,
};
use crate::HarnessError;

#[derive(Debug, Parser)]
#[command(name = "streetnav", about = "Synthetic street navigation experiments")]
pub struct Cli {
    /// Overrides the seed of the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Rollout worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a world directory (graph, features, instances, lexicons).
    GenWorld,
    /// Split a world's instances into seen and unseen scenarios.
    MakeSplits(MakeSplitsArgs),
    /// Train the tokenizer on a split's training instructions.
    TrainBpe(TrainBpeArgs),
    /// Train `repetitions` models from --config, one directory per seed.
    Train,
    /// Greedy evaluation of a trained run.
    Evaluate(EvaluateArgs),
    /// Sub-task completion with oracle actions for the other sub-tasks.
    OracleEval(OracleArgs),
    /// Train and test with masked lexicon tokens for every k.
    MaskEval(MaskArgs),
    /// Tables and figures from a results directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct MakeSplitsArgs {
    #[arg(long)]
    pub world: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub dev: usize,
    #[arg(long, default_value_t = 100)]
    pub test: usize,
}

#[derive(Debug, Args)]
pub struct TrainBpeArgs {
    #[arg(long)]
    pub splits: PathBuf,
    #[arg(long, default_value = "unseen")]
    pub scenario: String,
    #[arg(long, default_value_t = 2000)]
    pub vocab: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub scenario: Option<String>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Run directory written by `train`; required unless --gold is set.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// orientation, directions, stopping or all; every choice when omitted.
    #[arg(long)]
    pub subtask: Option<String>,
    /// Replace the model by gold replay.
    #[arg(long)]
    pub gold: bool,
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    /// direction or object.
    #[arg(long)]
    pub kind: String,
    /// Comma-separated mask counts.
    #[arg(long, value_delimiter = ',', required = true)]
    pub k: Vec<usize>,
    /// Scenarios to train; both when omitted.
    #[arg(long, value_delimiter = ',')]
    pub scenario: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub results: PathBuf,
    /// Run group the others are tested against.
    #[arg(long, default_value = "full")]
    pub baseline: String,
}

fn parse_scenario(s: &str) -> Result<Scenario, HarnessError> {
    match s {
        "seen" => Ok(Scenario::Seen),
        "unseen" => Ok(Scenario::Unseen),
        _ => Err(HarnessError::Config(format!("unknown scenario `{s}`"))),
    }
}

fn parse_split(s: &str) -> Result<SplitName, HarnessError> {
    match s {
        "train" => Ok(SplitName::Train),
        "dev" => Ok(SplitName::Dev),
        "test" => Ok(SplitName::Test),
        _ => Err(HarnessError::Config(format!("unknown split `{s}`"))),
    }
}

fn experiment_config(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| HarnessError::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write_text(path: &Path, text: impl AsRef<[u8]>) -> Result<(), HarnessError> {
    std::fs::write(path, text)
        .map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display())))
}

/// Config snapshot of a run directory, with overrides applied.
fn run_config(
    run: &Path,
    scenario: Option<&str>,
    split: Option<&str>,
) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = ExperimentConfig::load(&run.join(CONFIG_FILE))?;
    if let Some(s) = scenario {
        cfg.scenario = parse_scenario(s)?;
    }
    if let Some(s) = split {
        cfg.eval_split = parse_split(s)?;
    }
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<(), HarnessError> {
    let threads = cli.threads.max(1);
    match &cli.command {
        Command::GenWorld => {
            let mut gen = match &cli.config {
                Some(p) => serde_json::from_str::<GenConfig>(
                    &std::fs::read_to_string(p)
                        .map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?,
                )
                .map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?,
                None => GenConfig::default(),
            };
            if let Some(seed) = cli.seed {
                gen.world.seed = seed;
            }
            write_world(&generate(&gen)?, &cli.out)
        }
        Command::MakeSplits(a) => {
            let bundle = load_world(&a.world, &[])?;
            let splits = build_splits(&bundle, a.dev, a.test, cli.seed.unwrap_or(0))?;
            write_splits(&splits, &cli.out)
        }
        Command::TrainBpe(a) => {
            let splits = load_splits(&a.splits)?;
            let bpe = train_bpe(&splits, parse_scenario(&a.scenario)?, a.vocab)?;
            if let Some(dir) = cli.out.parent().filter(|d| !d.as_os_str().is_empty()) {
                create_dir(dir)?;
            }
            bpe.save(&cli.out)?;
            Ok(())
        }
        Command::Train => {
            let cfg = experiment_config(cli)?;
            let inputs = Inputs::load(&cfg)?;
            for rep in 0..cfg.repetitions as u64 {
                let run_cfg = ExperimentConfig {
                    seed: cfg.seed + rep,
                    ..cfg.clone()
                };
                let dir = repetition_dir(&cli.out, run_cfg.seed);
                let result = run_experiment(&run_cfg, &inputs, Some(&dir), threads, |e| {
                    eprintln!("{}", e.line())
                })?;
                println!("{}\t{}", dir.display(), result.report.csv_row(&cfg.name));
            }
            Ok(())
        }
        Command::Evaluate(a) => {
            let cfg = run_config(&a.run, a.scenario.as_deref(), a.split.as_deref())?;
            let model = load_run_model(&a.run)?;
            let inputs = Inputs::load(&cfg)?;
            let stores = inputs.bundle.store_refs();
            let ctx = inputs.context(&cfg, &stores, threads);
            let instances = inputs.instances(cfg.scenario, cfg.eval_split);
            let (report, trajectories) = evaluate(&model, &ctx, instances)?;
            create_dir(&cli.out)?;
            write_text(&cli.out.join(METRICS_FILE), report.to_json())?;
            write_trajectories(
                &cli.out.join(TRAJECTORIES_FILE),
                &trajectory_logs(&inputs, instances, &trajectories),
            )?;
            println!("{}", report.csv_row(&cfg.name));
            Ok(())
        }
        Command::OracleEval(a) => {
            let choices: Vec<Option<Subtask>> = match a.subtask.as_deref() {
                None => Subtask::ALL.into_iter().map(Some).chain([None]).collect(),
                Some("all") => vec![None],
                Some(s) => vec![Some(Subtask::parse(s).ok_or_else(|| {
                    HarnessError::Config(format!("invalid subtask `{s}`"))
                })?)],
            };
            let (cfg, model) = match (&a.run, a.gold) {
                (Some(run), false) => (
                    run_config(run, None, a.split.as_deref())?,
                    Some(load_run_model(run)?),
                ),
                (Some(run), true) => (run_config(run, None, a.split.as_deref())?, None),
                (None, true) => {
                    let mut cfg = experiment_config(cli)?;
                    if let Some(s) = &a.split {
                        cfg.eval_split = parse_split(s)?;
                    }
                    (cfg, None)
                }
                (None, false) => {
                    return Err(HarnessError::Config(
                        "--run is required without --gold".into(),
                    ))
                }
            };
            let inputs = Inputs::load(&cfg)?;
            let stores = inputs.bundle.store_refs();
            let ctx = inputs.context(&cfg, &stores, threads);
            let instances = inputs.instances(cfg.scenario, cfg.eval_split);
            let mut rows = Vec::new();
            for sub in choices {
                let (report, _) = oracle_eval(model.as_ref(), &ctx, instances, sub)?;
                let name = sub.map(Subtask::as_str).unwrap_or("all");
                println!("{name}\t{:.2}", report.aggregate.tc * 100.0);
                rows.push(OracleRow {
                    subtask: name.into(),
                    tc: report.aggregate.tc,
                });
            }
            create_dir(&cli.out)?;
            write_text(
                &cli.out.join(ORACLE_FILE),
                serde_json::to_string_pretty(&rows).expect("serializes"),
            )
        }
        Command::MaskEval(a) => {
            let kind = parse_kind(&a.kind)
                .ok_or_else(|| HarnessError::Config(format!("unknown lexicon `{}`", a.kind)))?;
            let scenarios = if a.scenario.is_empty() {
                vec![Scenario::Seen, Scenario::Unseen]
            } else {
                a.scenario
                    .iter()
                    .map(|s| parse_scenario(s))
                    .collect::<Result<_, _>>()?
            };
            let cfg = experiment_config(cli)?;
            let mut inputs = Inputs::load(&cfg)?;
            let rows = mask_eval(
                &cfg,
                &mut inputs,
                kind,
                &a.k,
                &scenarios,
                Some(&cli.out),
                threads,
            )?;
            print!("{}", crate::masking::mask_csv(&rows));
            Ok(())
        }
        Command::Report(a) => {
            let files = report(&a.results, &cli.out, &a.baseline)?;
            for f in files.written {
                println!("{}", f.display());
            }
            Ok(())
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code:
/// 0 success, 1 config error, 2 data error, 3 runtime failure.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

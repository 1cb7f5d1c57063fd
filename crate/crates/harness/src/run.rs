//! One experiment run and its result directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use streetnav_core::env::{write_trajectories, NavInstance, Trajectory, TrajectoryLog};
use streetnav_core::metrics::MetricsReport;
use streetnav_core::pano::PanoFeatureStore;
use streetnav_core::tokenizer::{BpeModel, MaskLexicon};
use streetnav_core::worldgen::Splits;
use streetnav_orar::OrarModel;

use crate::config::{ExperimentConfig, MaskSetting, Scenario, SplitName};
use crate::data::{
    create_dir, load_bpe, load_lexicon, load_splits, load_world, split_instances, WorldBundle,
};
use crate::eval::{evaluate, EvalContext};
use crate::train::{train, EpochLog, TrainData};
use crate::HarnessError;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const MODEL_CONFIG_FILE: &str = "model.json";
pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const TRAJECTORIES_FILE: &str = "trajectories.jsonl";
pub const LOG_FILE: &str = "log.txt";
pub const RUN_FILE: &str = "run.json";

/// World, splits, tokenizer and lexicon referenced by a config.
pub struct Inputs {
    pub bundle: WorldBundle,
    pub splits: Splits,
    pub bpe: BpeModel,
    pub lexicon: Option<MaskLexicon>,
}

impl Inputs {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        cfg.check_paths()?;
        let bundle = load_world(&cfg.world, &cfg.model.variants())?;
        let splits = load_splits(&cfg.splits)?;
        let bpe = load_bpe(&cfg.bpe)?;
        let lexicon = cfg
            .mask
            .map(|m| load_lexicon(&cfg.world, m.lexicon))
            .transpose()?;
        Ok(Inputs {
            bundle,
            splits,
            bpe,
            lexicon,
        })
    }

    pub fn instances(&self, scenario: Scenario, split: SplitName) -> &[NavInstance] {
        split_instances(&self.splits, scenario, split)
    }

    /// Rollout context; `stores` is `self.bundle.store_refs()`.
    pub fn context<'a>(
        &'a self,
        cfg: &ExperimentConfig,
        stores: &'a [&'a PanoFeatureStore],
        threads: usize,
    ) -> EvalContext<'a> {
        EvalContext {
            graph: self.bundle.graph(),
            stores,
            bpe: &self.bpe,
            mask: match (cfg.mask, &self.lexicon) {
                (Some(m), Some(lex)) => Some((lex, m.k)),
                _ => None,
            },
            max_steps: cfg.max_steps,
            threads,
        }
    }
}

/// Metadata the report groups runs by.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub name: String,
    pub seed: u64,
    pub scenario: Scenario,
    pub split: SplitName,
    pub mask: Option<MaskSetting>,
    pub best_epoch: usize,
    pub best_dev_spd: Option<f64>,
}

pub struct RunResult {
    pub info: RunInfo,
    pub report: MetricsReport,
    pub log: Vec<EpochLog>,
    pub model: OrarModel,
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<(), HarnessError> {
    std::fs::write(path, text)
        .map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display())))
}

pub fn trajectory_logs(
    inputs: &Inputs,
    instances: &[NavInstance],
    trajectories: &[Trajectory],
) -> Vec<TrajectoryLog> {
    instances
        .iter()
        .zip(trajectories)
        .map(|(i, t)| TrajectoryLog::from_trajectory(inputs.bundle.graph(), &i.id, t))
        .collect()
}

/// Trains on the config's scenario, evaluates the selected model on
/// `cfg.eval_split` and, when `out` is given, writes the run directory.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    inputs: &Inputs,
    out: Option<&Path>,
    threads: usize,
    mut progress: impl FnMut(&EpochLog),
) -> Result<RunResult, HarnessError> {
    let stores = inputs.bundle.store_refs();
    let ctx = inputs.context(cfg, &stores, threads);
    let data = TrainData {
        ctx,
        train: inputs.instances(cfg.scenario, SplitName::Train),
        dev: inputs.instances(cfg.scenario, SplitName::Dev),
    };
    let outcome = train(cfg, &data, &mut progress)?;
    let test = inputs.instances(cfg.scenario, cfg.eval_split);
    let (report, trajectories) = evaluate(&outcome.model, &ctx, test)?;
    let info = RunInfo {
        name: cfg.name.clone(),
        seed: cfg.seed,
        scenario: cfg.scenario,
        split: cfg.eval_split,
        mask: cfg.mask,
        best_epoch: outcome.best_epoch,
        best_dev_spd: outcome.best_dev_spd,
    };
    if let Some(dir) = out {
        create_dir(dir)?;
        outcome
            .model
            .save(&dir.join(CHECKPOINT_FILE), &dir.join(MODEL_CONFIG_FILE))?;
        write(&dir.join(CONFIG_FILE), cfg.to_json())?;
        write(&dir.join(METRICS_FILE), report.to_json())?;
        write_trajectories(
            &dir.join(TRAJECTORIES_FILE),
            &trajectory_logs(inputs, test, &trajectories),
        )?;
        let mut log: String = outcome.log.iter().map(|e| e.line() + "\n").collect();
        log.push_str(&format!(
            "selected epoch {}\n{}\n{}\n",
            outcome.best_epoch,
            MetricsReport::CSV_HEADER,
            report.csv_row(&cfg.name)
        ));
        write(&dir.join(LOG_FILE), log)?;
        write(
            &dir.join(RUN_FILE),
            serde_json::to_string_pretty(&info).expect("serializes"),
        )?;
    }
    Ok(RunResult {
        info,
        report,
        log: outcome.log,
        model: outcome.model,
    })
}

/// Directory of the repetition with `seed` below `out`.
pub fn repetition_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

/// Loads a trained model from a run directory.
pub fn load_run_model(dir: &Path) -> Result<OrarModel, HarnessError> {
    let ckpt = dir.join(CHECKPOINT_FILE);
    if !ckpt.exists() {
        return Err(HarnessError::Data(format!(
            "missing checkpoint {}",
            ckpt.display()
        )));
    }
    Ok(OrarModel::load(&ckpt, &dir.join(MODEL_CONFIG_FILE))?)
}

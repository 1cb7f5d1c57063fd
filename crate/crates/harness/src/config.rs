use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use streetnav_core::tokenizer::LexiconKind;
use streetnav_core::worldgen::{RouteParams, WorldSpec};
use streetnav_orar::OrarConfig;

use crate::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Seen,
    Unseen,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Seen => "seen",
            Scenario::Unseen => "unseen",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        }
    }
}

/// Token masking applied to instructions during training and testing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSetting {
    pub lexicon: LexiconKind,
    pub k: usize,
}

/// One training run plus its evaluation. Relative paths resolve against the
/// directory of the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Run group the report aggregates this run under.
    pub name: String,
    /// Directory written by `gen-world`.
    pub world: PathBuf,
    /// Splits file written by `make-splits`.
    pub splits: PathBuf,
    pub scenario: Scenario,
    /// Tokenizer written by `train-bpe`.
    pub bpe: PathBuf,
    pub model: OrarConfig,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Dev evaluation interval in epochs; the last epoch is always evaluated.
    pub eval_every: usize,
    /// Dev instances used for model selection; 0 uses all of them.
    pub dev_limit: usize,
    pub selection_metric: String,
    pub bpe_dropout: f64,
    pub max_steps: usize,
    pub seed: u64,
    pub repetitions: usize,
    /// Split the final metrics are computed on.
    pub eval_split: SplitName,
    pub mask: Option<MaskSetting>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::desk()
    }
}

impl ExperimentConfig {
    /// Full-size model and schedule.
    pub fn paper() -> Self {
        ExperimentConfig {
            name: "orar".into(),
            world: PathBuf::from("world"),
            splits: PathBuf::from("splits/merged.json"),
            scenario: Scenario::Unseen,
            bpe: PathBuf::from("bpe.json"),
            model: OrarConfig::paper(),
            lr: 5e-4,
            weight_decay: 1e-3,
            batch_size: 64,
            epochs: 150,
            eval_every: 5,
            dev_limit: 0,
            selection_metric: "spd".into(),
            bpe_dropout: streetnav_core::tokenizer::DEFAULT_BPE_DROPOUT,
            max_steps: streetnav_core::env::DEFAULT_MAX_STEPS,
            seed: 0,
            repetitions: 10,
            eval_split: SplitName::Test,
            mask: None,
        }
    }

    /// Laptop-scale profile: hidden sizes 64 and 40 epochs.
    pub fn desk() -> Self {
        ExperimentConfig {
            model: OrarConfig::desk(),
            epochs: 40,
            ..ExperimentConfig::paper()
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.batch_size == 0 || self.epochs == 0 || self.eval_every == 0 || self.max_steps == 0 {
            return bad("batch_size, epochs, eval_every and max_steps must be positive".into());
        }
        if self.name.is_empty() {
            return bad("name must not be empty".into());
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if self.selection_metric != "spd" {
            return bad(format!(
                "unsupported selection metric `{}`",
                self.selection_metric
            ));
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return bad(format!(
                "lr {} / weight_decay {}",
                self.lr, self.weight_decay
            ));
        }
        if !(0.0..1.0).contains(&self.bpe_dropout) {
            return bad(format!("bpe_dropout {} outside [0, 1)", self.bpe_dropout));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.world, &mut cfg.splits, &mut cfg.bpe] {
            if p.is_relative() {
                *p = std::path::absolute(base.join(&*p))
                    .map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks that the referenced inputs exist.
    pub fn check_paths(&self) -> Result<(), HarnessError> {
        for p in [&self.world, &self.splits, &self.bpe] {
            if !p.exists() {
                return Err(HarnessError::Config(format!(
                    "missing input {}",
                    p.display()
                )));
            }
        }
        Ok(())
    }
}

/// Inputs of `gen-world`: the city and how many routes to sample on each side
/// of the seen/unseen boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub world: WorldSpec,
    /// Routes per dataset style sampled west of the boundary.
    pub seen_routes: usize,
    /// Routes per dataset style sampled east of the boundary.
    pub unseen_routes: usize,
    /// Boundary position as a fraction of the map width.
    pub boundary: f64,
    pub routes: RouteParams,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            world: WorldSpec::default(),
            seen_routes: 1000,
            unseen_routes: 150,
            boundary: 0.7,
            routes: RouteParams::default(),
        }
    }
}

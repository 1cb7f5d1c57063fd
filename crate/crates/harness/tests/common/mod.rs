#![allow(dead_code)]

use std::path::{Path, PathBuf};

use streetnav_core::worldgen::{RouteParams, WorldSpec};
use streetnav_harness::data::{build_splits, generate, train_bpe, write_splits, write_world};
use streetnav_harness::{ExperimentConfig, GenConfig, Scenario};
use streetnav_orar::OrarConfig;
use tempfile::TempDir;

pub struct Fixture {
    pub dir: TempDir,
    pub cfg: ExperimentConfig,
}

impl Fixture {
    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn config_path(&self) -> PathBuf {
        self.dir.path().join("config.json")
    }
}

pub fn small_gen(seed: u64) -> GenConfig {
    GenConfig {
        world: WorldSpec {
            cols: 5,
            rows: 4,
            mid_nodes: 1,
            prefinal_dim: 16,
            seed,
            ..WorldSpec::default()
        },
        seen_routes: 30,
        unseen_routes: 10,
        boundary: 0.6,
        routes: RouteParams {
            min_len: 4,
            max_len: 8,
            min_intersections: 1,
            straight_bias: 0.7,
        },
    }
}

pub fn small_model() -> OrarConfig {
    OrarConfig {
        token_emb: 8,
        encoder_hidden: 12,
        encoder_layers: 1,
        decoder_hidden: 16,
        heads: 2,
        action_emb: 4,
        junction_emb: 4,
        timestep_emb: 4,
        visual_ffn: [8, 8],
        semseg_ffn: [8, 8],
        max_timestep: 20,
        prefinal_dim: 16,
        ..OrarConfig::desk()
    }
}

/// A generated world with splits, tokenizer and a config file, all in a
/// temporary directory.
pub fn fixture(seed: u64) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let bundle = generate(&small_gen(seed)).unwrap();
    write_world(&bundle, &dir.path().join("world")).unwrap();
    let splits = build_splits(&bundle, 4, 6, seed).unwrap();
    write_splits(&splits, &dir.path().join("splits")).unwrap();
    let merged = splits.iter().find(|s| s.name == "merged").unwrap();
    train_bpe(merged, Scenario::Unseen, 150)
        .unwrap()
        .save(&dir.path().join("bpe.json"))
        .unwrap();
    let cfg = ExperimentConfig {
        name: "full".into(),
        world: "world".into(),
        splits: "splits/merged.json".into(),
        bpe: "bpe.json".into(),
        model: small_model(),
        lr: 3e-3,
        epochs: 3,
        eval_every: 1,
        batch_size: 16,
        repetitions: 1,
        max_steps: 30,
        seed,
        ..ExperimentConfig::desk()
    };
    let path = dir.path().join("config.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    Fixture { dir, cfg }
}

//! Desk-scale criteria: trained models on a generated ~400-node world.

use std::path::Path;
use std::time::Instant;

use streetnav_core::env::DatasetTag;
use streetnav_core::pano::PanoVariant;
use streetnav_core::tokenizer::LexiconKind;
use streetnav_core::worldgen::RouteParams;
use streetnav_core::NavInstance;
use streetnav_harness::data::{
    build_splits, generate, load_lexicon, train_bpe, write_splits, write_world,
};
use streetnav_harness::eval::random_policy;
use streetnav_harness::run::METRICS_FILE;
use streetnav_harness::{
    evaluate, oracle_eval, run_experiment, ExperimentConfig, GenConfig, HarnessError, Inputs,
    MaskSetting, RunResult, Scenario, SplitName, Subtask,
};

use crate::Outcome;

const SEEDS: [u64; 3] = [0, 1, 2];
const DEV: usize = 100;
const TEST: usize = 200;

/// Default world and route sampler with more turns per route.
fn world_config() -> GenConfig {
    GenConfig {
        routes: RouteParams {
            straight_bias: 0.3,
            ..RouteParams::default()
        },
        ..GenConfig::default()
    }
}

/// Writes world, splits and tokenizer under `dir` and returns the base
/// config of the desk profile pointing at them.
fn prepare(dir: &Path, gen: &GenConfig, dev: usize, test: usize) -> Result<ExperimentConfig, HarnessError> {
    let bundle = generate(gen)?;
    write_world(&bundle, &dir.join("world"))?;
    let splits = build_splits(&bundle, dev, test, gen.world.seed)?;
    write_splits(&splits, &dir.join("splits"))?;
    let merged = splits
        .iter()
        .find(|s| s.name == "merged")
        .ok_or_else(|| HarnessError::Data("no merged split".into()))?;
    train_bpe(merged, Scenario::Unseen, 2000)?.save(&dir.join("bpe.json"))?;
    Ok(ExperimentConfig {
        world: dir.join("world"),
        splits: dir.join("splits/merged.json"),
        bpe: dir.join("bpe.json"),
        ..ExperimentConfig::desk()
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn pct(x: f64) -> String {
    format!("{:.1}", x * 100.0)
}

fn list(xs: &[f64]) -> String {
    xs.iter().map(|&x| pct(x)).collect::<Vec<_>>().join("/")
}

/// Trains one model per seed and returns the runs.
fn runs(base: &ExperimentConfig, name: &str, out: &Path) -> Result<Vec<RunResult>, HarnessError> {
    let mut cfg = base.clone();
    cfg.name = name.to_string();
    let inputs = Inputs::load(&cfg)?;
    let mut results = Vec::new();
    for seed in SEEDS {
        cfg.seed = seed;
        let t0 = Instant::now();
        let r = run_experiment(&cfg, &inputs, Some(&out.join(format!("{name}-{seed}"))), 1, |_| {})?;
        println!(
            "  run {name} seed {seed}: unseen test TC {} (epoch {}) in {:.0}s",
            pct(r.report.aggregate.tc),
            r.info.best_epoch,
            t0.elapsed().as_secs_f64()
        );
        results.push(r);
    }
    Ok(results)
}

fn test_tc(runs: &[RunResult]) -> Vec<f64> {
    runs.iter().map(|r| r.report.aggregate.tc).collect()
}

/// Unseen TC of each run restricted to map2seq-style test routes.
fn map2seq_tc(base: &ExperimentConfig, runs: &[RunResult]) -> Result<Vec<f64>, HarnessError> {
    let inputs = Inputs::load(base)?;
    let stores = inputs.bundle.store_refs();
    let ctx = inputs.context(base, &stores, 1);
    let subset: Vec<NavInstance> = inputs
        .instances(Scenario::Unseen, SplitName::Test)
        .iter()
        .filter(|i| i.dataset_tag == DatasetTag::Map2seq)
        .cloned()
        .collect();
    runs.iter()
        .map(|r| Ok(evaluate(&r.model, &ctx, &subset)?.0.aggregate.tc))
        .collect()
}

/// Gold replay under every oracle choice on `base`'s unseen test split.
fn gold_scores(base: &ExperimentConfig) -> Result<Vec<(String, f64)>, HarnessError> {
    let inputs = Inputs::load(base)?;
    let stores = inputs.bundle.store_refs();
    let ctx = inputs.context(base, &stores, 1);
    let test = inputs.instances(Scenario::Unseen, SplitName::Test);
    let mut out = Vec::new();
    for choice in [None, Some(Subtask::Orientation), Some(Subtask::Directions), Some(Subtask::Stopping)] {
        let (r, _) = oracle_eval(None, &ctx, test, choice)?;
        out.push((choice.map_or("none", Subtask::as_str).to_string(), r.aggregate.tc));
    }
    Ok(out)
}

fn gold_outcome(scores: Result<Vec<(String, f64)>, HarnessError>) -> Outcome {
    match scores {
        Ok(s) => Outcome::new(
            "7g",
            s.iter().all(|(_, tc)| *tc == 1.0),
            true,
            format!(
                "gold replay TC under oracle choices: {}",
                s.iter().map(|(n, tc)| format!("{n}={}", pct(*tc))).collect::<Vec<_>>().join(" ")
            ),
        ),
        Err(e) => Outcome::new("7g", false, true, format!("gold replay failed: {e}")),
    }
}

/// Gold half of criterion 7 on the acceptance world, without training.
pub fn gold_oracle(scratch: &Path) -> Outcome {
    let dir = scratch.join("gold");
    gold_outcome(prepare(&dir, &world_config(), DEV, TEST).and_then(|base| gold_scores(&base)))
}

/// Runs a small experiment twice and compares the metrics files.
pub fn determinism(scratch: &Path) -> Result<(bool, usize), HarnessError> {
    let dir = scratch.join("determinism");
    let gen = GenConfig {
        world: streetnav_core::worldgen::WorldSpec {
            cols: 5,
            rows: 4,
            mid_nodes: 1,
            prefinal_dim: 16,
            seed: 4,
            ..Default::default()
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
    };
    let mut cfg = prepare(&dir, &gen, 4, 6)?;
    cfg.model.encoder_hidden = 12;
    cfg.model.decoder_hidden = 16;
    cfg.model.visual_ffn = [8, 8];
    cfg.model.prefinal_dim = 16;
    cfg.epochs = 3;
    cfg.eval_every = 1;
    cfg.batch_size = 8;
    let inputs = Inputs::load(&cfg)?;
    let mut bytes = Vec::new();
    for k in 0..2 {
        let out = dir.join(format!("run-{k}"));
        run_experiment(&cfg, &inputs, Some(&out), 1, |_| {})?;
        let path = out.join(METRICS_FILE);
        bytes.push(std::fs::read(&path).map_err(|e| HarnessError::io(&path, e))?);
    }
    Ok((bytes[0] == bytes[1], bytes[0].len()))
}

struct Desk {
    full: Vec<f64>,
    random: Vec<f64>,
    nojunction: Vec<f64>,
    full_m2s: Vec<f64>,
    nodelta_m2s: Vec<f64>,
    oracle: Vec<(Subtask, Vec<f64>)>,
    direction: Vec<f64>,
    object: Vec<f64>,
}

fn desk_runs(base: &ExperimentConfig, out: &Path) -> Result<Desk, HarnessError> {
    let full = runs(base, "full", out)?;
    let inputs = Inputs::load(base)?;
    let stores = inputs.bundle.store_refs();
    let ctx = inputs.context(base, &stores, 1);
    let test = inputs.instances(Scenario::Unseen, SplitName::Test);
    let random = SEEDS
        .iter()
        .map(|&s| Ok(random_policy(&ctx, test, s)?.0.aggregate.tc))
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let mut oracle = Vec::new();
    for subtask in Subtask::ALL {
        let tcs = full
            .iter()
            .map(|r| Ok(oracle_eval(Some(&r.model), &ctx, test, Some(subtask))?.0.aggregate.tc))
            .collect::<Result<Vec<_>, HarnessError>>()?;
        oracle.push((subtask, tcs));
    }

    let mut cfg = base.clone();
    cfg.model.use_junction = false;
    let nojunction = runs(&cfg, "nojunction", out)?;
    let mut cfg = base.clone();
    cfg.model.use_heading_delta = false;
    let nodelta = runs(&cfg, "nodelta", out)?;

    let mut masked = Vec::new();
    for (kind, name) in [(LexiconKind::Direction, "mask-direction"), (LexiconKind::Object, "mask-object")] {
        let mut cfg = base.clone();
        cfg.mask = Some(MaskSetting {
            lexicon: kind,
            k: load_lexicon(&base.world, kind)?.words.len(),
        });
        masked.push(test_tc(&runs(&cfg, name, out)?));
    }
    let object = masked.pop().unwrap_or_default();
    let direction = masked.pop().unwrap_or_default();

    Ok(Desk {
        full: test_tc(&full),
        random,
        nojunction: test_tc(&nojunction),
        full_m2s: map2seq_tc(base, &full)?,
        nodelta_m2s: map2seq_tc(base, &nodelta)?,
        oracle,
        direction,
        object,
    })
}

/// Training profile of the desk runs: no panorama input, batch 16, lr 1e-3.
/// Generated pre-final features let the model memorize the seen area.
fn profile(mut cfg: ExperimentConfig) -> ExperimentConfig {
    cfg.model.visual_variant = PanoVariant::None;
    cfg.batch_size = 16;
    cfg.lr = 1e-3;
    cfg
}

/// Criteria 6, 7 and 8.
pub fn learning_criteria(scratch: &Path) -> Vec<Outcome> {
    let dir = scratch.join("desk");
    let base = match prepare(&dir, &world_config(), DEV, TEST) {
        Ok(b) => profile(b),
        Err(e) => {
            return ["6a", "6b", "6c", "7", "8"]
                .into_iter()
                .map(|id| Outcome::new(id, false, false, format!("world setup failed: {e}")))
                .collect()
        }
    };
    let mut out = vec![gold_outcome(gold_scores(&base))];
    let t0 = Instant::now();
    let d = match desk_runs(&base, &dir.join("runs")) {
        Ok(d) => d,
        Err(e) => {
            out.extend(
                ["6a", "6b", "6c", "7", "8"]
                    .into_iter()
                    .map(|id| Outcome::new(id, false, false, format!("desk runs failed: {e}"))),
            );
            return out;
        }
    };
    println!("  desk runs took {:.0} min", t0.elapsed().as_secs_f64() / 60.0);

    let (full, random) = (mean(&d.full), mean(&d.random));
    out.push(Outcome::new(
        "6a",
        full - random >= 0.10,
        false,
        format!(
            "full unseen TC {} ({}) vs random policy {} ({}); need +10 points",
            pct(full),
            list(&d.full),
            pct(random),
            list(&d.random)
        ),
    ));
    let nj = mean(&d.nojunction);
    let drop = if full > 0.0 { 1.0 - nj / full } else { 0.0 };
    out.push(Outcome::new(
        "6b",
        full > 0.0 && drop >= 0.30,
        false,
        format!(
            "no junction embedding TC {} ({}) vs full {}: relative drop {:.0}% (need >= 30%)",
            pct(nj),
            list(&d.nojunction),
            pct(full),
            drop * 100.0
        ),
    ));
    let (fm, nm) = (mean(&d.full_m2s), mean(&d.nodelta_m2s));
    out.push(Outcome::new(
        "6c",
        nm < fm,
        false,
        format!(
            "map2seq unseen TC without heading delta {} ({}) vs full {} ({})",
            pct(nm),
            list(&d.nodelta_m2s),
            pct(fm),
            list(&d.full_m2s)
        ),
    ));
    let means: Vec<(Subtask, f64)> = d.oracle.iter().map(|(s, v)| (*s, mean(v))).collect();
    let stopping = means.iter().find(|(s, _)| *s == Subtask::Stopping).map_or(0.0, |m| m.1);
    let lowest = means.iter().all(|(s, v)| *s == Subtask::Stopping || stopping < *v);
    out.push(Outcome::new(
        "7",
        lowest,
        false,
        format!(
            "trained oracle TC: {}; stopping lowest: {lowest}",
            means
                .iter()
                .map(|(s, v)| format!("{}={}", s.as_str(), pct(*v)))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    ));
    let (dir_tc, obj_tc) = (mean(&d.direction), mean(&d.object));
    let close = full > 0.0 && (obj_tc - full).abs() / full <= 0.15;
    out.push(Outcome::new(
        "8",
        dir_tc < obj_tc && close,
        false,
        format!(
            "direction-masked TC {} ({}) vs object-masked {} ({}); object vs unmasked {}: {:.0}% relative (need <= 15%)",
            pct(dir_tc),
            list(&d.direction),
            pct(obj_tc),
            list(&d.object),
            pct(full),
            if full > 0.0 { (obj_tc - full).abs() / full * 100.0 } else { f64::INFINITY }
        ),
    ));
    out
}

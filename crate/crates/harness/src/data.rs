//! On-disk layout of generated worlds, splits and tokenizers.

use std::path::{Path, PathBuf};

use streetnav_core::env::{
    read_instances, write_instances, DatasetTag, EnvironmentGraph, NavInstance,
};
use streetnav_core::pano::{PanoFeatureStore, PanoVariant};
use streetnav_core::tokenizer::{BpeModel, LexiconKind, MaskLexicon};
use streetnav_core::worldgen::{
    gen_instances, gen_world, make_splits, object_words, InstructionParams, RouteRegion, SplitSpec,
    Splits, World,
};

use crate::config::{GenConfig, Scenario, SplitName};
use crate::HarnessError;

pub const GEN_FILE: &str = "gen.json";
pub const GRAPH_FILE: &str = "graph.json";
pub const LANDMARKS_FILE: &str = "landmarks.json";
pub const INSTANCES_FILE: &str = "instances.jsonl";

pub const FEATURE_VARIANTS: [PanoVariant; 3] = [
    PanoVariant::PreFinal,
    PanoVariant::Semseg,
    PanoVariant::FourthToLast,
];

pub fn features_file(variant: PanoVariant) -> String {
    format!("features-{}.bin", variant.as_str())
}

pub fn lexicon_file(kind: LexiconKind) -> &'static str {
    match kind {
        LexiconKind::Direction => "lexicon-direction.json",
        LexiconKind::Object => "lexicon-object.json",
    }
}

/// A generated city with its instances and feature stores.
pub struct WorldBundle {
    pub gen: GenConfig,
    pub world: World,
    pub instances: Vec<NavInstance>,
    pub stores: Vec<PanoFeatureStore>,
}

impl WorldBundle {
    pub fn graph(&self) -> &EnvironmentGraph {
        &self.world.graph
    }

    pub fn store_refs(&self) -> Vec<&PanoFeatureStore> {
        self.stores.iter().collect()
    }

    /// Boundary between the seen (west) and unseen (east) areas.
    pub fn split_spec(&self, dev: usize, test: usize, seed: u64) -> SplitSpec {
        SplitSpec::vertical(&self.world.graph, self.gen.boundary, dev, test, seed)
    }

    pub fn lexicon(&self, kind: LexiconKind) -> MaskLexicon {
        match kind {
            LexiconKind::Direction => MaskLexicon::direction(),
            LexiconKind::Object => {
                let corpus: Vec<&str> = self
                    .instances
                    .iter()
                    .map(|i| i.instruction.as_str())
                    .collect();
                MaskLexicon::objects_by_frequency(&object_words(), &corpus)
            }
        }
    }
}

/// Builds the world of `gen` and samples routes of both styles on both sides
/// of the boundary.
pub fn generate(gen: &GenConfig) -> Result<WorldBundle, HarnessError> {
    if !(0.0..1.0).contains(&gen.boundary) || gen.boundary == 0.0 {
        return Err(HarnessError::Config(format!(
            "boundary {} outside (0, 1)",
            gen.boundary
        )));
    }
    let world = gen_world(&gen.world)?;
    let seed = gen.world.seed;
    let spec = SplitSpec::vertical(&world.graph, gen.boundary, 0, 0, seed);
    let east = spec.unseen_mask(&world.graph);
    let west = RouteRegion::from_mask(east.iter().map(|&e| !e).collect());
    let east = RouteRegion::from_mask(east);
    let ip = InstructionParams::default();
    let mut instances = Vec::new();
    for (k, style) in [DatasetTag::Touchdown, DatasetTag::Map2seq]
        .into_iter()
        .enumerate()
    {
        let s = seed.wrapping_mul(1000).wrapping_add(10 * k as u64);
        let name = style.as_str();
        instances.extend(gen_instances(
            &world,
            style,
            gen.seen_routes,
            s + 1,
            &west,
            &gen.routes,
            &ip,
            &format!("{name}-w"),
        )?);
        instances.extend(gen_instances(
            &world,
            style,
            gen.unseen_routes,
            s + 2,
            &east,
            &gen.routes,
            &ip,
            &format!("{name}-e"),
        )?);
    }
    let stores = FEATURE_VARIANTS
        .iter()
        .map(|&v| world.features(v))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(WorldBundle {
        gen: gen.clone(),
        world,
        instances,
        stores,
    })
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), HarnessError> {
    std::fs::write(path, bytes)
        .map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display())))
}

fn read_file(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

pub fn create_dir(dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| HarnessError::Runtime(format!("{}: {e}", dir.display())))
}

/// Writes every artifact of the bundle into `dir`.
pub fn write_world(bundle: &WorldBundle, dir: &Path) -> Result<(), HarnessError> {
    create_dir(dir)?;
    write_file(
        &dir.join(GEN_FILE),
        serde_json::to_string_pretty(&bundle.gen).expect("serializes"),
    )?;
    bundle.world.graph.save(&dir.join(GRAPH_FILE))?;
    write_file(&dir.join(LANDMARKS_FILE), bundle.world.landmarks_json())?;
    write_instances(&dir.join(INSTANCES_FILE), &bundle.instances)?;
    for store in &bundle.stores {
        store.save(&dir.join(features_file(store.variant())))?;
    }
    for kind in [LexiconKind::Direction, LexiconKind::Object] {
        bundle.lexicon(kind).save(&dir.join(lexicon_file(kind)))?;
    }
    Ok(())
}

/// Loads a world directory with the feature stores of `variants`.
pub fn load_world(dir: &Path, variants: &[PanoVariant]) -> Result<WorldBundle, HarnessError> {
    let gen_path = dir.join(GEN_FILE);
    let gen: GenConfig = serde_json::from_str(&read_file(&gen_path)?)
        .map_err(|e| HarnessError::Data(format!("{}: {e}", gen_path.display())))?;
    let graph = EnvironmentGraph::load(&dir.join(GRAPH_FILE))?;
    let world = World::from_parts(
        gen.world.clone(),
        graph,
        &read_file(&dir.join(LANDMARKS_FILE))?,
    )?;
    let instances = read_instances(&dir.join(INSTANCES_FILE))?;
    let mut stores = Vec::new();
    for &v in variants {
        if v == PanoVariant::None || stores.iter().any(|s: &PanoFeatureStore| s.variant() == v) {
            continue;
        }
        let path = dir.join(features_file(v));
        let store = PanoFeatureStore::load(&path)
            .map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?;
        if store.variant() != v {
            return Err(HarnessError::Data(format!(
                "{} holds {} features",
                path.display(),
                store.variant().as_str()
            )));
        }
        stores.push(store);
    }
    Ok(WorldBundle {
        gen,
        world,
        instances,
        stores,
    })
}

pub fn load_lexicon(world_dir: &Path, kind: LexiconKind) -> Result<MaskLexicon, HarnessError> {
    Ok(MaskLexicon::load(&world_dir.join(lexicon_file(kind)))?)
}

/// Per-dataset and merged splits of the bundle's instances.
pub fn build_splits(
    bundle: &WorldBundle,
    dev: usize,
    test: usize,
    seed: u64,
) -> Result<Vec<Splits>, HarnessError> {
    let spec = bundle.split_spec(dev, test, seed);
    let mut all = make_splits(&bundle.instances, bundle.graph(), &spec, false)?;
    all.extend(make_splits(&bundle.instances, bundle.graph(), &spec, true)?);
    Ok(all)
}

pub fn splits_file(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.json"))
}

pub fn write_splits(splits: &[Splits], dir: &Path) -> Result<(), HarnessError> {
    create_dir(dir)?;
    for s in splits {
        write_file(
            &splits_file(dir, &s.name),
            serde_json::to_string(s).expect("serializes"),
        )?;
    }
    Ok(())
}

pub fn load_splits(path: &Path) -> Result<Splits, HarnessError> {
    serde_json::from_str(&read_file(path)?)
        .map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))
}

/// Instances of one split of one scenario.
pub fn split_instances(splits: &Splits, scenario: Scenario, split: SplitName) -> &[NavInstance] {
    let set = match scenario {
        Scenario::Seen => &splits.seen,
        Scenario::Unseen => &splits.unseen,
    };
    match split {
        SplitName::Train => &set.train,
        SplitName::Dev => &set.dev,
        SplitName::Test => &set.test,
    }
}

/// Trains the tokenizer on the training instructions of a scenario.
pub fn train_bpe(
    splits: &Splits,
    scenario: Scenario,
    vocab_size: usize,
) -> Result<BpeModel, HarnessError> {
    let corpus: Vec<&str> = split_instances(splits, scenario, SplitName::Train)
        .iter()
        .map(|i| i.instruction.as_str())
        .collect();
    Ok(BpeModel::train(&corpus, vocab_size)?)
}

pub fn load_bpe(path: &Path) -> Result<BpeModel, HarnessError> {
    BpeModel::load(path).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))
}

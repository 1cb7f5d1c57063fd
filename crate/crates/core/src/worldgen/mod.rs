//! Procedural cities: a jittered street grid with landmarks, synthetic
//! panorama features, sampled routes, template instructions and
//! seen/unseen splits.

mod city;
pub mod instructions;
pub mod routes;
pub mod splits;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{DatasetTag, EnvError, EnvironmentGraph, NavInstance, NodeIx};
use crate::pano::{PanoError, PanoFeatureStore, PanoVariant};

pub use city::gen_world;
pub use instructions::{
    follow_instruction, gen_instruction, parse_instruction, Clause, InstructionParams,
};
pub use routes::{sample_routes, RouteParams, RouteRegion, RouteSkeleton};
pub use splits::{make_splits, SplitSet, SplitSpec, Splits};

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("degenerate world spec: {0}")]
    Spec(String),

    #[error("could only sample {got} of {wanted} {style} routes")]
    Unsatisfiable {
        style: &'static str,
        got: usize,
        wanted: usize,
    },

    #[error("split error: {0}")]
    Split(String),

    #[error("instruction does not parse: {0}")]
    Parse(String),

    #[error("instruction cannot be followed: {0}")]
    Follow(String),

    #[error(transparent)]
    Env(#[from] EnvError),

    #[error(transparent)]
    Pano(#[from] PanoError),

    #[error("world i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("world json: {0}")]
    Json(#[from] serde_json::Error),
}

pub const LANDMARK_KINDS: [&str; 16] = [
    "bank", "cafe", "pharmacy", "bakery", "hotel", "church", "school", "museum", "theater",
    "library", "gym", "bookstore", "florist", "pizzeria", "market", "laundromat",
];

pub const LANDMARK_COLORS: [&str; 8] = [
    "red", "blue", "green", "yellow", "white", "black", "orange", "brown",
];

pub const LANDMARK_NAMES: [&str; 16] = [
    "lotus", "summit", "harbor", "maple", "orchid", "atlas", "beacon", "cedar", "delta", "ember",
    "falcon", "granite", "juniper", "keystone", "meadow", "nova",
];

/// Generator parameters. Distances are in arbitrary map units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    /// Intersections per row.
    pub cols: usize,
    /// Intersections per column.
    pub rows: usize,
    pub spacing: f64,
    /// Intersection displacement as a fraction of `spacing`.
    pub jitter: f64,
    /// Nodes inserted along every street segment.
    pub mid_nodes: usize,
    /// Lateral displacement of mid-block nodes as a fraction of `spacing`.
    pub bend: f64,
    /// Fraction of grid segments removed (never creating dead ends).
    pub removed_fraction: f64,
    /// Probabilities of a node carrying one and two landmarks.
    pub landmark_one: f64,
    pub landmark_two: f64,
    pub prefinal_dim: usize,
    pub fourth_width: usize,
    pub fourth_channels: usize,
    /// Landmark signature strength in the features.
    pub signal: f64,
    /// Strength of the cue marking slices that look down a street.
    pub road_signal: f64,
    /// Standard deviation of per-node Gaussian feature noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            cols: 10,
            rows: 9,
            spacing: 100.0,
            jitter: 0.12,
            mid_nodes: 2,
            bend: 0.04,
            removed_fraction: 0.1,
            landmark_one: 0.35,
            landmark_two: 0.15,
            prefinal_dim: crate::pano::DEFAULT_PREFINAL_DIM,
            fourth_width: crate::pano::DEFAULT_FOURTH_WIDTH,
            fourth_channels: 2,
            signal: 1.0,
            road_signal: 0.3,
            noise: 0.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub kind: usize,
    pub color: usize,
    pub name: usize,
    /// Direction from the node, degrees clockwise from north.
    pub azimuth: f64,
}

impl Landmark {
    /// Phrase used by instructions of the given style, without article.
    pub fn describe(&self, style: DatasetTag) -> String {
        match style {
            DatasetTag::Touchdown => {
                format!("{} {}", LANDMARK_COLORS[self.color], LANDMARK_KINDS[self.kind])
            }
            DatasetTag::Map2seq => {
                format!("{} {}", LANDMARK_NAMES[self.name], LANDMARK_KINDS[self.kind])
            }
        }
    }
}

/// Words that refer to landmarks; the source of the object lexicon.
pub fn object_words() -> Vec<String> {
    LANDMARK_KINDS
        .iter()
        .chain(LANDMARK_COLORS.iter())
        .chain(LANDMARK_NAMES.iter())
        .map(|s| s.to_string())
        .collect()
}

#[derive(Clone, Debug)]
pub struct World {
    pub spec: WorldSpec,
    pub graph: EnvironmentGraph,
    /// Landmarks per node index.
    pub landmarks: Vec<Vec<Landmark>>,
}

#[derive(Serialize, Deserialize)]
struct LandmarkRecord {
    node: String,
    landmarks: Vec<Landmark>,
}

impl World {
    pub fn landmarks_at(&self, v: NodeIx) -> &[Landmark] {
        &self.landmarks[v]
    }

    pub fn has_landmark(&self, v: NodeIx, description: &str, style: DatasetTag) -> bool {
        self.landmarks[v].iter().any(|l| l.describe(style) == description)
    }

    /// Synthesizes the feature store of one variant.
    pub fn features(&self, variant: PanoVariant) -> Result<PanoFeatureStore, WorldError> {
        city::features(self, variant)
    }

    pub fn landmarks_json(&self) -> String {
        let records: Vec<LandmarkRecord> = (0..self.graph.len())
            .filter(|&v| !self.landmarks[v].is_empty())
            .map(|v| LandmarkRecord {
                node: self.graph.id(v).to_string(),
                landmarks: self.landmarks[v].clone(),
            })
            .collect();
        serde_json::to_string(&records).expect("landmarks serialize")
    }

    pub fn from_parts(
        spec: WorldSpec,
        graph: EnvironmentGraph,
        landmarks_json: &str,
    ) -> Result<Self, WorldError> {
        let records: Vec<LandmarkRecord> = serde_json::from_str(landmarks_json)?;
        let mut landmarks = vec![Vec::new(); graph.len()];
        for r in records {
            for l in &r.landmarks {
                if l.kind >= LANDMARK_KINDS.len()
                    || l.color >= LANDMARK_COLORS.len()
                    || l.name >= LANDMARK_NAMES.len()
                {
                    return Err(WorldError::Spec(format!("landmark table index out of range at `{}`", r.node)));
                }
            }
            landmarks[graph.node(&r.node)?] = r.landmarks;
        }
        Ok(World {
            spec,
            graph,
            landmarks,
        })
    }
}

/// Samples `n` routes of `style` inside `region` and renders an instruction
/// for each. Ids are `{prefix}-{index}`. Routes the generator cannot describe
/// are replaced by further samples.
#[allow(clippy::too_many_arguments)]
pub fn gen_instances(
    world: &World,
    style: DatasetTag,
    n: usize,
    seed: u64,
    region: &RouteRegion,
    route_params: &RouteParams,
    instruction_params: &InstructionParams,
    prefix: &str,
) -> Result<Vec<NavInstance>, WorldError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1257);
    let pool = n + n / 4 + 8;
    let routes = sample_routes(&world.graph, style, pool, seed, region, route_params)?;
    let mut out = Vec::with_capacity(n);
    for sk in routes {
        if out.len() == n {
            break;
        }
        let Ok(text) = gen_instruction(world, &sk, instruction_params, &mut rng) else {
            continue;
        };
        out.push(NavInstance {
            id: format!("{prefix}-{}", out.len()),
            route: sk.route.iter().map(|&v| world.graph.id(v).to_string()).collect(),
            start_heading: sk.start_heading,
            instruction: text,
            dataset_tag: style,
        });
    }
    if out.len() < n {
        return Err(WorldError::Unsatisfiable {
            style: style.as_str(),
            got: out.len(),
            wanted: n,
        });
    }
    Ok(out)
}

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::WorldError;
use crate::env::{DatasetTag, EnvironmentGraph, NavInstance, NodeIx};

/// Boundary polyline (points ordered by `y`) with the unseen area to its
/// east, plus dev/test sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub boundary: Vec<(f64, f64)>,
    pub dev: usize,
    pub test: usize,
    pub seed: u64,
}

impl SplitSpec {
    /// Vertical boundary at `fraction` of the graph's x extent.
    pub fn vertical(graph: &EnvironmentGraph, fraction: f64, dev: usize, test: usize, seed: u64) -> Self {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for v in 0..graph.len() {
            let (x, y) = graph.coords(v);
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        let x = x0 + fraction * (x1 - x0);
        SplitSpec {
            boundary: vec![(x, y0 - 1.0), (x, y1 + 1.0)],
            dev,
            test,
            seed,
        }
    }

    fn boundary_x(&self, y: f64) -> f64 {
        let b = &self.boundary;
        if y <= b[0].1 {
            return b[0].0;
        }
        for w in b.windows(2) {
            let ((xa, ya), (xb, yb)) = (w[0], w[1]);
            if y <= yb {
                let t = if yb > ya { (y - ya) / (yb - ya) } else { 0.0 };
                return xa + t * (xb - xa);
            }
        }
        b[b.len() - 1].0
    }

    /// True for nodes in the unseen (east) area.
    pub fn is_unseen(&self, graph: &EnvironmentGraph, v: NodeIx) -> bool {
        let (x, y) = graph.coords(v);
        x > self.boundary_x(y)
    }

    pub fn unseen_mask(&self, graph: &EnvironmentGraph) -> Vec<bool> {
        (0..graph.len()).map(|v| self.is_unseen(graph, v)).collect()
    }

    fn validate(&self, graph: &EnvironmentGraph) -> Result<(), WorldError> {
        if self.boundary.len() < 2 || self.boundary.windows(2).any(|w| w[1].1 < w[0].1) {
            return Err(WorldError::Split("boundary needs at least two points ordered by y".into()));
        }
        let unseen = (0..graph.len()).filter(|&v| self.is_unseen(graph, v)).count();
        if unseen == 0 || unseen == graph.len() {
            return Err(WorldError::Split("boundary leaves one side empty".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitSet {
    pub train: Vec<NavInstance>,
    pub dev: Vec<NavInstance>,
    pub test: Vec<NavInstance>,
}

/// Both scenarios for one dataset (or the merged union).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub name: String,
    pub seen: SplitSet,
    pub unseen: SplitSet,
    /// Instances dropped from the unseen scenario for crossing the boundary.
    pub crossing: usize,
}

fn split_one(
    name: String,
    instances: &[NavInstance],
    graph: &EnvironmentGraph,
    spec: &SplitSpec,
) -> Result<Splits, WorldError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut west = Vec::new();
    let mut east = Vec::new();
    let mut crossing = 0;
    for inst in instances {
        let nodes = inst.resolve(graph)?;
        let sides: Vec<bool> = nodes.iter().map(|&v| spec.is_unseen(graph, v)).collect();
        if sides.iter().all(|&s| s) {
            east.push(inst.clone());
        } else if sides.iter().all(|&s| !s) {
            west.push(inst.clone());
        } else {
            crossing += 1;
        }
    }
    if west.is_empty() || east.is_empty() {
        return Err(WorldError::Split(format!(
            "`{name}`: {} routes west and {} east of the boundary",
            west.len(),
            east.len()
        )));
    }
    east.shuffle(&mut rng);
    let dev_n = spec.dev.min(east.len() / 2);
    let test_n = spec.test.min(east.len() - dev_n);
    let unseen = SplitSet {
        train: west,
        dev: east[..dev_n].to_vec(),
        test: east[dev_n..dev_n + test_n].to_vec(),
    };

    let mut all = instances.to_vec();
    all.shuffle(&mut rng);
    if all.len() < spec.dev + spec.test + 1 {
        return Err(WorldError::Split(format!(
            "`{name}`: {} instances cannot fill dev {} and test {}",
            all.len(),
            spec.dev,
            spec.test
        )));
    }
    let test = all.split_off(all.len() - spec.test);
    let dev = all.split_off(all.len() - spec.dev);
    let seen = SplitSet {
        train: all,
        dev,
        test,
    };
    Ok(Splits {
        name,
        seen,
        unseen,
        crossing,
    })
}

/// Builds seen and unseen splits. Unseen: train keeps routes entirely west of
/// the boundary, dev/test are drawn from routes entirely east, crossing routes
/// are dropped. Seen: a random split ignoring geography. With `merged` all
/// datasets share one split; otherwise each dataset tag is split on its own.
pub fn make_splits(
    instances: &[NavInstance],
    graph: &EnvironmentGraph,
    spec: &SplitSpec,
    merged: bool,
) -> Result<Vec<Splits>, WorldError> {
    spec.validate(graph)?;
    if merged {
        return Ok(vec![split_one("merged".into(), instances, graph, spec)?]);
    }
    let mut by_tag: BTreeMap<DatasetTag, Vec<NavInstance>> = BTreeMap::new();
    for inst in instances {
        by_tag.entry(inst.dataset_tag).or_default().push(inst.clone());
    }
    by_tag
        .into_iter()
        .map(|(tag, insts)| split_one(tag.as_str().into(), &insts, graph, spec))
        .collect()
}

use std::collections::VecDeque;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::WorldError;
use crate::env::{signed_delta, DatasetTag, EnvironmentGraph, NodeIx};

/// Route length bounds in nodes and the intersection requirement for
/// shortest-path routes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteParams {
    pub min_len: usize,
    pub max_len: usize,
    pub min_intersections: usize,
    /// Probability of continuing straight where the sampler has a choice.
    pub straight_bias: f64,
}

impl Default for RouteParams {
    fn default() -> Self {
        RouteParams {
            min_len: 15,
            max_len: 25,
            min_intersections: 3,
            straight_bias: 0.7,
        }
    }
}

/// Nodes a sampled route may visit.
#[derive(Clone, Debug, PartialEq)]
pub struct RouteRegion {
    allowed: Vec<bool>,
}

impl RouteRegion {
    pub fn all(graph: &EnvironmentGraph) -> Self {
        RouteRegion {
            allowed: vec![true; graph.len()],
        }
    }

    pub fn from_mask(allowed: Vec<bool>) -> Self {
        RouteRegion { allowed }
    }

    pub fn contains(&self, v: NodeIx) -> bool {
        self.allowed.get(v).copied().unwrap_or(false)
    }

    fn nodes(&self) -> Vec<NodeIx> {
        (0..self.allowed.len()).filter(|&v| self.allowed[v]).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RouteSkeleton {
    pub route: Vec<NodeIx>,
    pub start_heading: f64,
    pub style: DatasetTag,
}

fn is_intersection(graph: &EnvironmentGraph, v: NodeIx) -> bool {
    graph.out_degree(v) >= 3
}

/// The out-edge an agent arriving with `heading` would continue on, if it is
/// roughly straight ahead.
fn straight_next(graph: &EnvironmentGraph, v: NodeIx, heading: f64) -> Option<NodeIx> {
    let e = graph.closest_edge(v, heading).ok()?;
    (signed_delta(heading, e.angle).abs() <= 45.0).then_some(e.target)
}

fn angle(graph: &EnvironmentGraph, a: NodeIx, b: NodeIx) -> f64 {
    graph.edge_to(a, b).expect("route edge").angle
}

fn distances_to(graph: &EnvironmentGraph, target: NodeIx) -> Vec<usize> {
    let mut rev = vec![Vec::new(); graph.len()];
    for v in 0..graph.len() {
        for e in graph.out_edges(v).expect("valid node") {
            rev[e.target].push(v);
        }
    }
    let mut dist = vec![usize::MAX; graph.len()];
    dist[target] = 0;
    let mut queue = VecDeque::from([target]);
    while let Some(v) = queue.pop_front() {
        for &u in &rev[v] {
            if dist[u] == usize::MAX {
                dist[u] = dist[v] + 1;
                queue.push_back(u);
            }
        }
    }
    dist
}

fn sample_shortest(
    graph: &EnvironmentGraph,
    region: &RouteRegion,
    params: &RouteParams,
    nodes: &[NodeIx],
    rng: &mut ChaCha8Rng,
) -> Option<RouteSkeleton> {
    let s = *nodes.choose(rng)?;
    let t = *nodes.choose(rng)?;
    let dist = distances_to(graph, t);
    let d = dist[s];
    if d == usize::MAX || d + 1 < params.min_len || d + 1 > params.max_len {
        return None;
    }
    let mut route = vec![s];
    let mut v = s;
    while v != t {
        let options: Vec<NodeIx> = graph
            .out_edges(v)
            .ok()?
            .iter()
            .map(|e| e.target)
            .filter(|&u| dist[u] + 1 == dist[v] && region.contains(u))
            .collect();
        let straight = (route.len() >= 2)
            .then(|| straight_next(graph, v, angle(graph, route[route.len() - 2], v)))
            .flatten()
            .filter(|u| options.contains(u));
        let next = match straight {
            Some(u) if rng.random::<f64>() < params.straight_bias => u,
            _ => *options.choose(rng)?,
        };
        route.push(next);
        v = next;
    }
    let inner = route[1..route.len() - 1]
        .iter()
        .filter(|&&u| is_intersection(graph, u))
        .count();
    if inner < params.min_intersections {
        return None;
    }
    let start_heading = angle(graph, route[0], route[1]);
    Some(RouteSkeleton {
        route,
        start_heading,
        style: DatasetTag::Map2seq,
    })
}

fn sample_walk(
    graph: &EnvironmentGraph,
    region: &RouteRegion,
    params: &RouteParams,
    nodes: &[NodeIx],
    rng: &mut ChaCha8Rng,
) -> Option<RouteSkeleton> {
    let len = rng.random_range(params.min_len..=params.max_len);
    let s = *nodes.choose(rng)?;
    let mut route = vec![s];
    let mut visited = vec![false; graph.len()];
    visited[s] = true;
    while route.len() < len {
        let v = *route.last().expect("non-empty");
        let options: Vec<NodeIx> = graph
            .out_edges(v)
            .ok()?
            .iter()
            .map(|e| e.target)
            .filter(|&u| !visited[u] && region.contains(u))
            .collect();
        if options.is_empty() {
            return None;
        }
        let straight = (route.len() >= 2)
            .then(|| straight_next(graph, v, angle(graph, route[route.len() - 2], v)))
            .flatten()
            .filter(|u| options.contains(u));
        let next = match straight {
            Some(u) if !is_intersection(graph, v) || rng.random::<f64>() < params.straight_bias => u,
            _ => *options.choose(rng)?,
        };
        visited[next] = true;
        route.push(next);
    }
    let start_heading = graph.out_edges(s).ok()?.choose(rng)?.angle;
    Some(RouteSkeleton {
        route,
        start_heading,
        style: DatasetTag::Touchdown,
    })
}

/// Samples `n` routes of the given style inside `region`.
///
/// Map2seq-style routes are shortest paths through at least
/// `min_intersections` intersections and start facing their first edge.
/// Touchdown-style routes are self-avoiding walks with a random start
/// heading.
pub fn sample_routes(
    graph: &EnvironmentGraph,
    style: DatasetTag,
    n: usize,
    seed: u64,
    region: &RouteRegion,
    params: &RouteParams,
) -> Result<Vec<RouteSkeleton>, WorldError> {
    if params.min_len < 2 || params.min_len > params.max_len {
        return Err(WorldError::Spec(format!(
            "route length bounds {}..={}",
            params.min_len, params.max_len
        )));
    }
    let nodes = region.nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let budget = 2000 + n * 400;
    for _ in 0..budget {
        if out.len() == n {
            break;
        }
        let r = match style {
            DatasetTag::Map2seq => sample_shortest(graph, region, params, &nodes, &mut rng),
            DatasetTag::Touchdown => sample_walk(graph, region, params, &nodes, &mut rng),
        };
        if let Some(r) = r {
            out.push(r);
        }
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

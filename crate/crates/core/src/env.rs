//! Directed street graph with compass-angle edges and the agent state machine.
//!
//! Angles are degrees clockwise from north in `[0, 360)`. Nodes are addressed
//! by dense indices; string ids exist only at the file boundary.

use std::collections::{HashMap, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeIx = usize;

/// Angular tolerance used when matching a heading against edge angles.
pub const ANGLE_EPS: f64 = 1e-9;

pub const DEFAULT_MAX_STEPS: usize = 80;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("node index {0} out of range")]
    NodeIndex(NodeIx),

    #[error("heading {heading} is not an outgoing edge angle of node `{node}`")]
    InvalidState { node: String, heading: f64 },

    #[error("policy returned invalid action code {0}")]
    InvalidAction(i64),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid instance `{id}`: {detail}")]
    InvalidInstance { id: String, detail: String },

    #[error("nodes `{0}` and `{1}` are not connected")]
    Unreachable(String, String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at {location}: {source}")]
    Parse {
        location: String,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Action {
    Forward = 0,
    Left = 1,
    Right = 2,
    Stop = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Forward, Action::Left, Action::Right, Action::Stop];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: i64) -> Result<Action, EnvError> {
        match code {
            0 => Ok(Action::Forward),
            1 => Ok(Action::Left),
            2 => Ok(Action::Right),
            3 => Ok(Action::Stop),
            other => Err(EnvError::InvalidAction(other)),
        }
    }
}

impl From<Action> for u8 {
    fn from(a: Action) -> u8 {
        a.code()
    }
}

impl TryFrom<u8> for Action {
    type Error = EnvError;
    fn try_from(v: u8) -> Result<Self, EnvError> {
        Action::from_code(v as i64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentState {
    pub node: NodeIx,
    pub heading: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub target: NodeIx,
    pub angle: f64,
}

/// Normalizes any angle into `[0, 360)`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(360.0);
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// Signed rotation from `from` to `to` in `(-180, 180]`; positive is clockwise.
pub fn signed_delta(from: f64, to: f64) -> f64 {
    let raw = (to - from).rem_euclid(360.0);
    if raw > 180.0 {
        raw - 360.0
    } else {
        raw
    }
}

/// Heading change normalized to `(-1, 1]`; negative values are left turns.
pub fn heading_delta(prev_heading: f64, new_heading: f64) -> f64 {
    signed_delta(prev_heading, new_heading) / 180.0
}

/// Bucket of out-degree: `<=2 -> 0`, `3 -> 1`, `4 -> 2`, `>4 -> 3`.
pub fn junction_bucket(out_degree: usize) -> usize {
    match out_degree {
        0..=2 => 0,
        3 => 1,
        4 => 2,
        _ => 3,
    }
}

#[derive(Clone, Debug)]
pub struct EnvironmentGraph {
    ids: Vec<String>,
    index: HashMap<String, NodeIx>,
    coords: Vec<(f64, f64)>,
    pano: Vec<String>,
    edges: Vec<Vec<Edge>>,
    undirected: Vec<Vec<NodeIx>>,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    nodes: Vec<NodeRecord>,
    edges: Vec<EdgeRecord>,
}

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    id: String,
    x: f64,
    y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pano: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct EdgeRecord {
    from: String,
    to: String,
    angle: f64,
}

impl EnvironmentGraph {
    /// Builds and validates a graph. `edges` holds `(from, to, angle)` triples.
    pub fn new(
        nodes: Vec<(String, f64, f64)>,
        edges: Vec<(NodeIx, NodeIx, f64)>,
    ) -> Result<Self, EnvError> {
        let mut index = HashMap::with_capacity(nodes.len());
        let mut ids = Vec::with_capacity(nodes.len());
        let mut coords = Vec::with_capacity(nodes.len());
        for (i, (id, x, y)) in nodes.into_iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(EnvError::InvalidGraph(format!("duplicate node id `{id}`")));
            }
            ids.push(id);
            coords.push((x, y));
        }
        let n = ids.len();
        let mut out = vec![Vec::new(); n];
        for (from, to, angle) in edges {
            if from >= n || to >= n {
                return Err(EnvError::InvalidGraph(format!("edge {from}->{to} leaves the node set")));
            }
            if !angle.is_finite() {
                return Err(EnvError::InvalidGraph(format!("edge {from}->{to} has angle {angle}")));
            }
            out[from].push(Edge {
                target: to,
                angle: normalize_angle(angle),
            });
        }
        for (v, list) in out.iter_mut().enumerate() {
            if list.is_empty() {
                return Err(EnvError::InvalidGraph(format!("node `{}` has no outgoing edge", ids[v])));
            }
            list.sort_by(|a, b| a.angle.total_cmp(&b.angle));
            for w in list.windows(2) {
                if (w[1].angle - w[0].angle).abs() < ANGLE_EPS {
                    return Err(EnvError::InvalidGraph(format!(
                        "node `{}` has two edges at {}",
                        ids[v], w[0].angle
                    )));
                }
            }
        }
        let mut undirected: Vec<Vec<NodeIx>> = vec![Vec::new(); n];
        for (v, list) in out.iter().enumerate() {
            for e in list {
                undirected[v].push(e.target);
                undirected[e.target].push(v);
            }
        }
        for nb in &mut undirected {
            nb.sort_unstable();
            nb.dedup();
        }
        let pano = ids.clone();
        Ok(EnvironmentGraph {
            ids,
            index,
            coords,
            pano,
            edges: out,
            undirected,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self, EnvError> {
        let file: GraphFile = serde_json::from_str(text).map_err(|source| EnvError::Parse {
            location: "graph".into(),
            source,
        })?;
        let pano: Vec<Option<String>> = file.nodes.iter().map(|n| n.pano.clone()).collect();
        let nodes: Vec<_> = file.nodes.into_iter().map(|n| (n.id, n.x, n.y)).collect();
        let lookup: HashMap<&str, usize> =
            nodes.iter().enumerate().map(|(i, n)| (n.0.as_str(), i)).collect();
        let mut edges = Vec::with_capacity(file.edges.len());
        for e in &file.edges {
            let from = *lookup
                .get(e.from.as_str())
                .ok_or_else(|| EnvError::UnknownNode(e.from.clone()))?;
            let to = *lookup
                .get(e.to.as_str())
                .ok_or_else(|| EnvError::UnknownNode(e.to.clone()))?;
            edges.push((from, to, e.angle));
        }
        let mut g = EnvironmentGraph::new(nodes, edges)?;
        for (i, p) in pano.into_iter().enumerate() {
            if let Some(p) = p {
                g.pano[i] = p;
            }
        }
        Ok(g)
    }

    pub fn to_json_string(&self) -> String {
        let nodes = (0..self.len())
            .map(|v| NodeRecord {
                id: self.ids[v].clone(),
                x: self.coords[v].0,
                y: self.coords[v].1,
                pano: (self.pano[v] != self.ids[v]).then(|| self.pano[v].clone()),
            })
            .collect();
        let edges = (0..self.len())
            .flat_map(|v| {
                self.edges[v].iter().map(move |e| EdgeRecord {
                    from: self.ids[v].clone(),
                    to: self.ids[e.target].clone(),
                    angle: e.angle,
                })
            })
            .collect();
        serde_json::to_string(&GraphFile { nodes, edges }).expect("graph serializes")
    }

    pub fn load(path: &Path) -> Result<Self, EnvError> {
        EnvironmentGraph::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), EnvError> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, v: NodeIx) -> &str {
        &self.ids[v]
    }

    pub fn node(&self, id: &str) -> Result<NodeIx, EnvError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| EnvError::UnknownNode(id.to_string()))
    }

    pub fn coords(&self, v: NodeIx) -> (f64, f64) {
        self.coords[v]
    }

    pub fn pano_ref(&self, v: NodeIx) -> &str {
        &self.pano[v]
    }

    fn check(&self, v: NodeIx) -> Result<(), EnvError> {
        if v < self.len() {
            Ok(())
        } else {
            Err(EnvError::NodeIndex(v))
        }
    }

    /// Outgoing edges sorted by ascending angle.
    pub fn out_edges(&self, v: NodeIx) -> Result<&[Edge], EnvError> {
        self.check(v)?;
        Ok(&self.edges[v])
    }

    pub fn out_degree(&self, v: NodeIx) -> usize {
        self.edges[v].len()
    }

    /// Neighbors ignoring edge direction, sorted.
    pub fn undirected_neighbors(&self, v: NodeIx) -> &[NodeIx] {
        &self.undirected[v]
    }

    pub fn edge_to(&self, from: NodeIx, to: NodeIx) -> Option<Edge> {
        self.edges.get(from)?.iter().copied().find(|e| e.target == to)
    }

    /// Outgoing edge with the smallest circular distance to `target_angle`;
    /// an exact tie goes to the clockwise candidate.
    pub fn closest_edge(&self, v: NodeIx, target_angle: f64) -> Result<Edge, EnvError> {
        self.check(v)?;
        let target = normalize_angle(target_angle);
        let mut best: Option<(Edge, f64)> = None;
        for &e in &self.edges[v] {
            let d = signed_delta(target, e.angle);
            best = match best {
                None => Some((e, d)),
                Some((b, bd)) => {
                    let (da, db) = (d.abs(), bd.abs());
                    if da < db - ANGLE_EPS || ((da - db).abs() <= ANGLE_EPS && d > bd) {
                        Some((e, d))
                    } else {
                        Some((b, bd))
                    }
                }
            };
        }
        Ok(best.expect("out-degree >= 1").0)
    }

    fn heading_slot(&self, state: AgentState) -> Result<usize, EnvError> {
        self.check(state.node)?;
        self.edges[state.node]
            .iter()
            .position(|e| (e.angle - state.heading).abs() < ANGLE_EPS)
            .ok_or_else(|| EnvError::InvalidState {
                node: self.ids[state.node].clone(),
                heading: state.heading,
            })
    }

    pub fn validate_state(&self, state: AgentState) -> Result<(), EnvError> {
        self.heading_slot(state).map(|_| ())
    }

    /// Applies a movement or rotation. `Stop` leaves the state unchanged.
    pub fn step(&self, state: AgentState, action: Action) -> Result<AgentState, EnvError> {
        let slot = self.heading_slot(state)?;
        let edges = &self.edges[state.node];
        let k = edges.len();
        Ok(match action {
            Action::Forward => {
                let u = edges[slot].target;
                let e = self.closest_edge(u, state.heading)?;
                AgentState {
                    node: u,
                    heading: e.angle,
                }
            }
            Action::Left => AgentState {
                node: state.node,
                heading: edges[(slot + k - 1) % k].angle,
            },
            Action::Right => AgentState {
                node: state.node,
                heading: edges[(slot + 1) % k].angle,
            },
            Action::Stop => state,
        })
    }

    pub fn junction_category(&self, v: NodeIx) -> Result<usize, EnvError> {
        self.check(v)?;
        Ok(junction_bucket(self.edges[v].len()))
    }

    /// Undirected hop distances from `source` to every node (`None` when
    /// unreachable).
    pub fn hops_from(&self, source: NodeIx) -> Result<Vec<Option<usize>>, EnvError> {
        self.check(source)?;
        let mut dist = vec![None; self.len()];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(v) = queue.pop_front() {
            let d = dist[v].expect("queued nodes have a distance");
            for &u in &self.undirected[v] {
                if dist[u].is_none() {
                    dist[u] = Some(d + 1);
                    queue.push_back(u);
                }
            }
        }
        Ok(dist)
    }

    pub fn hop_distance(&self, a: NodeIx, b: NodeIx) -> Result<usize, EnvError> {
        self.check(b)?;
        self.hops_from(a)?[b]
            .ok_or_else(|| EnvError::Unreachable(self.ids[a].clone(), self.ids[b].clone()))
    }

    pub fn is_success(&self, stop: NodeIx, goal: NodeIx) -> Result<bool, EnvError> {
        self.check(stop)?;
        self.check(goal)?;
        Ok(stop == goal || self.undirected[stop].binary_search(&goal).is_ok())
    }

    /// Directed shortest path by BFS; neighbors are expanded in angle order.
    pub fn shortest_path(&self, from: NodeIx, to: NodeIx) -> Result<Vec<NodeIx>, EnvError> {
        self.check(from)?;
        self.check(to)?;
        let mut prev = vec![usize::MAX; self.len()];
        prev[from] = from;
        let mut queue = VecDeque::from([from]);
        while let Some(v) = queue.pop_front() {
            if v == to {
                break;
            }
            for e in &self.edges[v] {
                if prev[e.target] == usize::MAX {
                    prev[e.target] = v;
                    queue.push_back(e.target);
                }
            }
        }
        if prev[to] == usize::MAX {
            return Err(EnvError::Unreachable(self.ids[from].clone(), self.ids[to].clone()));
        }
        let mut path = vec![to];
        let mut v = to;
        while v != from {
            v = prev[v];
            path.push(v);
        }
        path.reverse();
        Ok(path)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetTag {
    Touchdown,
    Map2seq,
}

impl DatasetTag {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetTag::Touchdown => "touchdown",
            DatasetTag::Map2seq => "map2seq",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NavInstance {
    pub id: String,
    pub route: Vec<String>,
    pub start_heading: f64,
    pub instruction: String,
    pub dataset_tag: DatasetTag,
}

impl NavInstance {
    pub fn goal(&self) -> &str {
        self.route.last().map(String::as_str).unwrap_or("")
    }

    /// Resolves the route to node indices and checks that it is a valid walk
    /// starting at an outgoing edge angle.
    pub fn resolve(&self, graph: &EnvironmentGraph) -> Result<Vec<NodeIx>, EnvError> {
        let bad = |detail: String| EnvError::InvalidInstance {
            id: self.id.clone(),
            detail,
        };
        if self.route.len() < 2 {
            return Err(bad(format!("route has {} nodes", self.route.len())));
        }
        let route = self
            .route
            .iter()
            .map(|n| graph.node(n))
            .collect::<Result<Vec<_>, _>>()?;
        for w in route.windows(2) {
            if graph.edge_to(w[0], w[1]).is_none() {
                return Err(bad(format!("no edge {} -> {}", graph.id(w[0]), graph.id(w[1]))));
            }
        }
        graph
            .validate_state(AgentState {
                node: route[0],
                heading: self.start_heading,
            })
            .map_err(|e| bad(e.to_string()))?;
        Ok(route)
    }

    pub fn start_state(&self, graph: &EnvironmentGraph) -> Result<AgentState, EnvError> {
        let node = graph.node(&self.route[0])?;
        let state = AgentState {
            node,
            heading: self.start_heading,
        };
        graph.validate_state(state)?;
        Ok(state)
    }
}

pub fn read_instances(path: &Path) -> Result<Vec<NavInstance>, EnvError> {
    read_jsonl(path)
}

pub fn write_instances(path: &Path, instances: &[NavInstance]) -> Result<(), EnvError> {
    write_jsonl(path, instances)
}

pub(crate) fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, EnvError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| EnvError::Parse {
            location: format!("{}:{}", path.display(), i + 1),
            source,
        })?);
    }
    Ok(out)
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), EnvError> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item).expect("record serializes");
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// What the policy observes before choosing the action of step `t` (0-based).
#[derive(Clone, Copy, Debug)]
pub struct StepContext {
    pub t: usize,
    pub state: AgentState,
    pub heading_delta: f64,
    pub junction_category: usize,
    pub prev_action: Option<Action>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub state: AgentState,
    pub action: Action,
    pub heading_delta: f64,
    pub junction_category: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Stopped,
    StepLimit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
    pub terminated: Termination,
    /// State after the last action; the stopping point for metrics.
    pub final_state: AgentState,
}

impl Trajectory {
    pub fn final_node(&self) -> NodeIx {
        self.final_state.node
    }

    /// Visited nodes in order with rotation-only repeats collapsed.
    pub fn path(&self) -> Vec<NodeIx> {
        let mut path: Vec<NodeIx> = Vec::with_capacity(self.steps.len() + 1);
        for s in self
            .steps
            .iter()
            .map(|s| s.state.node)
            .chain(std::iter::once(self.final_state.node))
        {
            if path.last() != Some(&s) {
                path.push(s);
            }
        }
        path
    }

    pub fn actions(&self) -> Vec<Action> {
        self.steps.iter().map(|s| s.action).collect()
    }
}

/// Runs `policy` from the instance start until it stops or `max_steps`
/// actions were taken. The policy returns a raw action code.
pub fn run_episode<P>(
    graph: &EnvironmentGraph,
    instance: &NavInstance,
    mut policy: P,
    max_steps: usize,
) -> Result<Trajectory, EnvError>
where
    P: FnMut(&StepContext) -> i64,
{
    let start = instance.start_state(graph)?;
    let mut stepper = EpisodeStepper::new(graph, start, max_steps)?;
    while !stepper.done() {
        let ctx = stepper.context();
        let action = Action::from_code(policy(&ctx))?;
        stepper.apply(action)?;
    }
    Ok(stepper.finish())
}

/// Incremental episode driver, for callers that advance many episodes in
/// lockstep.
#[derive(Clone, Debug)]
pub struct EpisodeStepper<'g> {
    graph: &'g EnvironmentGraph,
    state: AgentState,
    prev_heading: Option<f64>,
    prev_action: Option<Action>,
    steps: Vec<StepRecord>,
    max_steps: usize,
    stopped: bool,
}

impl<'g> EpisodeStepper<'g> {
    pub fn new(
        graph: &'g EnvironmentGraph,
        start: AgentState,
        max_steps: usize,
    ) -> Result<Self, EnvError> {
        if max_steps == 0 {
            return Err(EnvError::InvalidGraph("max_steps must be at least 1".into()));
        }
        graph.validate_state(start)?;
        Ok(EpisodeStepper {
            graph,
            state: start,
            prev_heading: None,
            prev_action: None,
            steps: Vec::new(),
            max_steps,
            stopped: false,
        })
    }

    pub fn done(&self) -> bool {
        self.stopped || self.steps.len() >= self.max_steps
    }

    pub fn context(&self) -> StepContext {
        StepContext {
            t: self.steps.len(),
            state: self.state,
            heading_delta: self
                .prev_heading
                .map(|p| heading_delta(p, self.state.heading))
                .unwrap_or(0.0),
            junction_category: junction_bucket(self.graph.out_degree(self.state.node)),
            prev_action: self.prev_action,
        }
    }

    pub fn apply(&mut self, action: Action) -> Result<(), EnvError> {
        if self.done() {
            return Ok(());
        }
        let ctx = self.context();
        self.steps.push(StepRecord {
            state: self.state,
            action,
            heading_delta: ctx.heading_delta,
            junction_category: ctx.junction_category,
        });
        self.prev_action = Some(action);
        if action == Action::Stop {
            self.stopped = true;
        } else {
            self.prev_heading = Some(self.state.heading);
            self.state = self.graph.step(self.state, action)?;
        }
        Ok(())
    }

    pub fn finish(self) -> Trajectory {
        Trajectory {
            terminated: if self.stopped {
                Termination::Stopped
            } else {
                Termination::StepLimit
            },
            final_state: self.state,
            steps: self.steps,
        }
    }
}

/// Action sequence that walks `route` from `start_heading`: rotate toward
/// each next edge by the fewest steps (a tie goes right), move forward, and
/// stop at the end.
pub fn gold_actions(
    graph: &EnvironmentGraph,
    route: &[NodeIx],
    start_heading: f64,
) -> Result<Vec<Action>, EnvError> {
    let mut state = AgentState {
        node: route[0],
        heading: start_heading,
    };
    graph.validate_state(state)?;
    let mut actions = Vec::new();
    for &next in &route[1..] {
        let edges = graph.out_edges(state.node)?;
        let k = edges.len();
        let cur = edges
            .iter()
            .position(|e| (e.angle - state.heading).abs() < ANGLE_EPS)
            .expect("validated heading");
        let want = edges.iter().position(|e| e.target == next).ok_or_else(|| {
            EnvError::InvalidGraph(format!(
                "route step {} -> {} has no edge",
                graph.id(state.node),
                graph.id(next)
            ))
        })?;
        let rights = (want + k - cur) % k;
        let lefts = (cur + k - want) % k;
        let (action, n) = if rights <= lefts {
            (Action::Right, rights)
        } else {
            (Action::Left, lefts)
        };
        for _ in 0..n {
            state = graph.step(state, action)?;
            actions.push(action);
        }
        state = graph.step(state, Action::Forward)?;
        actions.push(Action::Forward);
    }
    actions.push(Action::Stop);
    Ok(actions)
}

/// One trajectory per line: steps with node id, heading, action code,
/// heading delta and junction category.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub instance_id: String,
    pub terminated: Termination,
    pub final_node: String,
    pub steps: Vec<StepLog>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub node: String,
    pub heading: f64,
    pub action: u8,
    pub heading_delta: f64,
    pub junction_category: usize,
}

impl TrajectoryLog {
    pub fn from_trajectory(graph: &EnvironmentGraph, instance_id: &str, t: &Trajectory) -> Self {
        TrajectoryLog {
            instance_id: instance_id.to_string(),
            terminated: t.terminated,
            final_node: graph.id(t.final_node()).to_string(),
            steps: t
                .steps
                .iter()
                .map(|s| StepLog {
                    node: graph.id(s.state.node).to_string(),
                    heading: s.state.heading,
                    action: s.action.code(),
                    heading_delta: s.heading_delta,
                    junction_category: s.junction_category,
                })
                .collect(),
        }
    }

    /// Visited node ids with rotation-only repeats collapsed.
    pub fn path(&self) -> Vec<&str> {
        let mut path: Vec<&str> = Vec::new();
        for n in self
            .steps
            .iter()
            .map(|s| s.node.as_str())
            .chain(std::iter::once(self.final_node.as_str()))
        {
            if path.last() != Some(&n) {
                path.push(n);
            }
        }
        path
    }
}

pub fn read_trajectories(path: &Path) -> Result<Vec<TrajectoryLog>, EnvError> {
    read_jsonl(path)
}

pub fn write_trajectories(path: &Path, logs: &[TrajectoryLog]) -> Result<(), EnvError> {
    write_jsonl(path, logs)
}

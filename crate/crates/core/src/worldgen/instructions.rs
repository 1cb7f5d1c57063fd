//! Template instruction grammar: rendering from routes, parsing back into
//! clauses and following clauses in the environment.
//!
//! An instruction is a sequence of sentences. Touchdown-style text opens with
//! an orientation sentence. Every turn sentence names where to turn, counted
//! from the previous turn (or the start), and the last sentence says where to
//! stop. Intersections are nodes with at least three outgoing edges.

use rand::seq::IndexedRandom;
use rand::Rng;

use super::routes::RouteSkeleton;
use super::{World, WorldError, LANDMARK_COLORS, LANDMARK_KINDS, LANDMARK_NAMES};
use crate::env::{
    signed_delta, Action, AgentState, DatasetTag, EnvironmentGraph, NodeIx, ANGLE_EPS,
};

/// Turns sharper than this are described as left/right.
const TURN_THRESHOLD: f64 = 45.0;
const MAX_FOLLOW_MOVES: usize = 400;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dir {
    Left,
    Right,
}

impl Dir {
    fn word(self) -> &'static str {
        match self {
            Dir::Left => "left",
            Dir::Right => "right",
        }
    }

    fn parse(w: &str) -> Option<Dir> {
        match w {
            "left" => Some(Dir::Left),
            "right" => Some(Dir::Right),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Place {
    /// The `m`-th intersection reached.
    Intersection(usize),
    /// The `m`-th intersection, with a landmark that stands there.
    IntersectionBy(usize, String),
    /// The first node with this landmark.
    Landmark(String),
    /// The first intersection without a street straight ahead.
    EndOfStreet,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Orientation {
    Ahead,
    Around,
    Turn(Dir, usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StopPlace {
    At(Place),
    /// Walk past `after` intersections (0 for none), then `steps` more nodes.
    Steps {
        after: usize,
        steps: usize,
        by: Option<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Clause {
    Orient(Orientation),
    Turn { dir: Dir, at: Place },
    Stop(StopPlace),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    OrientAhead,
    OrientAround,
    OrientOnce,
    OrientTwice,
    TurnInt,
    TurnIntBy,
    TurnLandmark,
    TurnEnd,
    StopInt,
    StopIntBy,
    StopLandmark,
    StopSteps,
    StopStepsBy,
    StopPast,
    StopPastBy,
}

/// Placeholders: `{dir}` one direction word, `{ord}` an ordinal, `{n}` a
/// count, `{d}` a two-word landmark description.
const TEMPLATES: &[(Kind, &str)] = &[
    (Kind::OrientAhead, "you are facing the correct direction"),
    (Kind::OrientAround, "turn around"),
    (Kind::OrientAround, "turn around first"),
    (Kind::OrientOnce, "turn {dir}"),
    (Kind::OrientOnce, "turn to your {dir}"),
    (Kind::OrientTwice, "turn {dir} twice"),
    (Kind::TurnInt, "turn {dir} at the {ord} intersection"),
    (Kind::TurnInt, "at the {ord} intersection , turn {dir}"),
    (Kind::TurnInt, "go straight and turn {dir} at the {ord} intersection"),
    (Kind::TurnIntBy, "turn {dir} at the {ord} intersection , by the {d}"),
    (Kind::TurnIntBy, "at the {ord} intersection , where the {d} is , turn {dir}"),
    (Kind::TurnLandmark, "turn {dir} at the {d}"),
    (Kind::TurnLandmark, "when you reach the {d} , turn {dir}"),
    (Kind::TurnEnd, "turn {dir} at the end of the street"),
    (Kind::TurnEnd, "at the end of the street , turn {dir}"),
    (Kind::StopInt, "stop at the {ord} intersection"),
    (Kind::StopIntBy, "stop at the {ord} intersection , by the {d}"),
    (Kind::StopLandmark, "stop at the {d}"),
    (Kind::StopLandmark, "stop when you reach the {d}"),
    (Kind::StopSteps, "walk {n} and stop"),
    (Kind::StopSteps, "stop after {n}"),
    (Kind::StopStepsBy, "walk {n} and stop at the {d}"),
    (Kind::StopPast, "go past the {ord} intersection and stop {n} later"),
    (Kind::StopPastBy, "go past the {ord} intersection and stop {n} later , at the {d}"),
];

const ORDINALS: [&str; 20] = [
    "first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth", "tenth",
    "eleventh", "twelfth", "thirteenth", "fourteenth", "fifteenth", "sixteenth", "seventeenth",
    "eighteenth", "nineteenth", "twentieth",
];

const NUMBERS: [&str; 20] = [
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven",
    "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen",
    "twenty",
];

fn ordinal_word(m: usize, rng: &mut impl Rng) -> String {
    if m == 1 && rng.random_bool(0.5) {
        "next".into()
    } else if (1..=ORDINALS.len()).contains(&m) {
        ORDINALS[m - 1].into()
    } else {
        format!("{m}th")
    }
}

fn parse_ordinal(w: &str) -> Option<usize> {
    if w == "next" {
        return Some(1);
    }
    if let Some(i) = ORDINALS.iter().position(|o| *o == w) {
        return Some(i + 1);
    }
    w.strip_suffix("th")?.parse().ok().filter(|&m| m > 0)
}

fn count_phrase(n: usize) -> String {
    let num = if (1..=NUMBERS.len()).contains(&n) {
        NUMBERS[n - 1].to_string()
    } else {
        n.to_string()
    };
    if n == 1 {
        format!("{num} step")
    } else {
        format!("{num} steps")
    }
}

fn parse_count(num: &str, unit: &str) -> Option<usize> {
    let n = NUMBERS
        .iter()
        .position(|w| *w == num)
        .map(|i| i + 1)
        .or_else(|| num.parse().ok())?;
    let ok = (n == 1 && unit == "step") || (n != 1 && unit == "steps");
    ok.then_some(n)
}

fn valid_description(a: &str, b: &str) -> bool {
    LANDMARK_KINDS.contains(&b) && (LANDMARK_COLORS.contains(&a) || LANDMARK_NAMES.contains(&a))
}

#[derive(Default)]
struct Slots {
    dir: Option<Dir>,
    ord: Option<usize>,
    n: Option<usize>,
    d: Option<String>,
}

fn match_template(pattern: &str, words: &[&str]) -> Option<Slots> {
    let mut slots = Slots::default();
    let mut i = 0;
    for p in pattern.split(' ') {
        match p {
            "{dir}" => slots.dir = Some(Dir::parse(words.get(i)?)?),
            "{ord}" => slots.ord = Some(parse_ordinal(words.get(i)?)?),
            "{n}" => {
                slots.n = Some(parse_count(words.get(i)?, words.get(i + 1)?)?);
                i += 1;
            }
            "{d}" => {
                let (a, b) = (*words.get(i)?, *words.get(i + 1)?);
                if !valid_description(a, b) {
                    return None;
                }
                slots.d = Some(format!("{a} {b}"));
                i += 1;
            }
            lit => {
                if *words.get(i)? != lit {
                    return None;
                }
            }
        }
        i += 1;
    }
    (i == words.len()).then_some(slots)
}

fn clause_from(kind: Kind, s: Slots) -> Option<Clause> {
    Some(match kind {
        Kind::OrientAhead => Clause::Orient(Orientation::Ahead),
        Kind::OrientAround => Clause::Orient(Orientation::Around),
        Kind::OrientOnce => Clause::Orient(Orientation::Turn(s.dir?, 1)),
        Kind::OrientTwice => Clause::Orient(Orientation::Turn(s.dir?, 2)),
        Kind::TurnInt => Clause::Turn {
            dir: s.dir?,
            at: Place::Intersection(s.ord?),
        },
        Kind::TurnIntBy => Clause::Turn {
            dir: s.dir?,
            at: Place::IntersectionBy(s.ord?, s.d?),
        },
        Kind::TurnLandmark => Clause::Turn {
            dir: s.dir?,
            at: Place::Landmark(s.d?),
        },
        Kind::TurnEnd => Clause::Turn {
            dir: s.dir?,
            at: Place::EndOfStreet,
        },
        Kind::StopInt => Clause::Stop(StopPlace::At(Place::Intersection(s.ord?))),
        Kind::StopIntBy => Clause::Stop(StopPlace::At(Place::IntersectionBy(s.ord?, s.d?))),
        Kind::StopLandmark => Clause::Stop(StopPlace::At(Place::Landmark(s.d?))),
        Kind::StopSteps => Clause::Stop(StopPlace::Steps {
            after: 0,
            steps: s.n?,
            by: None,
        }),
        Kind::StopStepsBy => Clause::Stop(StopPlace::Steps {
            after: 0,
            steps: s.n?,
            by: Some(s.d?),
        }),
        Kind::StopPast => Clause::Stop(StopPlace::Steps {
            after: s.ord?,
            steps: s.n?,
            by: None,
        }),
        Kind::StopPastBy => Clause::Stop(StopPlace::Steps {
            after: s.ord?,
            steps: s.n?,
            by: Some(s.d?),
        }),
    })
}

fn kind_of(c: &Clause) -> Kind {
    match c {
        Clause::Orient(Orientation::Ahead) => Kind::OrientAhead,
        Clause::Orient(Orientation::Around) => Kind::OrientAround,
        Clause::Orient(Orientation::Turn(_, 1)) => Kind::OrientOnce,
        Clause::Orient(Orientation::Turn(_, _)) => Kind::OrientTwice,
        Clause::Turn { at, .. } => match at {
            Place::Intersection(_) => Kind::TurnInt,
            Place::IntersectionBy(..) => Kind::TurnIntBy,
            Place::Landmark(_) => Kind::TurnLandmark,
            Place::EndOfStreet => Kind::TurnEnd,
        },
        Clause::Stop(StopPlace::At(p)) => match p {
            Place::Intersection(_) => Kind::StopInt,
            Place::IntersectionBy(..) => Kind::StopIntBy,
            Place::Landmark(_) | Place::EndOfStreet => Kind::StopLandmark,
        },
        Clause::Stop(StopPlace::Steps { after, by, .. }) => match (after, by) {
            (0, None) => Kind::StopSteps,
            (0, Some(_)) => Kind::StopStepsBy,
            (_, None) => Kind::StopPast,
            (_, Some(_)) => Kind::StopPastBy,
        },
    }
}

fn render_clause(c: &Clause, rng: &mut impl Rng) -> String {
    let kind = kind_of(c);
    let options: Vec<&str> = TEMPLATES
        .iter()
        .filter(|(k, _)| *k == kind)
        .map(|(_, t)| *t)
        .collect();
    let template = *options.choose(rng).expect("every clause kind has a template");
    let (mut dir, mut ord, mut n, mut d) = (None, None, None, None);
    let mut fill = |at: &Place| match at {
        Place::Intersection(m) => ord = Some(*m),
        Place::IntersectionBy(m, desc) => {
            ord = Some(*m);
            d = Some(desc.clone());
        }
        Place::Landmark(desc) => d = Some(desc.clone()),
        Place::EndOfStreet => {}
    };
    match c {
        Clause::Orient(Orientation::Turn(x, _)) => dir = Some(*x),
        Clause::Orient(_) => {}
        Clause::Turn { dir: x, at } => {
            dir = Some(*x);
            fill(at);
        }
        Clause::Stop(StopPlace::At(at)) => fill(at),
        Clause::Stop(StopPlace::Steps { after, steps, by }) => {
            ord = (*after > 0).then_some(*after);
            n = Some(*steps);
            d = by.clone();
        }
    }
    let mut out = String::new();
    for p in template.split(' ') {
        let piece = match p {
            "{dir}" => dir.expect("direction slot").word().to_string(),
            "{ord}" => ordinal_word(ord.expect("ordinal slot"), rng),
            "{n}" => count_phrase(n.expect("count slot")),
            "{d}" => d.clone().expect("description slot"),
            lit => lit.to_string(),
        };
        if piece == "," {
            out.push(',');
        } else {
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(&piece);
        }
    }
    out
}

/// Renders clauses as text: one sentence per clause.
pub fn render_clauses(clauses: &[Clause], rng: &mut impl Rng) -> String {
    let sentences: Vec<String> = clauses.iter().map(|c| render_clause(c, rng)).collect();
    format!("{}.", sentences.join(". "))
}

/// Parses text of the template grammar back into clauses.
pub fn parse_instruction(text: &str) -> Result<Vec<Clause>, WorldError> {
    let lower = text.to_lowercase();
    let mut clauses = Vec::new();
    for sentence in lower.split('.').map(str::trim).filter(|s| !s.is_empty()) {
        let spaced = sentence.replace(',', " , ");
        let words: Vec<&str> = spaced.split_whitespace().collect();
        let clause = TEMPLATES
            .iter()
            .find_map(|(kind, pattern)| match_template(pattern, &words).and_then(|s| clause_from(*kind, s)))
            .ok_or_else(|| WorldError::Parse(format!("unrecognized sentence `{sentence}`")))?;
        clauses.push(clause);
    }
    if clauses.is_empty() {
        return Err(WorldError::Parse("empty instruction".into()));
    }
    Ok(clauses)
}

struct Follower<'w> {
    world: &'w World,
    style: DatasetTag,
    state: AgentState,
    path: Vec<NodeIx>,
    prev: Option<NodeIx>,
    incoming: Option<f64>,
    actions: Vec<Action>,
}

fn is_intersection(g: &EnvironmentGraph, v: NodeIx) -> bool {
    g.out_degree(v) >= 3
}

impl<'w> Follower<'w> {
    fn graph(&self) -> &'w EnvironmentGraph {
        &self.world.graph
    }

    fn act(&mut self, a: Action) -> Result<(), WorldError> {
        if self.actions.len() > MAX_FOLLOW_MOVES {
            return Err(WorldError::Follow("instruction never reaches its target".into()));
        }
        let next = self.graph().step(self.state, a)?;
        if a == Action::Forward {
            self.prev = Some(self.state.node);
            self.incoming = Some(self.state.heading);
            self.path.push(next.node);
        }
        self.state = next;
        self.actions.push(a);
        Ok(())
    }

    fn rotate_to(&mut self, target: f64) -> Result<(), WorldError> {
        let edges = self.graph().out_edges(self.state.node)?;
        let k = edges.len();
        let pos = |a: f64| edges.iter().position(|e| (e.angle - a).abs() < ANGLE_EPS);
        let cur = pos(self.state.heading).expect("valid heading");
        let want = pos(target).expect("target is an edge angle");
        let rights = (want + k - cur) % k;
        let lefts = (cur + k - want) % k;
        let (a, n) = if rights <= lefts {
            (Action::Right, rights)
        } else {
            (Action::Left, lefts)
        };
        for _ in 0..n {
            self.act(a)?;
        }
        Ok(())
    }

    fn straight_exists(&self) -> bool {
        let inc = self.incoming.expect("arrived by a move");
        self.graph()
            .out_edges(self.state.node)
            .expect("valid node")
            .iter()
            .any(|e| Some(e.target) != self.prev && signed_delta(inc, e.angle).abs() <= TURN_THRESHOLD)
    }

    fn advance_until(&mut self, place: &Place) -> Result<(), WorldError> {
        let mut count = 0;
        loop {
            self.act(Action::Forward)?;
            let v = self.state.node;
            let g = self.graph();
            let hit = match place {
                Place::Intersection(m) | Place::IntersectionBy(m, _) => {
                    if is_intersection(g, v) {
                        count += 1;
                    }
                    count == *m
                }
                Place::Landmark(d) => self.world.has_landmark(v, d, self.style),
                Place::EndOfStreet => is_intersection(g, v) && !self.straight_exists(),
            };
            if hit {
                return Ok(());
            }
        }
    }

    fn turn(&mut self, dir: Dir) -> Result<(), WorldError> {
        let inc = self.incoming.expect("arrived by a move");
        let want = match dir {
            Dir::Left => inc - 90.0,
            Dir::Right => inc + 90.0,
        };
        let target = self
            .graph()
            .out_edges(self.state.node)?
            .iter()
            .filter(|e| Some(e.target) != self.prev)
            .min_by(|a, b| {
                signed_delta(want, a.angle)
                    .abs()
                    .total_cmp(&signed_delta(want, b.angle).abs())
            })
            .map(|e| e.angle)
            .ok_or_else(|| WorldError::Follow("no street to turn into".into()))?;
        self.rotate_to(target)
    }

    fn run(&mut self, clauses: &[Clause]) -> Result<(), WorldError> {
        for (i, c) in clauses.iter().enumerate() {
            match c {
                Clause::Orient(o) => {
                    if i != 0 {
                        return Err(WorldError::Follow("orientation after the start".into()));
                    }
                    match o {
                        Orientation::Ahead => {}
                        Orientation::Around => {
                            let e = self.graph().closest_edge(self.state.node, self.state.heading + 180.0)?;
                            self.rotate_to(e.angle)?;
                        }
                        Orientation::Turn(dir, n) => {
                            let a = if *dir == Dir::Left { Action::Left } else { Action::Right };
                            for _ in 0..*n {
                                self.act(a)?;
                            }
                        }
                    }
                }
                Clause::Turn { dir, at } => {
                    self.advance_until(at)?;
                    self.turn(*dir)?;
                }
                Clause::Stop(stop) => {
                    match stop {
                        StopPlace::At(p) => self.advance_until(p)?,
                        StopPlace::Steps { after, steps, .. } => {
                            if *after > 0 {
                                self.advance_until(&Place::Intersection(*after))?;
                            }
                            for _ in 0..*steps {
                                self.act(Action::Forward)?;
                            }
                        }
                    }
                    if i + 1 != clauses.len() {
                        return Err(WorldError::Follow("text continues after stopping".into()));
                    }
                    self.actions.push(Action::Stop);
                    return Ok(());
                }
            }
        }
        Err(WorldError::Follow("instruction has no stop sentence".into()))
    }
}

/// Follows parsed clauses from `start`; returns the visited nodes and the
/// actions taken (ending with stop).
pub fn follow_clauses(
    world: &World,
    style: DatasetTag,
    start: AgentState,
    clauses: &[Clause],
) -> Result<(Vec<NodeIx>, Vec<Action>), WorldError> {
    world.graph.validate_state(start)?;
    let mut f = Follower {
        world,
        style,
        state: start,
        path: vec![start.node],
        prev: None,
        incoming: None,
        actions: Vec::new(),
    };
    f.run(clauses)?;
    Ok((f.path, f.actions))
}

/// Parses `text` and follows it; the scripted reader of the grammar.
pub fn follow_instruction(
    world: &World,
    style: DatasetTag,
    start: AgentState,
    text: &str,
) -> Result<Vec<NodeIx>, WorldError> {
    let clauses = parse_instruction(text)?;
    Ok(follow_clauses(world, style, start, &clauses)?.0)
}

/// Knobs of instruction generation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InstructionParams {
    /// Chance that a place is named only by its landmark.
    pub landmark_only: f64,
    /// Chance that an intersection reference also mentions a landmark.
    pub landmark_mention: f64,
    /// Chance of "the end of the street" where it applies.
    pub end_of_street: f64,
}

impl Default for InstructionParams {
    fn default() -> Self {
        InstructionParams {
            landmark_only: 0.1,
            landmark_mention: 0.5,
            end_of_street: 0.4,
        }
    }
}

fn edge_angle(g: &EnvironmentGraph, a: NodeIx, b: NodeIx) -> f64 {
    g.edge_to(a, b).expect("route edge").angle
}

/// Landmark descriptions at `v` that do not occur at any of `before`.
fn unique_descriptions(world: &World, style: DatasetTag, v: NodeIx, before: &[NodeIx]) -> Vec<String> {
    world.landmarks[v]
        .iter()
        .map(|l| l.describe(style))
        .filter(|d| !before.iter().any(|&u| world.has_landmark(u, d, style)))
        .collect()
}

fn clauses_for(
    world: &World,
    sk: &RouteSkeleton,
    params: &InstructionParams,
    plain: bool,
    rng: &mut impl Rng,
) -> Result<Vec<Clause>, WorldError> {
    let g = &world.graph;
    let r = &sk.route;
    let style = sk.style;
    let mut clauses = Vec::new();
    let first_edge = edge_angle(g, r[0], r[1]);
    match style {
        DatasetTag::Touchdown => {
            let edges = g.out_edges(r[0])?;
            let k = edges.len();
            let cur = edges
                .iter()
                .position(|e| (e.angle - sk.start_heading).abs() < ANGLE_EPS)
                .ok_or_else(|| WorldError::Follow("start heading is not an edge angle".into()))?;
            let want = edges.iter().position(|e| e.target == r[1]).expect("route edge");
            let rights = (want + k - cur) % k;
            let lefts = (cur + k - want) % k;
            let around = signed_delta(sk.start_heading, first_edge).abs() > 135.0
                && g.closest_edge(r[0], sk.start_heading + 180.0)?.target == r[1];
            clauses.push(Clause::Orient(if rights == 0 {
                Orientation::Ahead
            } else if around {
                Orientation::Around
            } else if rights <= lefts {
                Orientation::Turn(Dir::Right, rights)
            } else {
                Orientation::Turn(Dir::Left, lefts)
            }));
        }
        DatasetTag::Map2seq => {
            if (sk.start_heading - first_edge).abs() > ANGLE_EPS {
                return Err(WorldError::Follow("map2seq routes start facing their first edge".into()));
            }
        }
    }
    let chance = |p: f64, rng: &mut dyn rand::RngCore| !plain && rng.random::<f64>() < p;
    let mut anchor = 0;
    let mut seen_end = false;
    for j in 1..r.len() - 1 {
        let inc = edge_angle(g, r[j - 1], r[j]);
        let out = edge_angle(g, r[j], r[j + 1]);
        let delta = signed_delta(inc, out);
        let at_end = is_intersection(g, r[j])
            && !g
                .out_edges(r[j])?
                .iter()
                .any(|e| e.target != r[j - 1] && signed_delta(inc, e.angle).abs() <= TURN_THRESHOLD);
        if !is_intersection(g, r[j]) || delta.abs() <= TURN_THRESHOLD {
            seen_end |= at_end;
            continue;
        }
        let dir = if delta < 0.0 { Dir::Left } else { Dir::Right };
        let leg = &r[anchor + 1..j];
        let m = leg.iter().filter(|&&v| is_intersection(g, v)).count() + 1;
        let descs = unique_descriptions(world, style, r[j], leg);
        let at = match descs.choose(rng) {
            Some(d) if chance(params.landmark_only, rng) => Place::Landmark(d.clone()),
            Some(d) if chance(params.landmark_mention, rng) => Place::IntersectionBy(m, d.clone()),
            _ if at_end && !seen_end && chance(params.end_of_street, rng) => Place::EndOfStreet,
            _ => Place::Intersection(m),
        };
        clauses.push(Clause::Turn { dir, at });
        anchor = j;
        seen_end = false;
    }
    let goal_ix = r.len() - 1;
    let goal = r[goal_ix];
    let leg = &r[anchor + 1..goal_ix];
    let descs = unique_descriptions(world, style, goal, leg);
    let inter: Vec<usize> = (anchor + 1..goal_ix).filter(|&i| is_intersection(g, r[i])).collect();
    let stop = match descs.choose(rng) {
        Some(d) if chance(params.landmark_only, rng) => StopPlace::At(Place::Landmark(d.clone())),
        d if is_intersection(g, goal) => match d {
            Some(d) if chance(params.landmark_mention, rng) => {
                StopPlace::At(Place::IntersectionBy(inter.len() + 1, d.clone()))
            }
            _ => StopPlace::At(Place::Intersection(inter.len() + 1)),
        },
        d => {
            let by = d.filter(|_| chance(params.landmark_mention, rng)).cloned();
            match inter.last() {
                Some(&last) => StopPlace::Steps {
                    after: inter.len(),
                    steps: goal_ix - last,
                    by,
                },
                None => StopPlace::Steps {
                    after: 0,
                    steps: goal_ix - anchor,
                    by,
                },
            }
        }
    };
    clauses.push(Clause::Stop(stop));
    Ok(clauses)
}

/// Generates an instruction for a route and checks that the scripted reader
/// reproduces the route. Falls back to intersection counting only when a
/// landmark reference would be misread.
pub fn gen_instruction(
    world: &World,
    sk: &RouteSkeleton,
    params: &InstructionParams,
    rng: &mut impl Rng,
) -> Result<String, WorldError> {
    let start = AgentState {
        node: sk.route[0],
        heading: sk.start_heading,
    };
    let mut last_err = None;
    for plain in [false, true] {
        let clauses = clauses_for(world, sk, params, plain, rng)?;
        let text = render_clauses(&clauses, rng);
        match follow_instruction(world, sk.style, start, &text) {
            Ok(path) if path == sk.route => return Ok(text),
            Ok(_) => last_err = Some(WorldError::Follow(format!("`{text}` leads elsewhere"))),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Landmark, World, WorldError, WorldSpec, LANDMARK_COLORS, LANDMARK_KINDS, LANDMARK_NAMES};
use crate::env::{normalize_angle, signed_delta, EnvironmentGraph};
use crate::pano::{
    PanoFeatureStore, PanoVariant, FOURTH_HEIGHT, NUM_SLICES, SEMSEG_CLASSES,
};

const GRAPH_STREAM: u64 = 1;
const LANDMARK_STREAM: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn compass(from: (f64, f64), to: (f64, f64)) -> f64 {
    normalize_angle((to.0 - from.0).atan2(to.1 - from.1).to_degrees())
}

fn connected(n: usize, segs: &[(usize, usize)], alive: &[bool]) -> bool {
    let mut adj = vec![Vec::new(); n];
    for (s, &(a, b)) in segs.iter().enumerate() {
        if alive[s] {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    let mut seen = vec![false; n];
    seen[0] = true;
    let mut queue = VecDeque::from([0]);
    let mut count = 1;
    while let Some(v) = queue.pop_front() {
        for &u in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                count += 1;
                queue.push_back(u);
            }
        }
    }
    count == n
}

/// Generates the street graph and landmark table. Feature stores are derived
/// on demand with [`World::features`].
pub fn gen_world(spec: &WorldSpec) -> Result<World, WorldError> {
    if spec.cols < 2 || spec.rows < 2 {
        return Err(WorldError::Spec(format!("grid {}x{} is too small", spec.cols, spec.rows)));
    }
    if !(0.0..0.35).contains(&spec.jitter) || !(0.0..0.2).contains(&spec.bend) {
        return Err(WorldError::Spec("jitter must be < 0.35 and bend < 0.2".into()));
    }
    if !(0.0..=0.5).contains(&spec.removed_fraction) {
        return Err(WorldError::Spec("removed_fraction must be within [0, 0.5]".into()));
    }
    if spec.landmark_one < 0.0 || spec.landmark_two < 0.0 || spec.landmark_one + spec.landmark_two > 1.0 {
        return Err(WorldError::Spec("landmark probabilities must sum to at most 1".into()));
    }
    let mut rng = stream(spec.seed, GRAPH_STREAM);
    let s = spec.spacing;
    let (cols, rows) = (spec.cols, spec.rows);
    let mut coords = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let jx = rng.random_range(-spec.jitter..=spec.jitter) * s;
            let jy = rng.random_range(-spec.jitter..=spec.jitter) * s;
            coords.push((c as f64 * s + jx, r as f64 * s + jy));
        }
    }
    let at = |c: usize, r: usize| r * cols + c;
    let mut segs = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                segs.push((at(c, r), at(c + 1, r)));
            }
            if r + 1 < rows {
                segs.push((at(c, r), at(c, r + 1)));
            }
        }
    }
    let n_int = coords.len();
    let mut alive = vec![true; segs.len()];
    let mut degree = vec![0usize; n_int];
    for &(a, b) in &segs {
        degree[a] += 1;
        degree[b] += 1;
    }
    let target = (spec.removed_fraction * segs.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..segs.len()).collect();
    order.shuffle(&mut rng);
    let mut removed = 0;
    for s_ix in order {
        if removed == target {
            break;
        }
        let (a, b) = segs[s_ix];
        if degree[a] <= 2 || degree[b] <= 2 {
            continue;
        }
        alive[s_ix] = false;
        if connected(n_int, &segs, &alive) {
            degree[a] -= 1;
            degree[b] -= 1;
            removed += 1;
        } else {
            alive[s_ix] = true;
        }
    }

    let mut edges = Vec::new();
    let link = |coords: &Vec<(f64, f64)>, a: usize, b: usize, edges: &mut Vec<(usize, usize, f64)>| {
        let ang = compass(coords[a], coords[b]);
        edges.push((a, b, ang));
        edges.push((b, a, normalize_angle(ang + 180.0)));
    };
    for (s_ix, &(a, b)) in segs.iter().enumerate() {
        if !alive[s_ix] {
            continue;
        }
        let (pa, pb) = (coords[a], coords[b]);
        let (dx, dy) = (pb.0 - pa.0, pb.1 - pa.1);
        let len = (dx * dx + dy * dy).sqrt();
        let (nx, ny) = (-dy / len, dx / len);
        let mut prev = a;
        for k in 1..=spec.mid_nodes {
            let f = k as f64 / (spec.mid_nodes + 1) as f64;
            let off = rng.random_range(-spec.bend..=spec.bend) * s;
            coords.push((pa.0 + f * dx + off * nx, pa.1 + f * dy + off * ny));
            let m = coords.len() - 1;
            link(&coords, prev, m, &mut edges);
            prev = m;
        }
        link(&coords, prev, b, &mut edges);
    }
    let nodes = coords
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| (format!("n{i}"), x, y))
        .collect();
    let graph = EnvironmentGraph::new(nodes, edges)?;

    let mut lrng = stream(spec.seed, LANDMARK_STREAM);
    let mut landmarks = Vec::with_capacity(graph.len());
    for _ in 0..graph.len() {
        let u: f64 = lrng.random();
        let count = if u < spec.landmark_two {
            2
        } else if u < spec.landmark_two + spec.landmark_one {
            1
        } else {
            0
        };
        let mut here: Vec<Landmark> = Vec::with_capacity(count);
        while here.len() < count {
            let l = Landmark {
                kind: lrng.random_range(0..LANDMARK_KINDS.len()),
                color: lrng.random_range(0..LANDMARK_COLORS.len()),
                name: lrng.random_range(0..LANDMARK_NAMES.len()),
                azimuth: lrng.random_range(0.0..360.0),
            };
            if here.iter().all(|o| o.kind != l.kind) {
                here.push(l);
            }
        }
        landmarks.push(here);
    }
    Ok(World {
        spec: spec.clone(),
        graph,
        landmarks,
    })
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

struct Signatures {
    kind: Vec<Vec<f64>>,
    color: Vec<Vec<f64>>,
    name: Vec<Vec<f64>>,
    road: Vec<f64>,
}

impl Signatures {
    fn new(rng: &mut ChaCha8Rng, dim: usize) -> Self {
        Signatures {
            kind: (0..LANDMARK_KINDS.len()).map(|_| gaussian_vec(rng, dim)).collect(),
            color: (0..LANDMARK_COLORS.len()).map(|_| gaussian_vec(rng, dim)).collect(),
            name: (0..LANDMARK_NAMES.len()).map(|_| gaussian_vec(rng, dim)).collect(),
            road: gaussian_vec(rng, dim),
        }
    }

    fn landmark(&self, l: &Landmark, h: usize) -> f64 {
        (self.kind[l.kind][h] + self.color[l.color][h] + self.name[l.name][h]) / 3f64.sqrt()
    }
}

fn street_within(world: &World, v: usize, azimuth: f64, tol: f64) -> bool {
    world
        .graph
        .out_edges(v)
        .expect("valid node")
        .iter()
        .any(|e| signed_delta(azimuth, e.angle).abs() <= tol)
}

fn nearest_slice(azimuth: f64) -> usize {
    ((azimuth.rem_euclid(360.0) / 45.0).round() as usize) % NUM_SLICES
}

pub(super) fn features(world: &World, variant: PanoVariant) -> Result<PanoFeatureStore, WorldError> {
    let spec = &world.spec;
    let ids: Vec<String> = (0..world.graph.len()).map(|v| world.graph.id(v).to_string()).collect();
    let stream_id = 10 + variant as u64;
    let mut rng = stream(spec.seed, stream_id);
    let store = match variant {
        PanoVariant::None => PanoFeatureStore::none(ids),
        PanoVariant::PreFinal => {
            let d = spec.prefinal_dim;
            let sig = Signatures::new(&mut rng, d);
            let mut data = Vec::with_capacity(ids.len() * NUM_SLICES * d);
            for v in 0..world.graph.len() {
                for i in 0..NUM_SLICES {
                    let center = i as f64 * 45.0;
                    let road = street_within(world, v, center, 22.5);
                    for h in 0..d {
                        let noise: f64 = StandardNormal.sample(&mut rng);
                        let mut x = spec.noise * noise;
                        if road {
                            x += spec.road_signal * sig.road[h];
                        }
                        for l in &world.landmarks[v] {
                            let w = if nearest_slice(l.azimuth) == i { 1.0 } else { 0.5 };
                            x += spec.signal * w * sig.landmark(l, h);
                        }
                        data.push(x as f32);
                    }
                }
            }
            PanoFeatureStore::new(variant, NUM_SLICES, 1, d, ids, data)?
        }
        PanoVariant::Semseg => {
            let mut base = [0.004f64; SEMSEG_CLASSES];
            for (c, w) in [(0, 0.18), (1, 0.1), (2, 0.3), (3, 0.2), (4, 0.06), (5, 0.04), (6, 0.02)] {
                base[c] = w;
            }
            let mut data = Vec::with_capacity(ids.len() * NUM_SLICES * SEMSEG_CLASSES);
            for v in 0..world.graph.len() {
                for i in 0..NUM_SLICES {
                    let road = street_within(world, v, i as f64 * 45.0, 22.5);
                    let mut raw = [0.0f64; SEMSEG_CLASSES];
                    for (c, r) in raw.iter_mut().enumerate() {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *r = base[c] * (spec.noise * 0.5 * z).exp();
                    }
                    if road {
                        raw[0] += spec.road_signal * 0.2;
                    }
                    for l in &world.landmarks[v] {
                        let w = if nearest_slice(l.azimuth) == i { 1.0 } else { 0.5 };
                        raw[17 + l.kind % 8] += spec.signal * 0.15 * w;
                    }
                    let total: f64 = raw.iter().sum();
                    data.extend(raw.iter().map(|r| (r / total) as f32));
                }
            }
            PanoFeatureStore::new(variant, NUM_SLICES, 1, SEMSEG_CLASSES, ids, data)?
        }
        PanoVariant::FourthToLast => {
            let w = spec.fourth_width;
            let c = spec.fourth_channels.max(1);
            let sig = Signatures::new(&mut rng, FOURTH_HEIGHT);
            let gains: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..1.5)).collect();
            let mut data = Vec::with_capacity(ids.len() * w * c * FOURTH_HEIGHT);
            for v in 0..world.graph.len() {
                for col in 0..w {
                    let az = col as f64 * 360.0 / w as f64;
                    let road = street_within(world, v, az, 10.0);
                    let weights: Vec<(&Landmark, f64)> = world.landmarks[v]
                        .iter()
                        .filter_map(|l| {
                            let d = signed_delta(az, l.azimuth).abs();
                            (d < 30.0).then_some((l, 1.0 - d / 30.0))
                        })
                        .collect();
                    for gain in &gains {
                        for h in 0..FOURTH_HEIGHT {
                            let noise: f64 = StandardNormal.sample(&mut rng);
                            let mut x = spec.noise * noise;
                            if road {
                                x += spec.road_signal * sig.road[h];
                            }
                            for (l, lw) in &weights {
                                x += spec.signal * lw * sig.landmark(l, h);
                            }
                            data.push((gain * x) as f32);
                        }
                    }
                }
            }
            PanoFeatureStore::new(variant, w, c, FOURTH_HEIGHT, ids, data)?
        }
    };
    Ok(store)
}

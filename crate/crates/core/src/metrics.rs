//! Task completion, shortest-path distance, nDTW/SDTW and the paired t-test.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, EnvironmentGraph, NodeIx};

/// Distance threshold for nDTW, in hops; equal to the success radius.
pub const DEFAULT_DTW_THRESHOLD: f64 = 1.0;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Env(#[from] EnvError),

    #[error("empty path")]
    EmptyPath,

    #[error("paired samples need equal lengths of at least 2, got {0} and {1}")]
    SampleSize(usize, usize),

    #[error("all paired differences are zero; the t statistic is undefined")]
    ZeroVariance,

    #[error("no trajectory for instance `{0}`")]
    MissingTrajectory(String),
}

pub fn spd(graph: &EnvironmentGraph, stop: NodeIx, goal: NodeIx) -> Result<usize, MetricsError> {
    Ok(graph.hop_distance(stop, goal)?)
}

pub fn tc(graph: &EnvironmentGraph, stop: NodeIx, goal: NodeIx) -> Result<u8, MetricsError> {
    Ok(u8::from(spd(graph, stop, goal)? <= 1))
}

/// Dynamic time warping cost between two sequences under `cost(i, j)`.
pub fn dtw<F>(n: usize, m: usize, mut cost: F) -> f64
where
    F: FnMut(usize, usize) -> f64,
{
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for i in 1..=n {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j].min(cur[j - 1]).min(prev[j - 1]);
            cur[j] = cost(i - 1, j - 1) + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

/// `exp(-DTW / (|gold| * d_th))` with undirected hop distance as the cost.
pub fn ndtw(
    graph: &EnvironmentGraph,
    agent: &[NodeIx],
    gold: &[NodeIx],
    d_th: f64,
) -> Result<f64, MetricsError> {
    if agent.is_empty() || gold.is_empty() {
        return Err(MetricsError::EmptyPath);
    }
    let mut tables: HashMap<NodeIx, Vec<Option<usize>>> = HashMap::new();
    for &g in gold {
        if !tables.contains_key(&g) {
            tables.insert(g, graph.hops_from(g)?);
        }
    }
    let mut cost = Vec::with_capacity(agent.len() * gold.len());
    for &a in agent {
        for &g in gold {
            let d = tables[&g]
                .get(a)
                .copied()
                .flatten()
                .ok_or_else(|| EnvError::Unreachable(graph.id(a).into(), graph.id(g).into()))?;
            cost.push(d as f64);
        }
    }
    let m = gold.len();
    let d = dtw(agent.len(), m, |i, j| cost[i * m + j]);
    Ok((-d / (m as f64 * d_th)).exp())
}

pub fn sdtw(
    graph: &EnvironmentGraph,
    agent: &[NodeIx],
    gold: &[NodeIx],
    d_th: f64,
) -> Result<f64, MetricsError> {
    let stop = *agent.last().ok_or(MetricsError::EmptyPath)?;
    let goal = *gold.last().ok_or(MetricsError::EmptyPath)?;
    if tc(graph, stop, goal)? == 1 {
        ndtw(graph, agent, gold, d_th)
    } else {
        Ok(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetrics {
    pub id: String,
    pub tc: u8,
    pub spd: usize,
    pub ndtw: f64,
    pub sdtw: f64,
}

impl InstanceMetrics {
    pub fn compute(
        graph: &EnvironmentGraph,
        id: &str,
        agent: &[NodeIx],
        gold: &[NodeIx],
    ) -> Result<Self, MetricsError> {
        let stop = *agent.last().ok_or(MetricsError::EmptyPath)?;
        let goal = *gold.last().ok_or(MetricsError::EmptyPath)?;
        let spd = spd(graph, stop, goal)?;
        let tc = u8::from(spd <= 1);
        let ndtw = ndtw(graph, agent, gold, DEFAULT_DTW_THRESHOLD)?;
        Ok(InstanceMetrics {
            id: id.to_string(),
            tc,
            spd,
            ndtw,
            sdtw: if tc == 1 { ndtw } else { 0.0 },
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub tc: f64,
    pub spd: f64,
    pub ndtw: f64,
    pub sdtw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub aggregate: Aggregate,
    pub instances: Vec<InstanceMetrics>,
}

impl MetricsReport {
    pub fn from_instances(instances: Vec<InstanceMetrics>) -> Self {
        let n = instances.len();
        let mean = |f: &dyn Fn(&InstanceMetrics) -> f64| {
            if n == 0 {
                0.0
            } else {
                instances.iter().map(f).sum::<f64>() / n as f64
            }
        };
        let aggregate = Aggregate {
            n,
            tc: mean(&|m| m.tc as f64),
            spd: mean(&|m| m.spd as f64),
            ndtw: mean(&|m| m.ndtw),
            sdtw: mean(&|m| m.sdtw),
        };
        MetricsReport {
            aggregate,
            instances,
        }
    }

    pub const CSV_HEADER: &'static str = "name,n,tc,spd,ndtw,sdtw";

    /// Table-style row: TC, nDTW and SDTW as percentages.
    pub fn csv_row(&self, name: &str) -> String {
        let a = &self.aggregate;
        format!(
            "{name},{},{:.2},{:.2},{:.2},{:.2}",
            a.n,
            a.tc * 100.0,
            a.spd,
            a.ndtw * 100.0,
            a.sdtw * 100.0
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    pub p: f64,
}

/// Two-sided paired t-test on `a - b`. Differences that are constant and
/// nonzero give `t = ±inf` and `p = 0`.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest, MetricsError> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(MetricsError::SampleSize(a.len(), b.len()));
    }
    let n = a.len();
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().all(|&x| x == 0.0) {
        return Err(MetricsError::ZeroVariance);
    }
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    if var <= f64::EPSILON * mean * mean {
        return Ok(TTest {
            t: mean.signum() * f64::INFINITY,
            df,
            p: 0.0,
        });
    }
    let t = mean / (var / n as f64).sqrt();
    Ok(TTest {
        t,
        df,
        p: student_t_two_sided(t, df as f64),
    })
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    regularized_incomplete_beta(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// Natural log of the gamma function (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// `I_x(a, b)` by Lentz's continued fraction.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut c = 1.0;
    let mut d = 1.0 - (a + b) * x / (a + 1.0);
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=300 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
        d = 1.0 + aa * d;
        d = if d.abs() < TINY { TINY } else { d };
        c = 1.0 + aa / c;
        c = if c.abs() < TINY { TINY } else { c };
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
        d = 1.0 + aa * d;
        d = if d.abs() < TINY { TINY } else { d };
        c = 1.0 + aa / c;
        c = if c.abs() < TINY { TINY } else { c };
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-15 {
            break;
        }
    }
    h
}

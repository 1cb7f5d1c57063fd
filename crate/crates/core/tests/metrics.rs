use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};
use streetnav_core::metrics::{
    dtw, ndtw, paired_ttest, regularized_incomplete_beta, sdtw, spd, student_t_two_sided, tc, InstanceMetrics,
    MetricsError, MetricsReport,
};
use streetnav_core::EnvironmentGraph;

fn line(n: usize) -> EnvironmentGraph {
    let nodes = (0..n).map(|i| (format!("p{i}"), i as f64, 0.0)).collect();
    let mut edges = Vec::new();
    for i in 0..n - 1 {
        edges.push((i, i + 1, 90.0));
        edges.push((i + 1, i, 270.0));
    }
    EnvironmentGraph::new(nodes, edges).unwrap()
}

/// 4x3 grid with one diagonal one-way street: 12 nodes.
fn fixture() -> EnvironmentGraph {
    let (cols, rows) = (4usize, 3usize);
    let nodes = (0..cols * rows)
        .map(|i| (format!("g{i}"), (i % cols) as f64, (i / cols) as f64))
        .collect();
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let v = r * cols + c;
            if c + 1 < cols {
                edges.push((v, v + 1, 90.0));
                edges.push((v + 1, v, 270.0));
            }
            if r + 1 < rows {
                edges.push((v, v + cols, 0.0));
                edges.push((v + cols, v, 180.0));
            }
        }
    }
    edges.push((0, 5, 45.0));
    EnvironmentGraph::new(nodes, edges).unwrap()
}

/// All-pairs undirected hop distances by Floyd-Warshall.
fn floyd(g: &EnvironmentGraph) -> Vec<Vec<f64>> {
    let n = g.len();
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for (v, row) in d.iter_mut().enumerate() {
        row[v] = 0.0;
    }
    for v in 0..n {
        for e in g.out_edges(v).unwrap() {
            d[v][e.target] = d[v][e.target].min(1.0);
            d[e.target][v] = d[e.target][v].min(1.0);
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

/// Minimum over every monotone boundary-aligned warping path, enumerated
/// recursively.
fn brute_dtw(a: &[usize], b: &[usize], d: &[Vec<f64>]) -> f64 {
    fn go(i: usize, j: usize, a: &[usize], b: &[usize], d: &[Vec<f64>], acc: f64, best: &mut f64) {
        let acc = acc + d[a[i]][b[j]];
        if i + 1 == a.len() && j + 1 == b.len() {
            *best = best.min(acc);
            return;
        }
        if i + 1 < a.len() {
            go(i + 1, j, a, b, d, acc, best);
        }
        if j + 1 < b.len() {
            go(i, j + 1, a, b, d, acc, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            go(i + 1, j + 1, a, b, d, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    go(0, 0, a, b, d, 0.0, &mut best);
    best
}

fn random_walk(g: &EnvironmentGraph, len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut p = vec![rng.random_range(0..g.len())];
    while p.len() < len {
        let edges = g.out_edges(*p.last().unwrap()).unwrap();
        p.push(edges[rng.random_range(0..edges.len())].target);
    }
    p
}

#[test]
fn spd_and_tc_examples() {
    let g = line(5);
    assert_eq!(spd(&g, 2, 2).unwrap(), 0);
    assert_eq!(spd(&g, 1, 2).unwrap(), 1);
    assert_eq!(spd(&g, 0, 4).unwrap(), 4);
    assert_eq!(tc(&g, 2, 2).unwrap(), 1);
    assert_eq!(tc(&g, 3, 2).unwrap(), 1);
    assert_eq!(tc(&g, 4, 2).unwrap(), 0);
}

#[test]
fn spd_reports_unreachable_nodes() {
    let nodes = (0..2).map(|i| (format!("v{i}"), 0.0, 0.0)).collect();
    let g = EnvironmentGraph::new(nodes, vec![(0, 0, 0.0), (1, 1, 0.0)]).unwrap();
    assert!(matches!(spd(&g, 0, 1), Err(MetricsError::Env(_))));
}

#[test]
fn ndtw_examples() {
    let g = line(3);
    assert_eq!(ndtw(&g, &[0, 1, 2], &[0, 1, 2], 1.0).unwrap(), 1.0);
    let v = ndtw(&g, &[0, 1, 2], &[0, 1], 1.0).unwrap();
    assert!((v - (-0.5f64).exp()).abs() < 1e-9);
    let far = line(40);
    let v = ndtw(&far, &[39, 38, 37], &[0, 1, 2], 1.0).unwrap();
    assert!(v < 1e-10);
    assert!(matches!(ndtw(&g, &[], &[0], 1.0), Err(MetricsError::EmptyPath)));
}

#[test]
fn sdtw_examples() {
    let g = line(3);
    assert_eq!(sdtw(&g, &[0, 1, 2], &[0, 1, 2], 1.0).unwrap(), 1.0);
    let v = sdtw(&g, &[0, 1, 2], &[0, 1], 1.0).unwrap();
    assert!((v - (-0.5f64).exp()).abs() < 1e-9);
    let g = line(6);
    assert_eq!(sdtw(&g, &[0], &[0, 1, 2, 3], 1.0).unwrap(), 0.0);
}

#[test]
fn dtw_matches_exhaustive_alignment() {
    let g = fixture();
    let d = floyd(&g);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in 1..=6 {
        for m in 1..=6 {
            for _ in 0..30 {
                let a = random_walk(&g, n, &mut rng);
                let b = random_walk(&g, m, &mut rng);
                let dp = dtw(n, m, |i, j| d[a[i]][b[j]]);
                assert_eq!(dp, brute_dtw(&a, &b, &d), "{a:?} vs {b:?}");
                let nd = ndtw(&g, &a, &b, 1.0).unwrap();
                assert_eq!(nd, (-dp / m as f64).exp());
            }
        }
    }
}

#[test]
fn report_aggregates_are_means() {
    let g = line(6);
    let a = InstanceMetrics::compute(&g, "a", &[0, 1, 2], &[0, 1, 2]).unwrap();
    let b = InstanceMetrics::compute(&g, "b", &[0], &[0, 1, 2, 3]).unwrap();
    assert_eq!((a.tc, a.spd, a.ndtw, a.sdtw), (1, 0, 1.0, 1.0));
    assert_eq!((b.tc, b.spd, b.sdtw), (0, 3, 0.0));
    let r = MetricsReport::from_instances(vec![a, b.clone()]);
    assert_eq!(r.aggregate.n, 2);
    assert_eq!(r.aggregate.tc, 0.5);
    assert_eq!(r.aggregate.spd, 1.5);
    assert!((r.aggregate.ndtw - (1.0 + b.ndtw) / 2.0).abs() < 1e-12);
    assert!(r.csv_row("x").starts_with("x,2,50.00"));
}

#[test]
fn ttest_documented_statistic_maps_to_p_0208() {
    let p = student_t_two_sided(-1.5, 4.0);
    assert!((p - 0.208).abs() < 0.005, "p = {p}");
}

#[test]
fn ttest_on_listed_inputs_matches_closed_form() {
    // differences [-1, 0, -1, 0, -1]: mean -0.6, sample variance 0.3
    let t = paired_ttest(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 2.0, 4.0, 4.0, 6.0]).unwrap();
    let want_t = -0.6 / (0.3f64 / 5.0).sqrt();
    assert!((t.t - want_t).abs() < 1e-12);
    assert_eq!(t.df, 4);
    let dist = StudentsT::new(0.0, 1.0, 4.0).unwrap();
    assert!((t.p - 2.0 * dist.cdf(want_t)).abs() < 1e-9);
}

#[test]
fn ttest_degenerate_inputs() {
    let a = [0.3, 0.4, 0.5];
    assert!(matches!(paired_ttest(&a, &a), Err(MetricsError::ZeroVariance)));
    let b: Vec<f64> = a.iter().map(|x| x - 0.1).collect();
    let c = [0.5; 10];
    let d = [0.25; 10];
    let t = paired_ttest(&c, &d).unwrap();
    assert!(t.p < 1e-12 && t.t.is_infinite());
    assert!(paired_ttest(&a, &b[..2]).is_err());
    assert!(paired_ttest(&[1.0], &[2.0]).is_err());
}

#[test]
fn student_t_tail_matches_statrs() {
    for df in [1.0, 2.0, 4.0, 9.0, 30.0, 120.0] {
        let dist = StudentsT::new(0.0, 1.0, df).unwrap();
        for t in [0.0, 0.3, 1.0, 1.5, 2.2, 4.0, 8.0] {
            let want = 2.0 * (1.0 - dist.cdf(t));
            let x = df / (df + t * t);
            let got = regularized_incomplete_beta(df / 2.0, 0.5, x);
            assert!((got - want).abs() < 1e-9, "df {df} t {t}: {got} vs {want}");
        }
    }
}

proptest! {
    #[test]
    fn spd_triangle_inequality(a in 0usize..12, b in 0usize..12, c in 0usize..12) {
        let g = fixture();
        let ab = spd(&g, a, b).unwrap();
        let bc = spd(&g, b, c).unwrap();
        let ac = spd(&g, a, c).unwrap();
        prop_assert!(ac <= ab + bc);
        prop_assert_eq!(ab, spd(&g, b, a).unwrap());
    }

    #[test]
    fn ndtw_in_unit_interval(seed in any::<u64>(), n in 1usize..8, m in 1usize..8) {
        let g = fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_walk(&g, n, &mut rng);
        let b = random_walk(&g, m, &mut rng);
        let v = ndtw(&g, &a, &b, 1.0).unwrap();
        prop_assert!(v > 0.0 && v <= 1.0);
        let s = sdtw(&g, &a, &b, 1.0).unwrap();
        prop_assert!(s <= v);
        if tc(&g, *a.last().unwrap(), *b.last().unwrap()).unwrap() == 1 {
            prop_assert_eq!(s, v);
        }
    }
}

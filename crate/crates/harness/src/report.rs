//! Aggregation of run directories into tables and figures.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use streetnav_core::metrics::{paired_ttest, Aggregate, MetricsError, MetricsReport};

use crate::config::Scenario;
use crate::masking::{parse_kind, MaskRow, MASK_CSV_HEADER};
use crate::run::{RunInfo, METRICS_FILE, RUN_FILE};
use crate::HarnessError;

pub const RESULTS_CSV: &str = "results.csv";
pub const RESULTS_SVG: &str = "results.svg";
pub const MASK_CSV: &str = "mask.csv";
pub const MASK_SVG: &str = "mask_curve.svg";
pub const ORACLE_CSV: &str = "oracle.csv";
pub const ORACLE_FILE: &str = "oracle.json";

/// Significance level of the bold flag.
pub const ALPHA: f64 = 0.05;

/// A run directory's metadata and aggregate metrics.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub dir: PathBuf,
    pub info: RunInfo,
    pub aggregate: Aggregate,
}

/// Oracle sub-task TC of one model, as written by `oracle-eval`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    /// Sub-task name, or `all` when every decision is oracled.
    pub subtask: String,
    pub tc: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation; the deviation of one value is 0.
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        if xs.is_empty() {
            return MeanStd::default();
        }
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        MeanStd { mean, std }
    }
}

/// Paired comparison of a group's TC against the baseline group.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Significance {
    pub pairs: usize,
    pub p: f64,
    pub bold: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupRow {
    pub name: String,
    pub scenario: Scenario,
    pub runs: usize,
    pub tc: MeanStd,
    pub spd: MeanStd,
    pub ndtw: MeanStd,
    pub sdtw: MeanStd,
    pub significance: Option<Significance>,
}

fn read(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), HarnessError> {
    let mut entries = std::fs::read_dir(dir)
        .map_err(|e| HarnessError::io(dir, e))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| HarnessError::io(dir, e))?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

fn files_named(files: &[PathBuf], pred: impl Fn(&str) -> bool) -> Vec<&PathBuf> {
    files
        .iter()
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(&pred))
        .collect()
}

/// Every run directory below `dir` (sorted by path). A directory with
/// metrics but no run metadata is reported as a missing input.
pub fn scan_runs(dir: &Path) -> Result<Vec<RunRecord>, HarnessError> {
    let mut files = Vec::new();
    walk(dir, &mut files)?;
    let mut runs = Vec::new();
    let mut missing = Vec::new();
    for metrics in files_named(&files, |n| n == METRICS_FILE) {
        let run_dir = metrics.parent().expect("file has a parent");
        let info_path = run_dir.join(RUN_FILE);
        if !info_path.exists() {
            missing.push(info_path.display().to_string());
            continue;
        }
        let info: RunInfo = serde_json::from_str(&read(&info_path)?)
            .map_err(|e| HarnessError::Data(format!("{}: {e}", info_path.display())))?;
        let report: MetricsReport = serde_json::from_str(&read(metrics)?)
            .map_err(|e| HarnessError::Data(format!("{}: {e}", metrics.display())))?;
        runs.push(RunRecord {
            dir: run_dir.to_path_buf(),
            info,
            aggregate: report.aggregate,
        });
    }
    if !missing.is_empty() {
        return Err(HarnessError::Data(format!(
            "missing inputs: {}",
            missing.join(", ")
        )));
    }
    Ok(runs)
}

/// Groups runs by (name, scenario). Each group is compared with the
/// `baseline` group of the same scenario by a paired t-test on TC over the
/// seeds both groups ran.
pub fn summarize(runs: &[RunRecord], baseline: &str) -> Vec<GroupRow> {
    let mut groups: BTreeMap<(Scenario, String), Vec<&RunRecord>> = BTreeMap::new();
    for r in runs {
        groups
            .entry((r.info.scenario, r.info.name.clone()))
            .or_default()
            .push(r);
    }
    let by_seed = |g: &[&RunRecord]| -> BTreeMap<u64, f64> {
        g.iter().map(|r| (r.info.seed, r.aggregate.tc)).collect()
    };
    let mut rows = Vec::new();
    for ((scenario, name), g) in &groups {
        let col = |f: fn(&Aggregate) -> f64| {
            MeanStd::of(&g.iter().map(|r| f(&r.aggregate)).collect::<Vec<_>>())
        };
        let significance = groups
            .get(&(*scenario, baseline.to_string()))
            .filter(|_| name != baseline)
            .and_then(|base| {
                let base = by_seed(base);
                let (a, b): (Vec<f64>, Vec<f64>) = by_seed(g)
                    .into_iter()
                    .filter_map(|(seed, tc)| base.get(&seed).map(|&btc| (tc, btc)))
                    .unzip();
                match paired_ttest(&a, &b) {
                    Ok(t) => Some(Significance {
                        pairs: a.len(),
                        p: t.p,
                        bold: t.p <= ALPHA,
                    }),
                    Err(MetricsError::ZeroVariance) => Some(Significance {
                        pairs: a.len(),
                        p: 1.0,
                        bold: false,
                    }),
                    Err(_) => None,
                }
            });
        rows.push(GroupRow {
            name: name.clone(),
            scenario: *scenario,
            runs: g.len(),
            tc: col(|a| a.tc * 100.0),
            spd: col(|a| a.spd),
            ndtw: col(|a| a.ndtw * 100.0),
            sdtw: col(|a| a.sdtw * 100.0),
            significance,
        });
    }
    rows
}

/// Table with mean and std per metric (TC, nDTW, SDTW in percent). The
/// significance columns appear only when some group has more than one run.
pub fn results_csv(rows: &[GroupRow]) -> String {
    let with_sig = rows.iter().any(|r| r.runs > 1);
    let mut s = String::from(
        "name,scenario,runs,tc_mean,tc_std,spd_mean,spd_std,ndtw_mean,ndtw_std,sdtw_mean,sdtw_std",
    );
    if with_sig {
        s.push_str(",p_tc,bold");
    }
    s.push('\n');
    for r in rows {
        let _ = write!(s, "{},{},{}", r.name, r.scenario.as_str(), r.runs);
        for m in [r.tc, r.spd, r.ndtw, r.sdtw] {
            let _ = write!(s, ",{:.2},{:.2}", m.mean, m.std);
        }
        if with_sig {
            match r.significance {
                Some(sig) => {
                    let _ = write!(s, ",{:.4},{}", sig.p, sig.bold);
                }
                None => s.push_str(",,"),
            }
        }
        s.push('\n');
    }
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Bars of mean TC with one-std whiskers, one bar per group.
pub fn results_svg(rows: &[GroupRow]) -> String {
    let bar = 48.0;
    let gap = 24.0;
    let plot_h = 240.0;
    let left = 50.0;
    let top = 20.0;
    let width = left + rows.len() as f64 * (bar + gap) + gap;
    let height = top + plot_h + 110.0;
    let max = rows
        .iter()
        .map(|r| r.tc.mean + r.tc.std)
        .fold(10.0_f64, f64::max)
        .min(100.0)
        .max(1.0);
    let y = |v: f64| top + plot_h * (1.0 - (v / max).clamp(0.0, 1.0));
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{:.1}" stroke="black"/>"#,
        top + plot_h
    );
    let _ = writeln!(s, r#"<text x="4" y="{:.1}">TC %</text>"#, top - 6.0);
    for tick in 0..=4 {
        let v = max * tick as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="4" y="{:.1}">{v:.0}</text>"#, y(v) + 4.0);
    }
    for (i, r) in rows.iter().enumerate() {
        let x = left + gap + i as f64 * (bar + gap);
        let fill = if r.significance.is_some_and(|s| s.bold) {
            "#2b6cb0"
        } else {
            "#90a4c0"
        };
        let _ = writeln!(
            s,
            r#"<rect x="{x:.1}" y="{:.1}" width="{bar}" height="{:.1}" fill="{fill}"/>"#,
            y(r.tc.mean),
            top + plot_h - y(r.tc.mean)
        );
        if r.runs > 1 {
            let cx = x + bar / 2.0;
            let _ = writeln!(
                s,
                r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>"#,
                y(r.tc.mean + r.tc.std),
                y(r.tc.mean - r.tc.std)
            );
        }
        let lx = x + bar / 2.0;
        let ly = top + plot_h + 12.0;
        let _ = writeln!(
            s,
            r#"<text x="{lx:.1}" y="{ly:.1}" transform="rotate(40 {lx:.1} {ly:.1})">{} ({})</text>"#,
            escape(&r.name),
            r.scenario.as_str()
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Parses a curve written by `mask-eval`.
pub fn parse_mask_csv(text: &str, path: &Path) -> Result<Vec<MaskRow>, HarnessError> {
    let bad = |m: &str| HarnessError::Data(format!("{}: {m}", path.display()));
    let mut lines = text.lines();
    if lines.next() != Some(MASK_CSV_HEADER) {
        return Err(bad("unexpected header"));
    }
    let cell = |c: &str| -> Result<Option<f64>, HarnessError> {
        if c.is_empty() {
            Ok(None)
        } else {
            c.parse::<f64>()
                .map(|v| Some(v / 100.0))
                .map_err(|_| bad("bad number"))
        }
    };
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 4 {
                return Err(bad("expected 4 columns"));
            }
            Ok(MaskRow {
                k: f[0].parse().map_err(|_| bad("bad k"))?,
                kind: parse_kind(f[1]).ok_or_else(|| bad("bad kind"))?,
                seen_tc: cell(f[2])?,
                unseen_tc: cell(f[3])?,
            })
        })
        .collect()
}

/// TC-vs-k curves, one polyline per (kind, scenario) with data.
pub fn mask_svg(rows: &[MaskRow]) -> String {
    let (w, h, left, top) = (420.0, 260.0, 50.0, 20.0);
    let max_k = rows.iter().map(|r| r.k).max().unwrap_or(1).max(1) as f64;
    let x = |k: usize| left + w * k as f64 / max_k;
    let y = |tc: f64| top + h * (1.0 - tc.clamp(0.0, 1.0));
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" font-family="sans-serif" font-size="11">"#,
        left + w + 160.0,
        top + h + 40.0
    );
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{w}" height="{h}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}">masked tokens k</text>"#,
        left + w / 2.0 - 40.0,
        top + h + 30.0
    );
    let _ = writeln!(s, r#"<text x="4" y="{:.1}">TC</text>"#, top - 6.0);
    let series: [(&str, fn(&MaskRow) -> Option<f64>); 2] =
        [("seen", |r| r.seen_tc), ("unseen", |r| r.unseen_tc)];
    let mut legend = 0;
    for kind in ["direction", "object"] {
        for (scenario, get) in series {
            let mut pts: Vec<(usize, f64)> = rows
                .iter()
                .filter(|r| crate::masking::kind_str(r.kind) == kind)
                .filter_map(|r| get(r).map(|tc| (r.k, tc)))
                .collect();
            if pts.is_empty() {
                continue;
            }
            pts.sort_by_key(|p| p.0);
            let color = if kind == "direction" {
                "#c53030"
            } else {
                "#2b6cb0"
            };
            let dash = if scenario == "seen" {
                ""
            } else {
                r#" stroke-dasharray="5,3""#
            };
            let points: Vec<String> = pts
                .iter()
                .map(|&(k, tc)| format!("{:.1},{:.1}", x(k), y(tc)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}"{dash}/>"#,
                points.join(" ")
            );
            let ly = top + 14.0 * (legend as f64 + 1.0);
            let _ = writeln!(
                s,
                r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}"{dash}/><text x="{:.1}" y="{:.1}">{kind} ({scenario})</text>"#,
                left + w + 10.0,
                left + w + 30.0,
                left + w + 34.0,
                ly + 4.0
            );
            legend += 1;
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Mean oracle TC per sub-task over every `oracle.json` found.
pub fn oracle_csv(files: &[Vec<OracleRow>]) -> String {
    let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for rows in files {
        for r in rows {
            acc.entry(r.subtask.clone()).or_default().push(r.tc * 100.0);
        }
    }
    let mut s = String::from("subtask,models,tc_mean,tc_std\n");
    for (sub, tcs) in acc {
        let m = MeanStd::of(&tcs);
        let _ = writeln!(s, "{sub},{},{:.2},{:.2}", tcs.len(), m.mean, m.std);
    }
    s
}

/// Files written by [`report`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReportFiles {
    pub written: Vec<PathBuf>,
}

/// Scans `dir` for run directories, mask curves and oracle results and
/// writes the tables and figures into `out`.
pub fn report(dir: &Path, out: &Path, baseline: &str) -> Result<ReportFiles, HarnessError> {
    if !dir.is_dir() {
        return Err(HarnessError::Data(format!(
            "results directory {} not found",
            dir.display()
        )));
    }
    let mut files = Vec::new();
    walk(dir, &mut files)?;
    let runs = scan_runs(dir)?;
    let mut mask_rows = Vec::new();
    for p in files_named(&files, |n| n.starts_with("mask-") && n.ends_with(".csv")) {
        mask_rows.extend(parse_mask_csv(&read(p)?, p)?);
    }
    let mut oracle = Vec::new();
    for p in files_named(&files, |n| n == ORACLE_FILE) {
        let rows: Vec<OracleRow> = serde_json::from_str(&read(p)?)
            .map_err(|e| HarnessError::Data(format!("{}: {e}", p.display())))?;
        oracle.push(rows);
    }
    if runs.is_empty() && mask_rows.is_empty() && oracle.is_empty() {
        return Err(HarnessError::Data(format!(
            "no {METRICS_FILE}, mask curve or {ORACLE_FILE} under {}",
            dir.display()
        )));
    }
    crate::data::create_dir(out)?;
    let mut written = ReportFiles::default();
    let mut emit = |name: &str, text: String| -> Result<(), HarnessError> {
        let path = out.join(name);
        std::fs::write(&path, text)
            .map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display())))?;
        written.written.push(path);
        Ok(())
    };
    if !runs.is_empty() {
        let rows = summarize(&runs, baseline);
        emit(RESULTS_CSV, results_csv(&rows))?;
        emit(RESULTS_SVG, results_svg(&rows))?;
    }
    if !mask_rows.is_empty() {
        emit(MASK_CSV, crate::masking::mask_csv(&mask_rows))?;
        emit(MASK_SVG, mask_svg(&mask_rows))?;
    }
    if !oracle.is_empty() {
        emit(ORACLE_CSV, oracle_csv(&oracle))?;
    }
    Ok(written)
}

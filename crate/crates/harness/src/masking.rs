//! Token masking sweeps: train and test with the first `k` lexicon entries
//! masked, for every `k`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use streetnav_core::tokenizer::LexiconKind;

use crate::config::{ExperimentConfig, MaskSetting, Scenario};
use crate::data::load_lexicon;
use crate::run::{run_experiment, Inputs};
use crate::HarnessError;

pub const MASK_CSV_HEADER: &str = "k,kind,seen_tc,unseen_tc";

/// One point of the curve; a scenario left out of the sweep is `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskRow {
    pub k: usize,
    pub kind: LexiconKind,
    pub seen_tc: Option<f64>,
    pub unseen_tc: Option<f64>,
}

impl MaskRow {
    pub fn csv_row(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| format!("{:.2}", x * 100.0)).unwrap_or_default();
        format!(
            "{},{},{},{}",
            self.k,
            kind_str(self.kind),
            cell(self.seen_tc),
            cell(self.unseen_tc)
        )
    }
}

pub fn kind_str(kind: LexiconKind) -> &'static str {
    match kind {
        LexiconKind::Direction => "direction",
        LexiconKind::Object => "object",
    }
}

pub fn parse_kind(s: &str) -> Option<LexiconKind> {
    match s {
        "direction" => Some(LexiconKind::Direction),
        "object" => Some(LexiconKind::Object),
        _ => None,
    }
}

pub fn mask_csv(rows: &[MaskRow]) -> String {
    let mut s = String::from(MASK_CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Runs the sweep. Each `(k, scenario)` pair is a full training run whose
/// directory is `out/{kind}-k{k}/{scenario}` when `out` is given; the curve
/// is written to `out/mask-{kind}.csv`.
pub fn mask_eval(
    cfg: &ExperimentConfig,
    inputs: &mut Inputs,
    kind: LexiconKind,
    ks: &[usize],
    scenarios: &[Scenario],
    out: Option<&Path>,
    threads: usize,
) -> Result<Vec<MaskRow>, HarnessError> {
    if ks.is_empty() {
        return Err(HarnessError::Config("empty k list".into()));
    }
    inputs.lexicon = Some(load_lexicon(&cfg.world, kind)?);
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let mut row = MaskRow {
            k,
            kind,
            seen_tc: None,
            unseen_tc: None,
        };
        for &scenario in scenarios {
            let run_cfg = ExperimentConfig {
                scenario,
                mask: Some(MaskSetting { lexicon: kind, k }),
                ..cfg.clone()
            };
            let dir = out.map(|o| {
                o.join(format!("{}-k{k}", kind_str(kind)))
                    .join(scenario.as_str())
            });
            let result = run_experiment(&run_cfg, inputs, dir.as_deref(), threads, |_| {})?;
            let tc = Some(result.report.aggregate.tc);
            match scenario {
                Scenario::Seen => row.seen_tc = tc,
                Scenario::Unseen => row.unseen_tc = tc,
            }
        }
        rows.push(row);
    }
    if let Some(o) = out {
        crate::data::create_dir(o)?;
        let path = o.join(format!("mask-{}.csv", kind_str(kind)));
        std::fs::write(&path, mask_csv(&rows))
            .map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display())))?;
    }
    Ok(rows)
}

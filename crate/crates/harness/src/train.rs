//! Teacher-forced training with dev-SPD model selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use streetnav_core::env::NavInstance;
use streetnav_core::metrics::Aggregate;
use streetnav_orar::{teacher_forced_loss, Observer, OrarModel, TeacherExample};
use streetnav_tensor::layers::Dropout;
use streetnav_tensor::{retain_freed_memory, AdamConfig, AdamState, Tape};

use crate::config::ExperimentConfig;
use crate::eval::{evaluate, EvalContext};
use crate::HarnessError;

/// Instances a run trains and selects on.
#[derive(Clone, Copy)]
pub struct TrainData<'a> {
    pub ctx: EvalContext<'a>,
    pub train: &'a [NavInstance],
    pub dev: &'a [NavInstance],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean teacher-forced loss over the epoch's batches.
    pub loss: f64,
    pub dev: Option<Aggregate>,
}

impl EpochLog {
    pub fn line(&self) -> String {
        match &self.dev {
            Some(d) => format!(
                "epoch {:>3} loss {:.4} dev tc {:.2} spd {:.3} ndtw {:.2}",
                self.epoch,
                self.loss,
                d.tc * 100.0,
                d.spd,
                d.ndtw * 100.0
            ),
            None => format!("epoch {:>3} loss {:.4}", self.epoch, self.loss),
        }
    }
}

pub struct TrainOutcome {
    /// Parameters of the selected epoch.
    pub model: OrarModel,
    pub best_epoch: usize,
    pub best_dev_spd: Option<f64>,
    pub log: Vec<EpochLog>,
}

/// Independent random streams derived from the run seed.
fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(k))
}

/// Trains a fresh model on `data.train`. Dev SPD is measured every
/// `eval_every` epochs and after the last one, and the parameters with the
/// lowest mean dev SPD are returned (the last epoch when there is no dev
/// set). `progress` sees every epoch's log entry.
pub fn train(
    cfg: &ExperimentConfig,
    data: &TrainData<'_>,
    mut progress: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, HarnessError> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(HarnessError::Data("empty training split".into()));
    }
    retain_freed_memory();
    let ctx = &data.ctx;
    let mut model_cfg = cfg.model.clone();
    model_cfg.vocab_size = ctx.bpe.vocab_size();
    let mut model = OrarModel::new(model_cfg, cfg.seed)?;
    let observer = Observer::new(ctx.graph, ctx.stores);

    let mut examples = data
        .train
        .iter()
        .map(|i| TeacherExample::new(ctx.graph, i, Vec::new()))
        .collect::<Result<Vec<_>, _>>()?;
    let texts: Vec<String> = data.train.iter().map(|i| ctx.instruction(i)).collect();
    let dev: &[NavInstance] = match cfg.dev_limit {
        0 => data.dev,
        n => &data.dev[..n.min(data.dev.len())],
    };

    let mut shuffle_rng = stream(cfg.seed, 1);
    let mut dropout_rng = stream(cfg.seed, 2);
    let mut bpe_rng = stream(cfg.seed, 3);
    let mut adam = AdamState::new(
        &model.store,
        AdamConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        },
    );
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, streetnav_tensor::ParamStore)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            for &i in chunk {
                examples[i].tokens = ctx.bpe.encode(&texts[i], cfg.bpe_dropout, &mut bpe_rng);
            }
            let batch: Vec<&TeacherExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let mut tape = Tape::new();
            let vars = model.store.bind(&mut tape);
            let mut dropout = Dropout {
                p: cfg.model.dropout,
                training: true,
                rng: &mut dropout_rng,
            };
            let loss =
                teacher_forced_loss(&model, &mut tape, &vars, &observer, &batch, &mut dropout)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(HarnessError::Runtime(format!(
                    "non-finite loss at epoch {epoch}"
                )));
            }
            loss_sum += value;
            batches += 1;
            let grads = tape.backward(loss)?;
            model.store.zero_grad();
            model.store.accumulate(&tape, &grads, &vars);
            adam.update(&mut model.store)?;
        }
        let evaluate_now = !dev.is_empty() && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs);
        let dev_metrics = if evaluate_now {
            let (report, _) = evaluate(&model, ctx, dev)?;
            let spd = report.aggregate.spd;
            if best.as_ref().is_none_or(|(b, _, _)| spd < *b) {
                best = Some((spd, epoch, model.store.clone()));
            }
            Some(report.aggregate)
        } else {
            None
        };
        let entry = EpochLog {
            epoch,
            loss: loss_sum / batches as f64,
            dev: dev_metrics,
        };
        progress(&entry);
        log.push(entry);
    }

    let (best_epoch, best_dev_spd) = match best {
        Some((spd, epoch, store)) => {
            model.store.copy_values_from(&store)?;
            (epoch, Some(spd))
        }
        None => (cfg.epochs, None),
    };
    Ok(TrainOutcome {
        model,
        best_epoch,
        best_dev_spd,
        log,
    })
}

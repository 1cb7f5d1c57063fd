//! Greedy and oracle-assisted rollouts and their metrics.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use streetnav_core::env::{
    run_episode, Action, AgentState, EnvironmentGraph, EpisodeStepper, NavInstance, StepContext,
    Trajectory,
};
use streetnav_core::metrics::{InstanceMetrics, MetricsReport};
use streetnav_core::pano::PanoFeatureStore;
use streetnav_core::tokenizer::{mask_text, BpeModel, MaskLexicon};
use streetnav_orar::{argmax_action, rollout, Observer, OrarModel, RolloutRequest, TeacherExample};

use crate::HarnessError;

/// Episodes decoded together.
pub const EVAL_BATCH: usize = 64;

/// Everything a rollout needs besides the model.
#[derive(Clone, Copy)]
pub struct EvalContext<'a> {
    pub graph: &'a EnvironmentGraph,
    pub stores: &'a [&'a PanoFeatureStore],
    pub bpe: &'a BpeModel,
    pub mask: Option<(&'a MaskLexicon, usize)>,
    pub max_steps: usize,
    pub threads: usize,
}

impl EvalContext<'_> {
    pub fn instruction(&self, inst: &NavInstance) -> String {
        match self.mask {
            Some((lex, k)) => mask_text(&inst.instruction, lex, k),
            None => inst.instruction.clone(),
        }
    }
}

/// The three sub-tasks of the oracle protocol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subtask {
    Orientation,
    Directions,
    Stopping,
}

impl Subtask {
    pub const ALL: [Subtask; 3] = [Subtask::Orientation, Subtask::Directions, Subtask::Stopping];

    pub fn as_str(self) -> &'static str {
        match self {
            Subtask::Orientation => "orientation",
            Subtask::Directions => "directions",
            Subtask::Stopping => "stopping",
        }
    }

    pub fn parse(s: &str) -> Option<Subtask> {
        Subtask::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

/// Gold action for every state on an instance's gold trajectory.
#[derive(Clone, Debug)]
pub struct GoldIndex {
    actions: HashMap<(usize, u64), Action>,
}

impl GoldIndex {
    pub fn new(graph: &EnvironmentGraph, inst: &NavInstance) -> Result<Self, HarnessError> {
        let ex = TeacherExample::new(graph, inst, Vec::new())?;
        let actions = ex
            .contexts
            .iter()
            .zip(&ex.actions)
            .map(|(c, &a)| ((c.state.node, c.state.heading.to_bits()), a))
            .collect();
        Ok(GoldIndex { actions })
    }

    /// The gold action while the agent is on the gold trajectory.
    pub fn action(&self, state: AgentState) -> Option<Action> {
        self.actions
            .get(&(state.node, state.heading.to_bits()))
            .copied()
    }
}

/// Which sub-task a timestep's movement decision belongs to: the first step
/// is orientation, later steps at nodes with three or more outgoing edges
/// are directions, everything else is always oracle-supplied.
pub fn movement_owner(graph: &EnvironmentGraph, ctx: &StepContext) -> Option<Subtask> {
    if ctx.t == 0 {
        Some(Subtask::Orientation)
    } else if graph.out_degree(ctx.state.node) >= 3 {
        Some(Subtask::Directions)
    } else {
        None
    }
}

fn best_move(logits: &[f64]) -> Action {
    argmax_action(&logits[..3])
}

/// Action under the oracle protocol. With `subtask` set, the model decides
/// that sub-task and gold actions fill in the rest; with `None` every
/// decision is gold. Off the gold trajectory no oracle exists and the model
/// decides everything.
pub fn oracle_action(
    graph: &EnvironmentGraph,
    gold: &GoldIndex,
    subtask: Option<Subtask>,
    ctx: &StepContext,
    logits: &[f64],
) -> Action {
    let Some(g) = gold.action(ctx.state) else {
        return argmax_action(logits);
    };
    match subtask {
        Some(Subtask::Stopping) => {
            if argmax_action(logits) == Action::Stop {
                Action::Stop
            } else if g == Action::Stop {
                best_move(logits)
            } else {
                g
            }
        }
        Some(s) if g != Action::Stop && movement_owner(graph, ctx) == Some(s) => best_move(logits),
        _ => g,
    }
}

/// How actions are chosen during a rollout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Policy {
    Greedy,
    /// Oracle protocol; `None` oracles all three sub-tasks.
    Oracle(Option<Subtask>),
}

fn one_hot(a: Action) -> [f64; 4] {
    let mut l = [0.0; 4];
    l[a.code() as usize] = 1.0;
    l
}

fn run_chunk(
    model: Option<&OrarModel>,
    ctx: &EvalContext<'_>,
    instances: &[NavInstance],
    golds: &[GoldIndex],
    policy: Policy,
) -> Result<Vec<Trajectory>, HarnessError> {
    let graph = ctx.graph;
    let choose = |b: usize, c: &StepContext, logits: &[f64]| match policy {
        Policy::Greedy => argmax_action(logits),
        Policy::Oracle(sub) => oracle_action(graph, &golds[b], sub, c, logits),
    };
    let Some(model) = model else {
        // Gold-replay stand-in for the model: its logits favour the gold
        // action and stop once off the gold trajectory.
        let mut out = Vec::with_capacity(instances.len());
        for (b, inst) in instances.iter().enumerate() {
            let mut stepper = EpisodeStepper::new(graph, inst.start_state(graph)?, ctx.max_steps)?;
            while !stepper.done() {
                let c = stepper.context();
                let logits = one_hot(golds[b].action(c.state).unwrap_or(Action::Stop));
                stepper.apply(choose(b, &c, &logits))?;
            }
            out.push(stepper.finish());
        }
        return Ok(out);
    };
    let observer = Observer::new(graph, ctx.stores);
    let requests = instances
        .iter()
        .map(|inst| {
            Ok(RolloutRequest {
                start: inst.start_state(graph)?,
                tokens: ctx.bpe.encode_plain(&ctx.instruction(inst)),
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(rollout(model, &observer, &requests, ctx.max_steps, choose)?)
}

/// Rolls out every instance, in batches of [`EVAL_BATCH`] spread over
/// `ctx.threads` workers. `model: None` replaces the model by gold replay.
pub fn run_policy(
    model: Option<&OrarModel>,
    ctx: &EvalContext<'_>,
    instances: &[NavInstance],
    policy: Policy,
) -> Result<Vec<Trajectory>, HarnessError> {
    let golds = match policy {
        Policy::Oracle(_) => instances
            .iter()
            .map(|i| GoldIndex::new(ctx.graph, i))
            .collect::<Result<Vec<_>, _>>()?,
        Policy::Greedy if model.is_none() => instances
            .iter()
            .map(|i| GoldIndex::new(ctx.graph, i))
            .collect::<Result<Vec<_>, _>>()?,
        Policy::Greedy => Vec::new(),
    };
    let chunks: Vec<(usize, &[NavInstance])> = instances
        .chunks(EVAL_BATCH)
        .enumerate()
        .map(|(i, c)| (i * EVAL_BATCH, c))
        .collect();
    let gold_slice = |start: usize, n: usize| -> &[GoldIndex] {
        if golds.is_empty() {
            &[]
        } else {
            &golds[start..start + n]
        }
    };
    let threads = ctx.threads.max(1).min(chunks.len().max(1));
    let mut results: Vec<Option<Result<Vec<Trajectory>, HarnessError>>> =
        (0..chunks.len()).map(|_| None).collect();
    if threads == 1 {
        for (k, &(start, chunk)) in chunks.iter().enumerate() {
            results[k] = Some(run_chunk(
                model,
                ctx,
                chunk,
                gold_slice(start, chunk.len()),
                policy,
            ));
        }
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|w| {
                    let chunks = &chunks;
                    let gold_slice = &gold_slice;
                    scope.spawn(move || {
                        chunks
                            .iter()
                            .enumerate()
                            .skip(w)
                            .step_by(threads)
                            .map(|(k, &(start, chunk))| {
                                (
                                    k,
                                    run_chunk(
                                        model,
                                        ctx,
                                        chunk,
                                        gold_slice(start, chunk.len()),
                                        policy,
                                    ),
                                )
                            })
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (k, r) in h.join().expect("rollout worker panicked") {
                    results[k] = Some(r);
                }
            }
        });
    }
    let mut out = Vec::with_capacity(instances.len());
    for r in results {
        out.extend(r.expect("every chunk ran")?);
    }
    Ok(out)
}

/// Per-instance and aggregate metrics of `trajectories` against the gold
/// routes.
pub fn metrics(
    graph: &EnvironmentGraph,
    instances: &[NavInstance],
    trajectories: &[Trajectory],
) -> Result<MetricsReport, HarnessError> {
    if instances.len() != trajectories.len() {
        return Err(HarnessError::Runtime(format!(
            "{} trajectories for {} instances",
            trajectories.len(),
            instances.len()
        )));
    }
    let per = instances
        .iter()
        .zip(trajectories)
        .map(|(inst, t)| {
            let gold = inst.resolve(graph)?;
            Ok(InstanceMetrics::compute(graph, &inst.id, &t.path(), &gold)?)
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(MetricsReport::from_instances(per))
}

/// Uniformly random actions (stop included), one seeded stream per
/// instance.
pub fn random_policy(
    ctx: &EvalContext<'_>,
    instances: &[NavInstance],
    seed: u64,
) -> Result<(MetricsReport, Vec<Trajectory>), HarnessError> {
    let trajectories = instances
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ i as u64);
            run_episode(ctx.graph, inst, |_| rng.random_range(0..4), ctx.max_steps)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((metrics(ctx.graph, instances, &trajectories)?, trajectories))
}

/// Greedy rollouts plus metrics.
pub fn evaluate(
    model: &OrarModel,
    ctx: &EvalContext<'_>,
    instances: &[NavInstance],
) -> Result<(MetricsReport, Vec<Trajectory>), HarnessError> {
    let trajectories = run_policy(Some(model), ctx, instances, Policy::Greedy)?;
    Ok((metrics(ctx.graph, instances, &trajectories)?, trajectories))
}

/// Oracle-protocol rollouts plus metrics; `model: None` uses gold replay in
/// place of the model.
pub fn oracle_eval(
    model: Option<&OrarModel>,
    ctx: &EvalContext<'_>,
    instances: &[NavInstance],
    subtask: Option<Subtask>,
) -> Result<(MetricsReport, Vec<Trajectory>), HarnessError> {
    let trajectories = run_policy(model, ctx, instances, Policy::Oracle(subtask))?;
    Ok((metrics(ctx.graph, instances, &trajectories)?, trajectories))
}

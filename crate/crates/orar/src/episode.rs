use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streetnav_core::env::{
    gold_actions, Action, AgentState, EnvironmentGraph, EpisodeStepper, NavInstance, StepContext,
    Trajectory,
};
use streetnav_core::pano::{PanoFeatureStore, PanoVariant, SliceSet};
use streetnav_tensor::layers::{Dropout, LstmState};
use streetnav_tensor::{Tape, Tensor, Var};

use crate::model::{DecoderState, OrarModel, StepInput};
use crate::OrarError;

/// Graph plus the feature stores the agent observes.
#[derive(Clone, Copy)]
pub struct Observer<'a> {
    pub graph: &'a EnvironmentGraph,
    stores: &'a [&'a PanoFeatureStore],
}

impl<'a> Observer<'a> {
    pub fn new(graph: &'a EnvironmentGraph, stores: &'a [&'a PanoFeatureStore]) -> Self {
        Observer { graph, stores }
    }

    /// Slices of `variant` seen from `state`; `None` for variant none.
    pub fn observe(
        &self,
        variant: PanoVariant,
        state: AgentState,
    ) -> Result<Option<SliceSet>, OrarError> {
        if variant == PanoVariant::None {
            return Ok(None);
        }
        let store = self
            .stores
            .iter()
            .find(|s| s.variant() == variant)
            .ok_or_else(|| OrarError::Features(format!("no {} feature store", variant.as_str())))?;
        Ok(Some(store.extract(self.graph.id(state.node), state.heading)?))
    }
}

/// Gold replay of one instance: the contexts the agent sees when following
/// the gold actions, and those actions.
#[derive(Clone, Debug)]
pub struct TeacherExample {
    pub id: String,
    pub tokens: Vec<usize>,
    pub contexts: Vec<StepContext>,
    pub actions: Vec<Action>,
}

impl TeacherExample {
    pub fn new(
        graph: &EnvironmentGraph,
        instance: &NavInstance,
        tokens: Vec<usize>,
    ) -> Result<Self, OrarError> {
        let data = |source| OrarError::Data {
            id: instance.id.clone(),
            source,
        };
        let route = instance.resolve(graph).map_err(data)?;
        let actions = gold_actions(graph, &route, instance.start_heading).map_err(data)?;
        let start = instance.start_state(graph).map_err(data)?;
        let mut stepper = EpisodeStepper::new(graph, start, actions.len()).map_err(data)?;
        let mut contexts = Vec::with_capacity(actions.len());
        for &a in &actions {
            contexts.push(stepper.context());
            stepper.apply(a).map_err(data)?;
        }
        Ok(TeacherExample {
            id: instance.id.clone(),
            tokens,
            contexts,
            actions,
        })
    }
}

fn step_input<'s>(ctx: &StepContext, slices: Option<&'s SliceSet>) -> StepInput<'s> {
    StepInput {
        t: ctx.t,
        prev_action: ctx.prev_action,
        junction: ctx.junction_category,
        heading_delta: ctx.heading_delta,
        slices,
    }
}

/// Mean cross entropy over every gold step of every example in `batch`,
/// with the decoder fed gold contexts.
///
/// Examples are processed longest first so that each step only computes the
/// rows of examples that still have actions left.
pub fn teacher_forced_loss<R: Rng + ?Sized>(
    model: &OrarModel,
    tape: &mut Tape,
    vars: &[Var],
    observer: &Observer<'_>,
    batch: &[&TeacherExample],
    dropout: &mut Dropout<'_, R>,
) -> Result<Var, OrarError> {
    if batch.is_empty() {
        return Err(OrarError::EmptyInput("empty batch".into()));
    }
    if let Some(ex) = batch.iter().find(|e| e.actions.is_empty()) {
        return Err(OrarError::EmptyInput(format!("instance `{}` has no gold actions", ex.id)));
    }
    let mut order: Vec<&TeacherExample> = batch.to_vec();
    order.sort_by(|a, b| b.actions.len().cmp(&a.actions.len()));
    let tokens: Vec<Vec<usize>> = order.iter().map(|e| e.tokens.clone()).collect();
    let mut encoded = model.encode(tape, vars, &tokens, dropout)?;
    let mut state = model.init_state(tape, &encoded);
    let steps = order[0].actions.len();
    let mut logits = Vec::with_capacity(steps);
    let mut targets = Vec::new();
    for t in 0..steps {
        let active = order.iter().take_while(|e| e.actions.len() > t).count();
        if active < encoded.batch {
            encoded = encoded.truncate(tape, active)?;
            state = state.truncate(tape, active)?;
        }
        let variant = model.config.variant_at(t);
        let slices = order[..active]
            .iter()
            .map(|e| observer.observe(variant, e.contexts[t].state))
            .collect::<Result<Vec<_>, _>>()?;
        let inputs: Vec<StepInput<'_>> = order[..active]
            .iter()
            .zip(&slices)
            .map(|(e, s)| step_input(&e.contexts[t], s.as_ref()))
            .collect();
        let out = model.decode_step(tape, vars, state, &encoded, &inputs, variant, dropout)?;
        state = out.state;
        logits.push(out.logits);
        targets.extend(order[..active].iter().map(|e| e.actions[t].code() as usize));
    }
    let stacked = tape.stack_rows(&logits)?;
    Ok(tape.cross_entropy(stacked, &targets, None)?)
}

/// Highest logit; ties go to the lowest action code.
pub fn argmax_action(logits: &[f64]) -> Action {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().take(Action::ALL.len()) {
        if v > logits[best] {
            best = i;
        }
    }
    Action::ALL[best]
}

/// Start state and instruction tokens of one episode.
#[derive(Clone, Debug)]
pub struct RolloutRequest {
    pub start: AgentState,
    pub tokens: Vec<usize>,
}

/// Runs all episodes in lockstep without dropout. At every step `choose`
/// receives the episode index, its context and the model's logits and
/// returns the action to apply.
pub fn rollout<F>(
    model: &OrarModel,
    observer: &Observer<'_>,
    requests: &[RolloutRequest],
    max_steps: usize,
    mut choose: F,
) -> Result<Vec<Trajectory>, OrarError>
where
    F: FnMut(usize, &StepContext, &[f64]) -> Action,
{
    if requests.is_empty() {
        return Ok(Vec::new());
    }
    let mut steppers = requests
        .iter()
        .map(|r| EpisodeStepper::new(observer.graph, r.start, max_steps))
        .collect::<Result<Vec<_>, _>>()?;
    let mut tape = Tape::new();
    let vars = model.store.bind(&mut tape);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut dropout = Dropout {
        p: 0.0,
        training: false,
        rng: &mut rng,
    };
    let tokens: Vec<Vec<usize>> = requests.iter().map(|r| r.tokens.clone()).collect();
    let encoded = model.encode(&mut tape, &vars, &tokens, &mut dropout)?;
    let mut state = model.init_state(&mut tape, &encoded);
    let mark = tape.len();
    let mut t = 0;
    while steppers.iter().any(|s| !s.done()) {
        let variant = model.config.variant_at(t);
        let contexts: Vec<StepContext> = steppers.iter().map(|s| s.context()).collect();
        let slices = contexts
            .iter()
            .map(|c| observer.observe(variant, c.state))
            .collect::<Result<Vec<_>, _>>()?;
        let inputs: Vec<StepInput<'_>> = contexts
            .iter()
            .zip(&slices)
            .map(|(c, s)| step_input(c, s.as_ref()))
            .collect();
        let out = model.decode_step(&mut tape, &vars, state, &encoded, &inputs, variant, &mut dropout)?;
        let logits = tape.value(out.logits).clone();
        // Nothing needs gradients here, so the step's nodes are dropped and
        // only the recurrent state is carried over as constants.
        let carry = |tape: &Tape, s: LstmState| (tape.value(s.h).clone(), tape.value(s.c).clone());
        let first = carry(&tape, out.state.first);
        let second = out.state.second.map(|s| carry(&tape, s));
        tape.truncate(mark);
        let mut restore = |(h, c): (Tensor, Tensor)| LstmState {
            h: tape.constant(h),
            c: tape.constant(c),
        };
        state = DecoderState {
            first: restore(first),
            second: second.map(&mut restore),
        };
        for (b, stepper) in steppers.iter_mut().enumerate() {
            if stepper.done() {
                continue;
            }
            let action = choose(b, &contexts[b], logits.row(b));
            stepper.apply(action)?;
        }
        t += 1;
    }
    Ok(steppers.into_iter().map(EpisodeStepper::finish).collect())
}

/// Greedy decoding of a single episode.
pub fn act_greedy(
    model: &OrarModel,
    observer: &Observer<'_>,
    start: AgentState,
    tokens: Vec<usize>,
    max_steps: usize,
) -> Result<Trajectory, OrarError> {
    let req = [RolloutRequest { start, tokens }];
    let mut out = rollout(model, observer, &req, max_steps, |_, _, l| argmax_action(l))?;
    Ok(out.remove(0))
}

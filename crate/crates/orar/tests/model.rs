mod common;

use common::{eval_dropout, fit, no_dropout, tiny_config, toy, Toy};
use proptest::prelude::*;
use streetnav_core::env::{Action, Termination};
use streetnav_core::pano::{PanoFeatureStore, PanoVariant};
use streetnav_orar::{
    act_greedy, rollout, teacher_forced_loss, argmax_action, Observer, OrarConfig, OrarError,
    OrarModel, RolloutRequest, StepInput, TeacherExample,
};
use streetnav_tensor::layers::Dropout;
use streetnav_tensor::{grad_check, GradCheckConfig, Tape, TensorError};

fn loss_of(model: &OrarModel, toy: &Toy, stores: &[&PanoFeatureStore], batch: &[&TeacherExample]) -> f64 {
    let observer = Observer::new(&toy.world.graph, stores);
    let mut tape = Tape::new();
    let vars = model.store.bind(&mut tape);
    let mut rng = no_dropout();
    let loss = teacher_forced_loss(model, &mut tape, &vars, &observer, batch, &mut eval_dropout(&mut rng)).unwrap();
    tape.value(loss).item()
}

/// Logits of the first decoder step for one example with `tweak` applied to
/// its step input.
fn first_logits(
    model: &OrarModel,
    toy: &Toy,
    ex: &TeacherExample,
    step: usize,
    tweak: impl Fn(&mut StepInput<'_>),
) -> Vec<f64> {
    let stores = toy.store_refs();
    let observer = Observer::new(&toy.world.graph, &stores);
    let mut tape = Tape::new();
    let vars = model.store.bind(&mut tape);
    let mut rng = no_dropout();
    let mut drop = eval_dropout(&mut rng);
    let enc = model.encode(&mut tape, &vars, &[ex.tokens.clone()], &mut drop).unwrap();
    let mut state = model.init_state(&mut tape, &enc);
    let mut logits = Vec::new();
    for t in 0..=step {
        let ctx = ex.contexts[t];
        let variant = model.config.variant_at(t);
        let slices = observer.observe(variant, ctx.state).unwrap();
        let mut input = StepInput {
            t: ctx.t,
            prev_action: ctx.prev_action,
            junction: ctx.junction_category,
            heading_delta: ctx.heading_delta,
            slices: slices.as_ref(),
        };
        if t == step {
            tweak(&mut input);
        }
        let out = model.decode_step(&mut tape, &vars, state, &enc, &[input], variant, &mut drop).unwrap();
        state = out.state;
        logits = tape.value(out.logits).data().to_vec();
    }
    logits
}

fn tiny_toy() -> Toy {
    toy(6, 3, 6)
}

#[test]
fn encode_shapes_and_init_state() {
    let toy = tiny_toy();
    let cfg = OrarConfig {
        vocab_size: toy.bpe.vocab_size(),
        prefinal_dim: 6,
        ..OrarConfig::desk()
    };
    let model = OrarModel::new(cfg, 1).unwrap();
    let mut tape = Tape::new();
    let vars = model.store.bind(&mut tape);
    let mut rng = no_dropout();
    let enc = model.encode(&mut tape, &vars, &[vec![7]], &mut eval_dropout(&mut rng)).unwrap();
    assert_eq!(tape.value(enc.states).shape(), &[1, 128]);
    assert_eq!(tape.value(enc.init_cell).shape(), &[1, 64]);
    let state = model.init_state(&mut tape, &enc);
    assert!(tape.value(state.first.h).data().iter().all(|&v| v == 0.0));

    let enc2 = model.encode(&mut tape, &vars, &[vec![7]], &mut eval_dropout(&mut rng)).unwrap();
    assert_eq!(tape.value(enc.states).data(), tape.value(enc2.states).data());

    let bad = model.encode(&mut tape, &vars, &[vec![toy.bpe.vocab_size()]], &mut eval_dropout(&mut rng));
    assert!(matches!(bad, Err(OrarError::Vocab { .. })));
    assert!(matches!(
        model.encode(&mut tape, &vars, &[vec![]], &mut eval_dropout(&mut rng)),
        Err(OrarError::EmptyInput(_))
    ));
}

#[test]
fn init_cell_gradient_reaches_embeddings() {
    let toy = tiny_toy();
    let model = OrarModel::new(tiny_config(toy.bpe.vocab_size(), 6), 2).unwrap();
    let mut tape = Tape::new();
    let vars = model.store.bind(&mut tape);
    let mut rng = no_dropout();
    let enc = model.encode(&mut tape, &vars, &[vec![5, 9, 11]], &mut eval_dropout(&mut rng)).unwrap();
    let s = tape.sum(enc.init_cell);
    let grads = tape.backward(s).unwrap();
    let id = model.store.find("token_emb").unwrap();
    let g = grads.get(vars[id.0]).unwrap();
    let dim = model.config.token_emb;
    for tok in [5, 9, 11] {
        assert!(g[tok * dim..(tok + 1) * dim].iter().any(|&v| v != 0.0), "token {tok}");
    }
    assert!(g[6 * dim..7 * dim].iter().all(|&v| v == 0.0));
}

fn ablation_configs(vocab: usize) -> Vec<(&'static str, OrarConfig)> {
    let base = tiny_config(vocab, 6);
    vec![
        ("full", base.clone()),
        ("no-junction", OrarConfig { use_junction: false, ..base.clone() }),
        ("no-heading-delta", OrarConfig { use_heading_delta: false, ..base.clone() }),
        ("no-second-rnn", OrarConfig { use_second_rnn: false, ..base.clone() }),
        ("no-text-attention", OrarConfig { use_text_attention: false, ..base.clone() }),
        ("no-image-attention", OrarConfig { use_image_attention: false, ..base.clone() }),
        ("semseg", OrarConfig { visual_variant: PanoVariant::Semseg, ..base.clone() }),
        ("fourth", OrarConfig { visual_variant: PanoVariant::FourthToLast, ..base.clone() }),
        ("no-image", OrarConfig { visual_variant: PanoVariant::None, ..base.clone() }),
        (
            "mixed",
            OrarConfig {
                visual_variant: PanoVariant::Semseg,
                first_step_visual_variant: Some(PanoVariant::FourthToLast),
                ..base
            },
        ),
    ]
}

#[test]
fn logits_have_four_entries_for_every_config() {
    let toy = tiny_toy();
    let ex = &toy.examples()[0];
    for (name, cfg) in ablation_configs(toy.bpe.vocab_size()) {
        let model = OrarModel::new(cfg, 3).unwrap();
        for step in [0, 1] {
            assert_eq!(first_logits(&model, &toy, ex, step, |_| {}).len(), 4, "{name}");
        }
    }
}

#[test]
fn gradient_check_full_model() {
    let toy = tiny_toy();
    let examples = toy.examples();
    let batch: Vec<&TeacherExample> = examples.iter().take(3).collect();
    let stores = toy.store_refs();
    let observer = Observer::new(&toy.world.graph, &stores);
    for (name, cfg) in ablation_configs(toy.bpe.vocab_size()) {
        let mut model = OrarModel::new(cfg, 4).unwrap();
        let probe = model.clone();
        let check = GradCheckConfig {
            max_coords: 24,
            ..GradCheckConfig::default()
        };
        let report = grad_check(
            &mut model.store,
            |tape, vars| {
                let mut rng = no_dropout();
                teacher_forced_loss(&probe, tape, vars, &observer, &batch, &mut eval_dropout(&mut rng))
                    .map_err(|e| TensorError::Argument {
                        op: "loss",
                        detail: e.to_string(),
                    })
            },
            &check,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-3, "{name}: {:?}", report.worst);
    }
}

#[test]
fn disabled_junction_and_heading_delta_are_disconnected() {
    let toy = tiny_toy();
    let examples = toy.examples();
    let ex = &examples[0];
    let vocab = toy.bpe.vocab_size();
    let no_j = OrarModel::new(OrarConfig { use_junction: false, ..tiny_config(vocab, 6) }, 5).unwrap();
    let base = first_logits(&no_j, &toy, ex, 1, |_| {});
    for j in 0..4 {
        let l = first_logits(&no_j, &toy, ex, 1, |i| i.junction = j);
        assert_eq!(base.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), l.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
    let no_d = OrarModel::new(OrarConfig { use_heading_delta: false, ..tiny_config(vocab, 6) }, 5).unwrap();
    let base = first_logits(&no_d, &toy, ex, 1, |_| {});
    for d in [-0.99, -0.25, 0.5, 1.0] {
        assert_eq!(base, first_logits(&no_d, &toy, ex, 1, |i| i.heading_delta = d));
    }

    // the enabled channels do move the logits
    let full = OrarModel::new(tiny_config(vocab, 6), 5).unwrap();
    let a = first_logits(&full, &toy, ex, 1, |i| i.junction = 0);
    let b = first_logits(&full, &toy, ex, 1, |i| i.junction = 3);
    assert_ne!(a, b);
    let a = first_logits(&full, &toy, ex, 1, |i| i.heading_delta = -0.5);
    let b = first_logits(&full, &toy, ex, 1, |i| i.heading_delta = 0.5);
    assert_ne!(a, b);
}

#[test]
fn no_image_model_ignores_the_feature_store() {
    let toy = tiny_toy();
    let other = toy_features_from_other_seed();
    let examples = toy.examples();
    let batch: Vec<&TeacherExample> = examples.iter().collect();
    let cfg = OrarConfig {
        visual_variant: PanoVariant::None,
        use_junction: false,
        use_heading_delta: false,
        ..tiny_config(toy.bpe.vocab_size(), 6)
    };
    let model = OrarModel::new(cfg, 6).unwrap();
    let with = loss_of(&model, &toy, &toy.store_refs(), &batch);
    let swapped = loss_of(&model, &toy, &[&other], &batch);
    let without = loss_of(&model, &toy, &[], &batch);
    assert_eq!(with.to_bits(), swapped.to_bits());
    assert_eq!(with.to_bits(), without.to_bits());

    // a visual model does notice the swap
    let visual = OrarModel::new(tiny_config(toy.bpe.vocab_size(), 6), 6).unwrap();
    assert_ne!(
        loss_of(&visual, &toy, &toy.store_refs(), &batch),
        loss_of(&visual, &toy, &[&other], &batch)
    );
}

fn toy_features_from_other_seed() -> PanoFeatureStore {
    let t = toy(2, 3, 6);
    let spec = streetnav_core::worldgen::WorldSpec {
        noise: 2.0,
        seed: 99,
        ..t.world.spec.clone()
    };
    let w = streetnav_core::worldgen::World::from_parts(spec, t.world.graph.clone(), &t.world.landmarks_json()).unwrap();
    w.features(PanoVariant::PreFinal).unwrap()
}

#[test]
fn zero_head_gives_uniform_loss() {
    let toy = tiny_toy();
    let examples = toy.examples();
    let batch: Vec<&TeacherExample> = examples.iter().collect();
    let mut model = OrarModel::new(tiny_config(toy.bpe.vocab_size(), 6), 7).unwrap();
    for name in ["head.weight", "head.bias"] {
        let id = model.store.find(name).unwrap();
        model.store.value_mut(id).fill(0.0);
    }
    let loss = loss_of(&model, &toy, &toy.store_refs(), &batch);
    assert!((loss - 4f64.ln()).abs() < 1e-12, "{loss}");
}

#[test]
fn batch_loss_is_step_weighted_mean_of_instance_losses() {
    let toy = tiny_toy();
    let examples = toy.examples();
    let model = OrarModel::new(tiny_config(toy.bpe.vocab_size(), 6), 8).unwrap();
    let stores = toy.store_refs();
    let singles: Vec<f64> = examples.iter().map(|e| loss_of(&model, &toy, &stores, &[e])).collect();
    let steps: Vec<f64> = examples.iter().map(|e| e.actions.len() as f64).collect();
    let expected = singles.iter().zip(&steps).map(|(l, n)| l * n).sum::<f64>() / steps.iter().sum::<f64>();
    let batch: Vec<&TeacherExample> = examples.iter().collect();
    let got = loss_of(&model, &toy, &stores, &batch);
    assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
}

#[test]
fn overfitting_five_instances_drives_loss_down_and_replays_routes() {
    let toy = toy(5, 11, 8);
    let examples = toy.examples();
    let cfg = OrarConfig {
        vocab_size: toy.bpe.vocab_size(),
        encoder_hidden: 32,
        decoder_hidden: 32,
        visual_ffn: [32, 32],
        dropout: 0.0,
        attention_dropout: 0.0,
        prefinal_dim: 8,
        ..OrarConfig::desk()
    };
    let mut model = OrarModel::new(cfg, 9).unwrap();
    let losses = fit(&mut model, &toy, &examples, 30, 1e-2);
    assert!((losses[0] - 4f64.ln()).abs() < 0.3, "{}", losses[0]);
    assert!(losses[29] < 0.5, "{losses:?}");

    let more = fit(&mut model, &toy, &examples, 120, 1e-2);
    assert!(more.last().unwrap() < &0.05, "{more:?}");
    let stores = toy.store_refs();
    let observer = Observer::new(&toy.world.graph, &stores);
    for (inst, ex) in toy.instances.iter().zip(&examples) {
        let start = inst.start_state(&toy.world.graph).unwrap();
        let traj = act_greedy(&model, &observer, start, ex.tokens.clone(), 80).unwrap();
        assert_eq!(traj.actions(), ex.actions, "{}", inst.instruction);
        assert_eq!(traj.path(), inst.resolve(&toy.world.graph).unwrap());
    }
}

#[test]
fn random_model_rollouts_terminate() {
    let toy = tiny_toy();
    let examples = toy.examples();
    let model = OrarModel::new(tiny_config(toy.bpe.vocab_size(), 6), 10).unwrap();
    let stores = toy.store_refs();
    let observer = Observer::new(&toy.world.graph, &stores);
    let reqs: Vec<RolloutRequest> = toy
        .instances
        .iter()
        .zip(&examples)
        .map(|(i, e)| RolloutRequest {
            start: i.start_state(&toy.world.graph).unwrap(),
            tokens: e.tokens.clone(),
        })
        .collect();
    let trajs = rollout(&model, &observer, &reqs, 15, |_, _, l| argmax_action(l)).unwrap();
    assert_eq!(trajs.len(), reqs.len());
    for t in &trajs {
        match t.terminated {
            Termination::Stopped => assert_eq!(t.steps.last().unwrap().action, Action::Stop),
            Termination::StepLimit => assert_eq!(t.steps.len(), 15),
        }
    }
    // lockstep batches agree with one-at-a-time decoding
    for (r, t) in reqs.iter().zip(&trajs) {
        let single = act_greedy(&model, &observer, r.start, r.tokens.clone(), 15).unwrap();
        assert_eq!(&single, t);
    }
}

#[test]
fn argmax_ties_go_to_lowest_code() {
    assert_eq!(argmax_action(&[0.0, 0.0, 0.0, 0.0]), Action::Forward);
    assert_eq!(argmax_action(&[0.0, 1.0, 1.0, 0.0]), Action::Left);
    assert_eq!(argmax_action(&[0.0, 1.0, 1.0, 2.0]), Action::Stop);
}

#[test]
fn mixed_config_with_identical_variants_matches_plain() {
    let toy = tiny_toy();
    let examples = toy.examples();
    let batch: Vec<&TeacherExample> = examples.iter().collect();
    let plain = tiny_config(toy.bpe.vocab_size(), 6);
    let mixed = OrarConfig {
        first_step_visual_variant: Some(plain.visual_variant),
        ..plain.clone()
    };
    let a = OrarModel::new(plain, 12).unwrap();
    let b = OrarModel::new(mixed, 12).unwrap();
    let stores = toy.store_refs();
    assert_eq!(
        loss_of(&a, &toy, &stores, &batch).to_bits(),
        loss_of(&b, &toy, &stores, &batch).to_bits()
    );
}

#[test]
fn mixed_model_reads_first_step_variant_only_at_the_start() {
    let toy = tiny_toy();
    let examples = toy.examples();
    let cfg = OrarConfig {
        visual_variant: PanoVariant::Semseg,
        first_step_visual_variant: Some(PanoVariant::FourthToLast),
        ..tiny_config(toy.bpe.vocab_size(), 6)
    };
    let model = OrarModel::new(cfg, 13).unwrap();
    let batch: Vec<&TeacherExample> = examples.iter().collect();
    let all = toy.store_refs();
    let semseg_only: Vec<&PanoFeatureStore> = all.iter().copied().filter(|s| s.variant() == PanoVariant::Semseg).collect();
    loss_of(&model, &toy, &all, &batch);
    let observer = Observer::new(&toy.world.graph, &semseg_only);
    let mut tape = Tape::new();
    let vars = model.store.bind(&mut tape);
    let mut rng = no_dropout();
    let err = teacher_forced_loss(&model, &mut tape, &vars, &observer, &batch, &mut eval_dropout(&mut rng));
    assert!(matches!(err, Err(OrarError::Features(_))));
}

#[test]
fn slice_mismatch_is_rejected() {
    let toy = tiny_toy();
    let ex = &toy.examples()[0];
    let model = OrarModel::new(tiny_config(toy.bpe.vocab_size(), 6), 14).unwrap();
    let semseg = toy.stores.iter().find(|s| s.variant() == PanoVariant::Semseg).unwrap();
    let wrong = semseg.extract(toy.world.graph.id(ex.contexts[0].state.node), 0.0).unwrap();
    let mut tape = Tape::new();
    let vars = model.store.bind(&mut tape);
    let mut rng = no_dropout();
    let mut drop = eval_dropout(&mut rng);
    let enc = model.encode(&mut tape, &vars, &[ex.tokens.clone()], &mut drop).unwrap();
    let state = model.init_state(&mut tape, &enc);
    let input = StepInput {
        t: 0,
        prev_action: None,
        junction: 1,
        heading_delta: 0.0,
        slices: Some(&wrong),
    };
    let r = model.decode_step(&mut tape, &vars, state, &enc, &[input], PanoVariant::PreFinal, &mut drop);
    assert!(matches!(r, Err(OrarError::Features(_))));
    let r = model.decode_step(&mut tape, &vars, state, &enc, &[StepInput { slices: None, ..input }], PanoVariant::PreFinal, &mut drop);
    assert!(matches!(r, Err(OrarError::Features(_))));
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let toy = tiny_toy();
    let examples = toy.examples();
    let mut model = OrarModel::new(tiny_config(toy.bpe.vocab_size(), 6), 15).unwrap();
    fit(&mut model, &toy, &examples, 3, 1e-2);
    let dir = tempfile::tempdir().unwrap();
    let (ck, cfg) = (dir.path().join("model.ckpt"), dir.path().join("config.json"));
    model.save(&ck, &cfg).unwrap();
    let loaded = OrarModel::load(&ck, &cfg).unwrap();
    assert_eq!(loaded.config, model.config);
    let stores = toy.store_refs();
    let batch: Vec<&TeacherExample> = examples.iter().collect();
    assert_eq!(
        loss_of(&model, &toy, &stores, &batch).to_bits(),
        loss_of(&loaded, &toy, &stores, &batch).to_bits()
    );
    let observer = Observer::new(&toy.world.graph, &stores);
    for (i, e) in toy.instances.iter().zip(&examples) {
        let s = i.start_state(&toy.world.graph).unwrap();
        assert_eq!(
            act_greedy(&model, &observer, s, e.tokens.clone(), 20).unwrap(),
            act_greedy(&loaded, &observer, s, e.tokens.clone(), 20).unwrap()
        );
    }
    // a config that disagrees with the checkpoint is refused
    let other = OrarConfig { use_junction: false, ..model.config.clone() };
    assert!(OrarModel::from_store(other, &model.store).is_err());
}

#[test]
fn config_json_keys_mirror_fields() {
    let cfg = OrarConfig::paper();
    let v: serde_json::Value = serde_json::from_str(&cfg.to_json()).unwrap();
    for key in [
        "token_emb", "encoder_hidden", "decoder_hidden", "heads", "visual_ffn", "semseg_ffn",
        "dropout", "attention_dropout", "use_heading_delta", "use_junction", "visual_variant",
        "use_second_rnn", "use_text_attention", "use_image_attention",
        "first_step_visual_variant", "max_timestep",
    ] {
        assert!(v.get(key).is_some(), "{key}");
    }
    assert_eq!(v["visual_variant"], "pre-final");
    assert_eq!(OrarConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    assert_eq!(cfg.first_variant(), cfg.visual_variant);
    assert_eq!((cfg.token_emb, cfg.encoder_hidden, cfg.decoder_hidden, cfg.heads), (32, 256, 256, 2));
    assert_eq!((cfg.action_emb, cfg.junction_emb, cfg.timestep_emb), (16, 16, 16));
    assert_eq!((cfg.visual_ffn, cfg.semseg_ffn[0]), ([512, 256], 64));
    assert_eq!((cfg.dropout, cfg.attention_dropout), (0.3, 0.3));

    assert!(OrarConfig::from_json(r#"{"heads": 3, "decoder_hidden": 64}"#).is_err());
    assert!(OrarConfig::from_json(r#"{"token_emb": 0}"#).is_err());
    assert!(OrarConfig::from_json(r#"{"dropout": 1.0}"#).is_err());
}

#[test]
fn dropout_makes_training_loss_stochastic_but_eval_deterministic() {
    let toy = tiny_toy();
    let examples = toy.examples();
    let batch: Vec<&TeacherExample> = examples.iter().collect();
    let cfg = OrarConfig {
        dropout: 0.3,
        attention_dropout: 0.3,
        ..tiny_config(toy.bpe.vocab_size(), 6)
    };
    let model = OrarModel::new(cfg, 16).unwrap();
    let stores = toy.store_refs();
    let observer = Observer::new(&toy.world.graph, &stores);
    let run = |training: bool, seed: u64| {
        let mut tape = Tape::new();
        let vars = model.store.bind(&mut tape);
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let mut drop = Dropout { p: model.config.dropout, training, rng: &mut rng };
        let l = teacher_forced_loss(&model, &mut tape, &vars, &observer, &batch, &mut drop).unwrap();
        tape.value(l).item()
    };
    assert_ne!(run(true, 1), run(true, 2));
    assert_eq!(run(true, 1), run(true, 1));
    assert_eq!(run(false, 1), run(false, 2));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn ablated_inputs_never_move_logits(j in 0usize..4, d in -0.999f64..=1.0, step in 0usize..3) {
        let toy = tiny_toy();
        let ex = &toy.examples()[0];
        let step = step.min(ex.contexts.len() - 1);
        let cfg = OrarConfig {
            use_junction: false,
            use_heading_delta: false,
            ..tiny_config(toy.bpe.vocab_size(), 6)
        };
        let model = OrarModel::new(cfg, 17).unwrap();
        let base = first_logits(&model, &toy, ex, step, |_| {});
        let moved = first_logits(&model, &toy, ex, step, |i| {
            i.junction = j;
            i.heading_delta = d;
        });
        prop_assert_eq!(
            base.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            moved.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}

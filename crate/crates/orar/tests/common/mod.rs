#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use streetnav_core::env::{DatasetTag, NavInstance};
use streetnav_core::pano::{PanoFeatureStore, PanoVariant};
use streetnav_core::tokenizer::BpeModel;
use streetnav_core::worldgen::{
    gen_instances, gen_world, InstructionParams, RouteParams, RouteRegion, World, WorldSpec,
};
use streetnav_orar::{OrarConfig, OrarModel, TeacherExample};
use streetnav_tensor::layers::Dropout;
use streetnav_tensor::{AdamConfig, AdamState, Tape};

pub struct Toy {
    pub world: World,
    pub instances: Vec<NavInstance>,
    pub bpe: BpeModel,
    pub stores: Vec<PanoFeatureStore>,
}

impl Toy {
    pub fn store_refs(&self) -> Vec<&PanoFeatureStore> {
        self.stores.iter().collect()
    }

    pub fn examples(&self) -> Vec<TeacherExample> {
        self.instances
            .iter()
            .map(|i| TeacherExample::new(&self.world.graph, i, self.bpe.encode_plain(&i.instruction)).unwrap())
            .collect()
    }
}

/// A 4x4 city with short routes of both styles.
pub fn toy(n: usize, seed: u64, prefinal_dim: usize) -> Toy {
    let spec = WorldSpec {
        cols: 4,
        rows: 4,
        mid_nodes: 1,
        prefinal_dim,
        seed,
        ..WorldSpec::default()
    };
    let world = gen_world(&spec).unwrap();
    let params = RouteParams {
        min_len: 4,
        max_len: 7,
        min_intersections: 1,
        straight_bias: 0.7,
    };
    let region = RouteRegion::all(&world.graph);
    let half = n / 2;
    let ip = InstructionParams::default();
    let mut instances =
        gen_instances(&world, DatasetTag::Map2seq, n - half, seed, &region, &params, &ip, "m").unwrap();
    instances.extend(gen_instances(&world, DatasetTag::Touchdown, half, seed + 1, &region, &params, &ip, "t").unwrap());
    let corpus: Vec<&str> = instances.iter().map(|i| i.instruction.as_str()).collect();
    let bpe = BpeModel::train(&corpus, 120).unwrap();
    let stores = [PanoVariant::PreFinal, PanoVariant::Semseg, PanoVariant::FourthToLast]
        .into_iter()
        .map(|v| world.features(v).unwrap())
        .collect();
    Toy {
        world,
        instances,
        bpe,
        stores,
    }
}

pub fn tiny_config(vocab: usize, prefinal_dim: usize) -> OrarConfig {
    OrarConfig {
        vocab_size: vocab,
        token_emb: 4,
        encoder_hidden: 3,
        encoder_layers: 2,
        decoder_hidden: 4,
        heads: 2,
        action_emb: 3,
        junction_emb: 3,
        timestep_emb: 3,
        visual_ffn: [5, 4],
        semseg_ffn: [4, 3],
        dropout: 0.0,
        attention_dropout: 0.0,
        max_timestep: 12,
        prefinal_dim,
        ..OrarConfig::desk()
    }
}

pub fn no_dropout() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

pub fn eval_dropout(rng: &mut ChaCha8Rng) -> Dropout<'_, ChaCha8Rng> {
    Dropout {
        p: 0.0,
        training: false,
        rng,
    }
}

/// Full-batch Adam steps on `examples`; returns the loss after each step.
pub fn fit(
    model: &mut OrarModel,
    toy: &Toy,
    examples: &[TeacherExample],
    steps: usize,
    lr: f64,
) -> Vec<f64> {
    let stores = toy.store_refs();
    let observer = streetnav_orar::Observer::new(&toy.world.graph, &stores);
    let mut adam = AdamState::new(
        &model.store,
        AdamConfig {
            lr,
            weight_decay: 0.0,
            ..AdamConfig::default()
        },
    );
    let batch: Vec<&TeacherExample> = examples.iter().collect();
    let mut rng = no_dropout();
    let mut losses = Vec::new();
    for _ in 0..steps {
        let mut tape = Tape::new();
        let vars = model.store.bind(&mut tape);
        let loss = streetnav_orar::teacher_forced_loss(
            model,
            &mut tape,
            &vars,
            &observer,
            &batch,
            &mut eval_dropout(&mut rng),
        )
        .unwrap();
        losses.push(tape.value(loss).item());
        let grads = tape.backward(loss).unwrap();
        model.store.zero_grad();
        model.store.accumulate(&tape, &grads, &vars);
        adam.update(&mut model.store).unwrap();
    }
    losses
}

#![allow(dead_code)]

use navinstruct_core::assembly::LayoutOptions;
use navinstruct_core::config::TrainConfig;
use navinstruct_core::data::Trajectory;
use navinstruct_core::nn::TransformerDims;
use navinstruct_core::synth::{build_world, WorldOverrides};
use navinstruct_core::text::Vocab;
use navinstruct_tensor::Stream;

pub const MICRO_CORPUS: [&str; 2] = [
    "go to the kitchen and open the sink",
    "go to the hall and open the lamp",
];

/// 12-entry vocabulary.
pub fn micro_vocab() -> Vocab {
    Vocab::build(&MICRO_CORPUS, 1).unwrap()
}

pub fn micro_dims(vocab: usize, layers: usize) -> TransformerDims {
    TransformerDims {
        layers,
        d_model: 16,
        heads: 2,
        d_ff: 32,
        vocab,
        max_seq_len: 24,
        d_img: 4,
    }
}

pub fn micro_layout() -> LayoutOptions {
    LayoutOptions {
        use_objects: true,
        prefix_visible: false,
        max_seq_len: 24,
    }
}

pub fn micro_trajectory(seed: u64) -> Trajectory {
    let mut s = Stream::from_seed(seed);
    Trajectory {
        id: format!("t{seed}"),
        features: (0..2).map(|_| (0..4).map(|_| s.normal()).collect()).collect(),
        objects: vec!["sink".into(), "lamp".into()],
        references: vec![MICRO_CORPUS[0].into()],
    }
}

/// Small but complete training configuration for fast tests.
pub fn small_config() -> TrainConfig {
    TrainConfig {
        gen_layers: 1,
        gen_d_model: 16,
        gen_heads: 2,
        gen_d_ff: 32,
        disc_layers: 1,
        disc_d_model: 16,
        disc_heads: 2,
        disc_d_ff: 32,
        batch_size: 3,
        ce_max_steps: 6,
        gan_max_steps: 4,
        max_instruction_len: 12,
        lr: 1e-3,
        ..TrainConfig::default()
    }
}

/// A few synthetic trajectories with the vocabulary of their references.
pub fn synthetic(count: usize, seed: u64) -> (Vec<Trajectory>, Vocab) {
    let w = build_world(seed, &WorldOverrides::default()).unwrap();
    let trajs: Vec<Trajectory> = w.corpus(seed, count).into_iter().map(|e| e.trajectory).collect();
    let refs: Vec<String> = trajs.iter().flat_map(|t| t.references.clone()).collect();
    let vocab = Vocab::build(&refs, 1).unwrap();
    (trajs, vocab)
}

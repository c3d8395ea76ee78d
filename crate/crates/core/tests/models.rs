mod common;

use common::*;
use navinstruct_core::assembly::TextBlock;
use navinstruct_core::discriminator::{Discriminator, Pooling};
use navinstruct_core::generator::{Generator, StopReason};
use navinstruct_core::text::EOS;
use navinstruct_tensor::{Graph, Stream, Tensor, PROB_EPS};

fn generator(seed: u64) -> (Generator, navinstruct_core::text::Vocab) {
    let vocab = micro_vocab();
    let gen = Generator::new(micro_dims(vocab.len(), 2), micro_layout(), &mut Stream::from_seed(seed));
    (gen, vocab)
}

#[test]
fn zero_token_table_gives_uniform_loss() {
    let (mut gen, vocab) = generator(1);
    let idx = gen.net.token_table_index();
    let shape = gen.net.store.get(idx).shape().to_vec();
    gen.net.store.tensors_mut()[idx] = Tensor::zeros(&shape);
    let mut g = Graph::new();
    let reference = vocab.encode(MICRO_CORPUS[1]);
    let (loss, logits) = gen
        .teacher_forced_loss(&mut g, &micro_trajectory(3), &reference, &vocab)
        .unwrap();
    assert!((g.value(loss).item() - (vocab.len() as f64).ln()).abs() < 1e-12);
    assert_eq!(g.shape(logits), &[reference.len() + 1, vocab.len()]);
}

#[test]
fn empty_reference_rejected() {
    let (gen, vocab) = generator(1);
    let mut g = Graph::new();
    assert!(gen.teacher_forced_loss(&mut g, &micro_trajectory(1), &[], &vocab).is_err());
}

#[test]
fn greedy_is_deterministic_and_respects_max_len() {
    let (gen, vocab) = generator(2);
    let traj = micro_trajectory(4);
    let a = gen.decode_greedy(&traj, &vocab, 10).unwrap();
    let b = gen.decode_greedy(&traj, &vocab, 10).unwrap();
    assert_eq!(a, b);
    assert!(a.ids.len() <= 10);
    let one = gen.decode_greedy(&traj, &vocab, 1).unwrap();
    assert_eq!(one.ids.len(), 1);
    assert_eq!(one.ids[0], a.ids[0]);
    if one.ids[0] != EOS {
        assert_eq!(one.stop, StopReason::MaxLen);
    }
}

#[test]
fn noiseless_soft_generation_follows_greedy() {
    let (gen, vocab) = generator(3);
    let traj = micro_trajectory(5);
    let greedy = gen.decode_greedy(&traj, &vocab, 8).unwrap();
    for tau in [0.01, 1.0] {
        let mut g = Graph::new();
        let soft = gen
            .generate_soft_with(&mut g, &traj, &vocab, tau, 8, |k| vec![0.0; k])
            .unwrap();
        assert_eq!(soft.result.ids, greedy.ids);
        let rows = soft.result.soft.unwrap();
        for r in 0..rows.rows() {
            let s: f64 = rows.row_slice(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn soft_generation_rejects_bad_temperature() {
    let (gen, vocab) = generator(3);
    let mut g = Graph::new();
    let mut rng = Stream::from_seed(0);
    assert!(gen
        .generate_soft(&mut g, &micro_trajectory(1), &vocab, 0.0, &mut rng, 4)
        .is_err());
    assert!(gen
        .sample_decode(&micro_trajectory(1), &vocab, -1.0, &mut rng, 4)
        .is_err());
}

#[test]
fn sampling_matches_model_distribution() {
    let (gen, vocab) = generator(4);
    let traj = micro_trajectory(6);
    let n = 20_000;
    let mut counts = vec![0usize; vocab.len()];
    let mut probs = vec![0.0; vocab.len()];
    let mut rng = Stream::from_seed(8);
    for _ in 0..n {
        let out = gen.sample_decode(&traj, &vocab, 1.0, &mut rng, 1).unwrap();
        counts[out.ids[0]] += 1;
        probs[out.ids[0]] = out.log_probs[0].exp();
    }
    for (c, p) in counts.iter().zip(&probs) {
        if *c == 0 {
            continue;
        }
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let f = *c as f64 / n as f64;
        assert!((f - p).abs() < 4.0 * se + 1e-12, "freq {f} vs p {p}");
    }
}

fn discriminator(pooling: Pooling) -> (Discriminator, navinstruct_core::text::Vocab) {
    let vocab = micro_vocab();
    let mut d = Discriminator::new(micro_dims(vocab.len(), 2), micro_layout(), &mut Stream::from_seed(9));
    d.pooling = pooling;
    (d, vocab)
}

#[test]
fn one_hot_rows_score_like_hard_ids() {
    for pooling in [Pooling::Cls, Pooling::Mean] {
        let (d, vocab) = discriminator(pooling);
        let traj = micro_trajectory(7);
        let ids = vocab.encode(MICRO_CORPUS[0]);
        let mut onehot = Tensor::zeros(&[ids.len(), vocab.len()]);
        for (r, &id) in ids.iter().enumerate() {
            onehot.data_mut()[r * vocab.len() + id] = 1.0;
        }
        let hard = d.score(&traj, &TextBlock::Hard(ids), &vocab).unwrap();
        let soft = d.score(&traj, &TextBlock::Soft(onehot), &vocab).unwrap();
        assert_eq!(hard.p.to_bits(), soft.p.to_bits());
    }
}

#[test]
fn scores_are_clamped_probabilities() {
    let (mut d, vocab) = discriminator(Pooling::Cls);
    let traj = micro_trajectory(8);
    for bias in [-1e3, 0.0, 1e3] {
        let last = d.net.store.len() - 1;
        d.net.store.tensors_mut()[last] = Tensor::full(&[1, 1], bias);
        for text in [TextBlock::Hard(vocab.encode(MICRO_CORPUS[1])), TextBlock::Hard(vec![])] {
            let s = d.score(&traj, &text, &vocab).unwrap();
            assert!(s.p >= PROB_EPS && s.p <= 1.0 - PROB_EPS);
            assert!(s.loss(true).is_finite() && s.loss(false).is_finite());
        }
    }
}

#[test]
fn score_is_independent_of_call_order() {
    let (d, vocab) = discriminator(Pooling::Cls);
    let trajs: Vec<_> = (0..4).map(micro_trajectory).collect();
    let ids = vocab.encode(MICRO_CORPUS[0]);
    let forward: Vec<f64> = trajs
        .iter()
        .map(|t| d.score(t, &TextBlock::Hard(ids.clone()), &vocab).unwrap().p)
        .collect();
    let mut backward: Vec<f64> = trajs
        .iter()
        .rev()
        .map(|t| d.score(t, &TextBlock::Hard(ids.clone()), &vocab).unwrap().p)
        .collect();
    backward.reverse();
    assert_eq!(forward, backward);
}

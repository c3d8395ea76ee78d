//! Encoder transformer scoring whether an instruction matches a trajectory.

use navinstruct_tensor::{clamp_prob, Graph, Stream, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_discriminator_input, embed, LayoutOptions, TextBlock};
use crate::data::Trajectory;
use crate::error::Result;
use crate::nn::{Transformer, TransformerDims};
use crate::text::Vocab;

pub use navinstruct_tensor::{adversarial_generator_loss, discriminator_loss};

pub const DISCRIMINATOR_GROUP: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// State of the leading CLS slot.
    #[default]
    Cls,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RealFakeScore {
    /// Clamped to `[PROB_EPS, 1 - PROB_EPS]`.
    pub p: f64,
}

/// Instruction as the discriminator sees it inside a graph.
#[derive(Debug, Clone, Copy)]
pub enum GraphText<'a> {
    Hard(&'a [usize]),
    /// Stacked soft (or straight-through) rows, `S x vocab`.
    Soft(Var),
    Empty,
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    pub net: Transformer,
    pub layout: LayoutOptions,
    pub pooling: Pooling,
    head_w: usize,
    head_b: usize,
}

impl Discriminator {
    pub fn new(dims: TransformerDims, layout: LayoutOptions, rng: &mut Stream) -> Self {
        let mut net = Transformer::new(dims, DISCRIMINATOR_GROUP, rng);
        let d = dims.d_model;
        let w: Vec<f64> = (0..d).map(|_| 0.02 * rng.normal()).collect();
        let head_w = net
            .store
            .add("head.w", Tensor::matrix(d, 1, w).unwrap());
        let head_b = net.store.add("head.b", Tensor::zeros(&[1, 1]));
        Self {
            net,
            layout,
            pooling: Pooling::default(),
            head_w,
            head_b,
        }
    }

    /// `D(I, x)` as a `1 x 1` sigmoid node (unclamped; the losses clamp).
    pub fn score_var(
        &self,
        g: &mut Graph,
        traj: &Trajectory,
        text: GraphText<'_>,
        vocab: &Vocab,
    ) -> Result<Var> {
        let (block, soft) = match text {
            GraphText::Hard(ids) => (TextBlock::Hard(ids.to_vec()), None),
            GraphText::Soft(v) => {
                let value = g.value(v).clone();
                (TextBlock::Soft(value), Some(v))
            }
            GraphText::Empty => (TextBlock::Hard(Vec::new()), None),
        };
        let seq = assemble_discriminator_input(traj, block, vocab, &self.layout)?;
        let x = embed(g, &self.net, &seq, traj, soft)?;
        let h = self.net.forward(g, x, &seq.mask);
        let pooled = match self.pooling {
            Pooling::Cls => g.slice_rows(h, 0, 1),
            Pooling::Mean => {
                let n = seq.len();
                let avg = g.constant(Tensor::row(vec![1.0 / n as f64; n]));
                g.matmul(avg, h)
            }
        };
        let w = self.net.p(g, self.head_w);
        let b = self.net.p(g, self.head_b);
        let z = g.matmul(pooled, w);
        let z = g.add_row(z, b);
        Ok(g.sigmoid(z))
    }

    pub fn score(&self, traj: &Trajectory, text: &TextBlock, vocab: &Vocab) -> Result<RealFakeScore> {
        let mut g = Graph::new();
        let p = match text {
            TextBlock::Hard(ids) => self.score_var(&mut g, traj, GraphText::Hard(ids), vocab)?,
            TextBlock::Soft(rows) if rows.is_empty() => {
                self.score_var(&mut g, traj, GraphText::Empty, vocab)?
            }
            TextBlock::Soft(rows) => {
                let v = g.constant(rows.clone());
                self.score_var(&mut g, traj, GraphText::Soft(v), vocab)?
            }
        };
        Ok(RealFakeScore {
            p: clamp_prob(g.value(p).item()),
        })
    }
}

impl RealFakeScore {
    /// Binary cross entropy against `real` (true = ground truth pair).
    pub fn loss(&self, real: bool) -> f64 {
        navinstruct_tensor::binary_cross_entropy(self.p, real)
    }
}

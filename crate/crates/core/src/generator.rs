//! Decoder transformer that writes an instruction for a trajectory.
//!
//! The output head is tied to the input token table. Every decoding routine
//! re-runs the whole sequence each step; sequences are short enough that a
//! key/value cache would not pay for its bookkeeping on the tape.

use navinstruct_tensor::{argmax, log_sum_exp, softmax, Graph, Stream, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::assembly::{
    assemble_generator_input, embed, generator_mask, GeneratorMode, LayoutOptions, SEGMENT_TEXT,
};
use crate::data::Trajectory;
use crate::error::{CoreError, Result};
use crate::nn::{Transformer, TransformerDims};
use crate::text::{Vocab, EOS};

pub const GENERATOR_GROUP: u8 = 0;

/// How generated tokens are fed back as inputs on the adversarial path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeedMode {
    /// Hard one-hot forward, soft gradient backward.
    #[default]
    StraightThrough,
    /// The relaxed distribution itself.
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Eos,
    MaxLen,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResult {
    /// Generated ids, including the closing EOS when one was produced.
    pub ids: Vec<usize>,
    /// Gumbel-softmax rows, one per step (adversarial path only).
    pub soft: Option<Tensor>,
    /// Model log-probability of each chosen id.
    pub log_probs: Vec<f64>,
    pub stop: StopReason,
}

impl GenerationResult {
    /// Ids before the EOS.
    pub fn instruction(&self) -> &[usize] {
        match self.stop {
            StopReason::Eos => &self.ids[..self.ids.len() - 1],
            StopReason::MaxLen => &self.ids,
        }
    }
}

/// Result of [`Generator::generate_soft`]: values plus the graph nodes that
/// carry the generated rows.
#[derive(Debug)]
pub struct SoftGeneration {
    pub result: GenerationResult,
    /// Fed-back input rows (`1 x vocab` each), in generation order.
    pub rows: Vec<Var>,
}

impl SoftGeneration {
    /// Rows of the instruction proper (EOS row dropped), stacked.
    pub fn instruction_rows(&self, g: &mut Graph) -> Option<Var> {
        let n = self.result.instruction().len();
        (n > 0).then(|| g.concat_rows(&self.rows[..n]))
    }
}

#[derive(Debug, Clone)]
pub struct Generator {
    pub net: Transformer,
    pub layout: LayoutOptions,
    pub feed: FeedMode,
}

struct Prompt {
    base: Var,
    len: usize,
}

impl Generator {
    pub fn new(dims: TransformerDims, layout: LayoutOptions, rng: &mut Stream) -> Self {
        Self {
            net: Transformer::new(dims, GENERATOR_GROUP, rng),
            layout,
            feed: FeedMode::default(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.net.dims.vocab
    }

    fn check_vocab(&self, vocab: &Vocab) -> Result<()> {
        if vocab.len() != self.vocab_size() {
            return Err(CoreError::Invalid(format!(
                "vocabulary has {} entries, model expects {}",
                vocab.len(),
                self.vocab_size()
            )));
        }
        Ok(())
    }

    /// Teacher-forced cross entropy over the text positions.
    ///
    /// Returns the scalar loss and the `S x vocab` logits, where row `i`
    /// predicts instruction token `i` (the last row predicts EOS).
    pub fn teacher_forced_loss(
        &self,
        g: &mut Graph,
        traj: &Trajectory,
        reference: &[usize],
        vocab: &Vocab,
    ) -> Result<(Var, Var)> {
        if reference.is_empty() {
            return Err(CoreError::EmptyReference);
        }
        self.check_vocab(vocab)?;
        let seq = assemble_generator_input(
            traj,
            reference,
            GeneratorMode::TeacherForcing,
            vocab,
            &self.layout,
        )?;
        let x = embed(g, &self.net, &seq, traj, None)?;
        let h = self.net.forward(g, x, &seq.mask);
        let steps = reference.len() + 1;
        let hs = g.slice_rows(h, seq.text_start, steps);
        let tok = self.net.token_table(g);
        let logits = g.matmul_bt(hs, tok);
        let mut targets = reference.to_vec();
        targets.push(EOS);
        let loss = g.cross_entropy(logits, &targets, &vec![true; steps])?;
        Ok((loss, logits))
    }

    fn prompt(&self, g: &mut Graph, traj: &Trajectory, vocab: &Vocab) -> Result<Prompt> {
        self.check_vocab(vocab)?;
        let seq = assemble_generator_input(traj, &[], GeneratorMode::Prompt, vocab, &self.layout)?;
        let base = embed(g, &self.net, &seq, traj, None)?;
        Ok(Prompt {
            base,
            len: seq.len(),
        })
    }

    fn step_budget(&self, prompt: &Prompt, max_len: usize) -> usize {
        max_len.min(self.layout.max_seq_len.saturating_sub(prompt.len))
    }

    /// Embeds a generated token (`1 x d` content row) at text position `index`.
    fn generated_slot(&self, g: &mut Graph, prompt: &Prompt, content: Var, index: usize) -> Var {
        self.net
            .add_position_segment(g, content, &[prompt.len + index], &[SEGMENT_TEXT])
    }

    /// Next-token logits (`1 x vocab`) given the prompt and generated slots.
    fn next_logits(&self, g: &mut Graph, prompt: &Prompt, slots: &[Var]) -> Var {
        let n = prompt.len + slots.len();
        let x = if slots.is_empty() {
            prompt.base
        } else {
            let mut parts = Vec::with_capacity(slots.len() + 1);
            parts.push(prompt.base);
            parts.extend_from_slice(slots);
            g.concat_rows(&parts)
        };
        let prefix = prompt.len - 1; // BOS is the first text slot
        let mask = generator_mask(n, prefix, self.layout.prefix_visible);
        let h = self.net.forward(g, x, &mask);
        let last = g.slice_rows(h, n - 1, 1);
        let tok = self.net.token_table(g);
        g.matmul_bt(last, tok)
    }

    /// Shared hard-token decoding loop; `choose` picks the next id from the
    /// step's logits.
    fn decode_with<F>(
        &self,
        traj: &Trajectory,
        vocab: &Vocab,
        max_len: usize,
        mut choose: F,
    ) -> Result<GenerationResult>
    where
        F: FnMut(&[f64]) -> usize,
    {
        let mut g = Graph::new();
        let prompt = self.prompt(&mut g, traj, vocab)?;
        let budget = self.step_budget(&prompt, max_len);
        let mut slots = Vec::new();
        let mut ids = Vec::new();
        let mut log_probs = Vec::new();
        let mut stop = StopReason::MaxLen;
        for step in 0..budget {
            let logits_var = self.next_logits(&mut g, &prompt, &slots);
            let logits = g.value(logits_var).data().to_vec();
            let id = choose(&logits);
            log_probs.push(logits[id] - log_sum_exp(&logits));
            ids.push(id);
            if id == EOS {
                stop = StopReason::Eos;
                break;
            }
            let tok = self.net.token_table(&mut g);
            let content = g.gather(tok, &[id]);
            slots.push(self.generated_slot(&mut g, &prompt, content, step));
        }
        Ok(GenerationResult {
            ids,
            soft: None,
            log_probs,
            stop,
        })
    }

    /// Argmax decoding; ties go to the lowest id.
    pub fn decode_greedy(
        &self,
        traj: &Trajectory,
        vocab: &Vocab,
        max_len: usize,
    ) -> Result<GenerationResult> {
        self.decode_with(traj, vocab, max_len, argmax)
    }

    /// Categorical sampling from `softmax(logits / temperature)`.
    pub fn sample_decode(
        &self,
        traj: &Trajectory,
        vocab: &Vocab,
        temperature: f64,
        rng: &mut Stream,
        max_len: usize,
    ) -> Result<GenerationResult> {
        if !(temperature > 0.0) {
            return Err(navinstruct_tensor::TensorError::Temperature(temperature).into());
        }
        self.decode_with(traj, vocab, max_len, |logits| {
            let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
            let p = softmax(&scaled).expect("finite logits");
            let u = rng.uniform();
            let mut acc = 0.0;
            for (i, pi) in p.iter().enumerate() {
                acc += pi;
                if u < acc {
                    return i;
                }
            }
            // u landed in the rounding gap above the cumulative sum
            p.iter().rposition(|&pi| pi > 0.0).unwrap_or(0)
        })
    }

    /// Differentiable generation: each step draws a Gumbel-softmax row and
    /// feeds it back (straight-through by default). Gradients reach every
    /// generator parameter through the recorded rows.
    pub fn generate_soft(
        &self,
        g: &mut Graph,
        traj: &Trajectory,
        vocab: &Vocab,
        temperature: f64,
        rng: &mut Stream,
        max_len: usize,
    ) -> Result<SoftGeneration> {
        self.generate_soft_with(g, traj, vocab, temperature, max_len, |k| rng.gumbel_vec(k))
    }

    /// [`Self::generate_soft`] with an explicit noise source.
    pub fn generate_soft_with<N>(
        &self,
        g: &mut Graph,
        traj: &Trajectory,
        vocab: &Vocab,
        temperature: f64,
        max_len: usize,
        mut noise: N,
    ) -> Result<SoftGeneration>
    where
        N: FnMut(usize) -> Vec<f64>,
    {
        if !(temperature > 0.0) {
            return Err(navinstruct_tensor::TensorError::Temperature(temperature).into());
        }
        let prompt = self.prompt(g, traj, vocab)?;
        let budget = self.step_budget(&prompt, max_len);
        let k = self.vocab_size();
        let mut slots = Vec::new();
        let mut rows = Vec::new();
        let mut soft_values = Vec::new();
        let mut ids = Vec::new();
        let mut log_probs = Vec::new();
        let mut stop = StopReason::MaxLen;
        for step in 0..budget {
            let logits = self.next_logits(g, &prompt, &slots);
            let lv = g.value(logits).data().to_vec();
            let perturbed = g.offset(logits, &Tensor::row(noise(k)));
            let scaled = g.scale(perturbed, 1.0 / temperature);
            let soft = g.softmax(scaled);
            let fed = match self.feed {
                FeedMode::StraightThrough => g.straight_through(soft),
                FeedMode::Soft => soft,
            };
            let id = argmax(g.value(soft).data());
            soft_values.extend_from_slice(g.value(soft).data());
            log_probs.push(lv[id] - log_sum_exp(&lv));
            ids.push(id);
            rows.push(fed);
            if id == EOS {
                stop = StopReason::Eos;
                break;
            }
            let tok = self.net.token_table(g);
            let content = g.matmul(fed, tok);
            slots.push(self.generated_slot(g, &prompt, content, step));
        }
        let soft = (!ids.is_empty()).then(|| Tensor::matrix(ids.len(), k, soft_values).unwrap());
        Ok(SoftGeneration {
            result: GenerationResult {
                ids,
                soft,
                log_probs,
                stop,
            },
            rows,
        })
    }
}

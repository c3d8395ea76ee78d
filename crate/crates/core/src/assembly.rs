//! Flattened multimodal layouts.
//!
//! Generator input: `[visual x V][objects x O][BOS][instruction][EOS]`,
//! causal attention. Discriminator input:
//! `[CLS][visual x V][SEP][objects x O][SEP][instruction][SEP]`, full
//! attention. Segment ids are 0 (visual), 1 (objects), 2 (text); a separator
//! belongs to the block it closes.

use navinstruct_tensor::{Graph, Tensor, Var};

use crate::data::Trajectory;
use crate::error::{CoreError, Result};
use crate::nn::Transformer;
use crate::text::{self, Vocab, BOS, CLS, EOS, SEP};

pub const SEGMENT_VISUAL: u8 = 0;
pub const SEGMENT_OBJECT: u8 = 1;
pub const SEGMENT_TEXT: u8 = 2;
pub const NUM_SEGMENTS: usize = 3;

/// What fills one position of the flattened sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    /// Projected feature of trajectory step `i`.
    Visual(usize),
    /// A fixed token: special, object word, or prompt token.
    Token(usize),
    /// Position `i` of the instruction block.
    Text(usize),
}

/// Instruction content: token ids, or one probability row per position.
#[derive(Debug, Clone, PartialEq)]
pub enum TextBlock {
    Hard(Vec<usize>),
    Soft(Tensor),
}

impl TextBlock {
    pub fn len(&self) -> usize {
        match self {
            TextBlock::Hard(ids) => ids.len(),
            TextBlock::Soft(rows) => {
                if rows.is_empty() {
                    0
                } else {
                    rows.rows()
                }
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayoutOptions {
    /// Include the object-name block.
    pub use_objects: bool,
    /// Let visual/object slots attend to the whole prefix (generator only).
    pub prefix_visible: bool,
    pub max_seq_len: usize,
}

impl Default for LayoutOptions {
    fn default() -> Self {
        Self {
            use_objects: true,
            prefix_visible: false,
            max_seq_len: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorMode {
    /// Reference instruction followed by EOS.
    TeacherForcing,
    /// Prompt ending at BOS plus whatever has been generated so far.
    Prompt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssembledSequence {
    pub slots: Vec<Slot>,
    pub visual_count: usize,
    pub object_ids: Vec<usize>,
    /// Token ids of the text segment as laid out (specials included);
    /// empty entries for soft rows are not representable, so soft text
    /// leaves this empty.
    pub text_ids: Vec<usize>,
    pub text: TextBlock,
    pub positions: Vec<usize>,
    pub segments: Vec<u8>,
    /// Row-major `n x n`; `mask[q * n + k]` means query `q` may attend to key `k`.
    pub mask: Vec<bool>,
    /// Index of the first text-segment slot.
    pub text_start: usize,
}

impl AssembledSequence {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn attends(&self, query: usize, key: usize) -> bool {
        self.mask[query * self.len() + key]
    }
}

/// Object labels as token ids; multi-word labels contribute several tokens.
pub fn object_token_ids(traj: &Trajectory, vocab: &Vocab) -> Vec<usize> {
    traj.objects
        .iter()
        .flat_map(|label| text::tokenize(label))
        .map(|t| vocab.id_or_unk(&t))
        .collect()
}

fn check_instruction(ids: &[usize], vocab: &Vocab) -> Result<()> {
    for &id in ids {
        if id >= vocab.len() {
            return Err(CoreError::InvalidId {
                id,
                size: vocab.len(),
            });
        }
        if text::is_special(id) && id != text::UNK {
            return Err(CoreError::SpecialInInstruction(id));
        }
    }
    Ok(())
}

/// Causal mask of size `n`; with `prefix_visible` the first `prefix` slots
/// also see each other.
pub fn generator_mask(n: usize, prefix: usize, prefix_visible: bool) -> Vec<bool> {
    let mut mask = vec![false; n * n];
    for q in 0..n {
        for k in 0..n {
            mask[q * n + k] = k <= q || (prefix_visible && q < prefix && k < prefix);
        }
    }
    mask
}

pub fn assemble_generator_input(
    traj: &Trajectory,
    instruction: &[usize],
    mode: GeneratorMode,
    vocab: &Vocab,
    opts: &LayoutOptions,
) -> Result<AssembledSequence> {
    if traj.features.is_empty() {
        return Err(CoreError::EmptyTrajectory);
    }
    check_instruction(instruction, vocab)?;
    let visual_count = traj.steps();
    let object_ids = if opts.use_objects {
        object_token_ids(traj, vocab)
    } else {
        Vec::new()
    };
    let mut slots: Vec<Slot> = (0..visual_count).map(Slot::Visual).collect();
    let mut segments = vec![SEGMENT_VISUAL; visual_count];
    for &id in &object_ids {
        slots.push(Slot::Token(id));
        segments.push(SEGMENT_OBJECT);
    }
    let prefix = slots.len();
    let text_start = prefix;
    let mut text_ids = vec![BOS];
    slots.push(Slot::Token(BOS));
    for (i, &id) in instruction.iter().enumerate() {
        slots.push(Slot::Text(i));
        text_ids.push(id);
    }
    if mode == GeneratorMode::TeacherForcing {
        slots.push(Slot::Token(EOS));
        text_ids.push(EOS);
    }
    segments.resize(slots.len(), SEGMENT_TEXT);
    let n = slots.len();
    if n > opts.max_seq_len {
        return Err(CoreError::SequenceTooLong {
            len: n,
            max: opts.max_seq_len,
        });
    }
    Ok(AssembledSequence {
        slots,
        visual_count,
        object_ids,
        text_ids,
        text: TextBlock::Hard(instruction.to_vec()),
        positions: (0..n).collect(),
        segments,
        mask: generator_mask(n, prefix, opts.prefix_visible),
        text_start,
    })
}

pub fn assemble_discriminator_input(
    traj: &Trajectory,
    text: TextBlock,
    vocab: &Vocab,
    opts: &LayoutOptions,
) -> Result<AssembledSequence> {
    if traj.features.is_empty() {
        return Err(CoreError::EmptyTrajectory);
    }
    let text_ids = match &text {
        TextBlock::Hard(ids) => {
            check_instruction(ids, vocab)?;
            ids.clone()
        }
        TextBlock::Soft(rows) => {
            if !rows.is_empty() && rows.cols() != vocab.len() {
                return Err(CoreError::Invalid(format!(
                    "soft rows have width {}, vocabulary has {}",
                    rows.cols(),
                    vocab.len()
                )));
            }
            Vec::new()
        }
    };
    let visual_count = traj.steps();
    let object_ids = if opts.use_objects {
        object_token_ids(traj, vocab)
    } else {
        Vec::new()
    };
    let mut slots = vec![Slot::Token(CLS)];
    let mut segments = vec![SEGMENT_VISUAL];
    slots.extend((0..visual_count).map(Slot::Visual));
    slots.push(Slot::Token(SEP));
    segments.resize(slots.len(), SEGMENT_VISUAL);
    if opts.use_objects {
        slots.extend(object_ids.iter().map(|&id| Slot::Token(id)));
        slots.push(Slot::Token(SEP));
        segments.resize(slots.len(), SEGMENT_OBJECT);
    }
    let text_start = slots.len();
    slots.extend((0..text.len()).map(Slot::Text));
    slots.push(Slot::Token(SEP));
    segments.resize(slots.len(), SEGMENT_TEXT);
    let n = slots.len();
    if n > opts.max_seq_len {
        return Err(CoreError::SequenceTooLong {
            len: n,
            max: opts.max_seq_len,
        });
    }
    Ok(AssembledSequence {
        slots,
        visual_count,
        object_ids,
        text_ids,
        text,
        positions: (0..n).collect(),
        segments,
        mask: vec![true; n * n],
        text_start,
    })
}

/// Per-slot input vectors: content + position + segment embedding.
///
/// Content is the projected visual feature, a token embedding, or for soft
/// text a probability-weighted mixture of token embeddings. `soft_text`
/// supplies the soft rows as a graph node so gradients reach whoever
/// produced them; otherwise soft rows enter as constants.
pub fn embed(
    g: &mut Graph,
    net: &Transformer,
    seq: &AssembledSequence,
    traj: &Trajectory,
    soft_text: Option<Var>,
) -> Result<Var> {
    let d_img = net.dims.d_img;
    if traj.feature_dim() != d_img {
        return Err(CoreError::FeatureDim {
            step: 0,
            expected: d_img,
            got: traj.feature_dim(),
        });
    }
    let tok = net.token_table(g);
    let feats: Vec<f64> = traj.features.iter().flatten().copied().collect();
    let feats = g.constant(Tensor::matrix(traj.steps(), d_img, feats)?);
    let visual = net.project_visual(g, feats);

    let soft_rows = match (&seq.text, soft_text) {
        (TextBlock::Soft(_), Some(v)) => Some(g.matmul(v, tok)),
        (TextBlock::Soft(rows), None) if !rows.is_empty() => {
            let c = g.constant(rows.clone());
            Some(g.matmul(c, tok))
        }
        _ => None,
    };

    // Group consecutive slots of the same source so each run is one op.
    let mut pieces = Vec::new();
    let mut i = 0;
    while i < seq.slots.len() {
        match seq.slots[i] {
            Slot::Visual(start) => {
                let mut j = i + 1;
                while j < seq.slots.len() && seq.slots[j] == Slot::Visual(start + j - i) {
                    j += 1;
                }
                pieces.push(g.slice_rows(visual, start, j - i));
                i = j;
            }
            Slot::Text(start) if soft_rows.is_some() => {
                let mut j = i + 1;
                while j < seq.slots.len() && seq.slots[j] == Slot::Text(start + j - i) {
                    j += 1;
                }
                pieces.push(g.slice_rows(soft_rows.unwrap(), start, j - i));
                i = j;
            }
            _ => {
                let mut ids = Vec::new();
                while i < seq.slots.len() {
                    match seq.slots[i] {
                        Slot::Token(id) => ids.push(id),
                        Slot::Text(t) if soft_rows.is_none() => match &seq.text {
                            TextBlock::Hard(h) => ids.push(h[t]),
                            TextBlock::Soft(_) => {
                                return Err(CoreError::Invalid("soft text without rows".into()))
                            }
                        },
                        _ => break,
                    }
                    i += 1;
                }
                pieces.push(g.gather(tok, &ids));
            }
        }
    }
    let content = g.concat_rows(&pieces);
    Ok(net.add_position_segment(g, content, &seq.positions, &seq.segments))
}

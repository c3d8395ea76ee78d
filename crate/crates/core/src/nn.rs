//! Parameter storage and the pre-norm transformer stack shared by both models.

use navinstruct_tensor::{Graph, ParamKey, Stream, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::assembly::NUM_SEGMENTS;

/// Named parameter tensors in a fixed declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerDims {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub vocab: usize,
    pub max_seq_len: usize,
    pub d_img: usize,
}

impl TransformerDims {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

#[derive(Debug, Clone)]
struct BlockIds {
    ln1_g: usize,
    ln1_b: usize,
    w_qkv: usize,
    b_qkv: usize,
    w_o: usize,
    b_o: usize,
    ln2_g: usize,
    ln2_b: usize,
    w_ff1: usize,
    b_ff1: usize,
    w_ff2: usize,
    b_ff2: usize,
}

#[derive(Debug, Clone)]
pub struct Transformer {
    pub dims: TransformerDims,
    pub group: u8,
    pub store: ParamStore,
    tok: usize,
    pos: usize,
    seg: usize,
    vis_w: usize,
    vis_b: usize,
    blocks: Vec<BlockIds>,
    lnf_g: usize,
    lnf_b: usize,
}

fn normal(rng: &mut Stream, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| std * rng.normal()).collect()).unwrap()
}

impl Transformer {
    pub fn new(dims: TransformerDims, group: u8, rng: &mut Stream) -> Self {
        assert!(dims.heads > 0 && dims.d_model % dims.heads == 0, "d_model must divide into heads");
        let d = dims.d_model;
        let mut store = ParamStore::new();
        let tok = store.add("tok_emb", normal(rng, &[dims.vocab, d], 0.02));
        let pos = store.add("pos_emb", normal(rng, &[dims.max_seq_len, d], 0.02));
        let seg = store.add("seg_emb", normal(rng, &[NUM_SEGMENTS, d], 0.02));
        let vis_w = store.add(
            "vis_proj.w",
            normal(rng, &[dims.d_img, d], 1.0 / (dims.d_img as f64).sqrt()),
        );
        let vis_b = store.add("vis_proj.b", Tensor::zeros(&[1, d]));
        let resid_std = 0.02 / (2.0 * dims.layers as f64).sqrt();
        let blocks = (0..dims.layers)
            .map(|l| {
                let mut add = |name: &str, t: Tensor| store.add(format!("blocks.{l}.{name}"), t);
                BlockIds {
                    ln1_g: add("ln1.g", Tensor::full(&[1, d], 1.0)),
                    ln1_b: add("ln1.b", Tensor::zeros(&[1, d])),
                    w_qkv: add("attn.w_qkv", normal(rng, &[d, 3 * d], 0.02)),
                    b_qkv: add("attn.b_qkv", Tensor::zeros(&[1, 3 * d])),
                    w_o: add("attn.w_o", normal(rng, &[d, d], resid_std)),
                    b_o: add("attn.b_o", Tensor::zeros(&[1, d])),
                    ln2_g: add("ln2.g", Tensor::full(&[1, d], 1.0)),
                    ln2_b: add("ln2.b", Tensor::zeros(&[1, d])),
                    w_ff1: add("ff.w1", normal(rng, &[d, dims.d_ff], 0.02)),
                    b_ff1: add("ff.b1", Tensor::zeros(&[1, dims.d_ff])),
                    w_ff2: add("ff.w2", normal(rng, &[dims.d_ff, d], resid_std)),
                    b_ff2: add("ff.b2", Tensor::zeros(&[1, d])),
                }
            })
            .collect();
        let lnf_g = store.add("ln_f.g", Tensor::full(&[1, d], 1.0));
        let lnf_b = store.add("ln_f.b", Tensor::zeros(&[1, d]));
        Self {
            dims,
            group,
            store,
            tok,
            pos,
            seg,
            vis_w,
            vis_b,
            blocks,
            lnf_g,
            lnf_b,
        }
    }

    pub fn p(&self, g: &mut Graph, index: usize) -> Var {
        g.param(ParamKey::new(self.group, index), self.store.get(index))
    }

    pub fn token_table(&self, g: &mut Graph) -> Var {
        self.p(g, self.tok)
    }

    pub fn token_table_index(&self) -> usize {
        self.tok
    }

    pub fn project_visual(&self, g: &mut Graph, features: Var) -> Var {
        let w = self.p(g, self.vis_w);
        let b = self.p(g, self.vis_b);
        let x = g.matmul(features, w);
        g.add_row(x, b)
    }

    pub fn add_position_segment(
        &self,
        g: &mut Graph,
        content: Var,
        positions: &[usize],
        segments: &[u8],
    ) -> Var {
        let pos_t = self.p(g, self.pos);
        let seg_t = self.p(g, self.seg);
        let pos = g.gather(pos_t, positions);
        let segs: Vec<usize> = segments.iter().map(|&s| s as usize).collect();
        let seg = g.gather(seg_t, &segs);
        let x = g.add(content, pos);
        g.add(x, seg)
    }

    /// Runs every block and the final layer norm over `x` (`n x d`).
    pub fn forward(&self, g: &mut Graph, mut x: Var, mask: &[bool]) -> Var {
        for b in &self.blocks {
            x = self.block(g, x, b, mask);
        }
        let gain = self.p(g, self.lnf_g);
        let bias = self.p(g, self.lnf_b);
        g.layer_norm(x, gain, bias)
    }

    fn block(&self, g: &mut Graph, x: Var, b: &BlockIds, mask: &[bool]) -> Var {
        let d = self.dims.d_model;
        let dh = self.dims.head_dim();
        let (g1, b1) = (self.p(g, b.ln1_g), self.p(g, b.ln1_b));
        let h = g.layer_norm(x, g1, b1);
        let (w_qkv, b_qkv) = (self.p(g, b.w_qkv), self.p(g, b.b_qkv));
        let qkv = g.matmul(h, w_qkv);
        let qkv = g.add_row(qkv, b_qkv);
        let scale = 1.0 / (dh as f64).sqrt();
        let heads: Vec<Var> = (0..self.dims.heads)
            .map(|i| {
                let q = g.slice_cols(qkv, i * dh, dh);
                let k = g.slice_cols(qkv, d + i * dh, dh);
                let v = g.slice_cols(qkv, 2 * d + i * dh, dh);
                let s = g.matmul_bt(q, k);
                let s = g.scale(s, scale);
                let a = g.masked_softmax(s, mask);
                g.matmul(a, v)
            })
            .collect();
        let att = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)
        };
        let (w_o, b_o) = (self.p(g, b.w_o), self.p(g, b.b_o));
        let o = g.matmul(att, w_o);
        let o = g.add_row(o, b_o);
        let x = g.add(x, o);

        let (g2, b2) = (self.p(g, b.ln2_g), self.p(g, b.ln2_b));
        let h = g.layer_norm(x, g2, b2);
        let (w1, bb1) = (self.p(g, b.w_ff1), self.p(g, b.b_ff1));
        let f = g.matmul(h, w1);
        let f = g.add_row(f, bb1);
        let f = g.gelu(f);
        let (w2, bb2) = (self.p(g, b.w_ff2), self.p(g, b.b_ff2));
        let f = g.matmul(f, w2);
        let f = g.add_row(f, bb2);
        g.add(x, f)
    }
}

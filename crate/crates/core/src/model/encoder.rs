use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{Graph, ParamId, ParamStore, Tensor, TensorError, Var};

/// Depth and width of one transformer stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub blocks: usize,
    pub heads: usize,
}

/// `x·w + b`.
pub(crate) fn linear(g: &mut Graph, x: Var, w: ParamId, b: ParamId) -> Result<Var, TensorError> {
    let (w, b) = (g.param(w), g.param(b));
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        Ok(Self {
            w: store.glorot(&format!("{name}.w"), fan_in, fan_out, rng)?,
            b: store.zeros(&format!("{name}.b"), &[1, fan_out])?,
        })
    }

    pub fn apply(&self, g: &mut Graph, x: Var) -> Result<Var, TensorError> {
        linear(g, x, self.w, self.b)
    }
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

impl Norm {
    fn new(store: &mut ParamStore, name: &str, d: usize) -> Result<Self, TensorError> {
        Ok(Self {
            gamma: store.ones(&format!("{name}.gamma"), &[1, d])?,
            beta: store.zeros(&format!("{name}.beta"), &[1, d])?,
        })
    }

    fn apply(&self, g: &mut Graph, x: Var) -> Result<Var, TensorError> {
        let (gamma, beta) = (g.param(self.gamma), g.param(self.beta));
        g.layer_norm(x, gamma, beta)
    }
}

#[derive(Clone, Debug)]
struct Block {
    q: Dense,
    // no key bias: softmax over keys is invariant to it
    k: ParamId,
    v: Dense,
    o: Dense,
    norm1: Norm,
    ff1: Dense,
    ff2: Dense,
    norm2: Norm,
}

/// Learned positions followed by post-norm self-attention blocks.
#[derive(Clone, Debug)]
pub(crate) struct Transformer {
    positions: ParamId,
    max_len: usize,
    heads: usize,
    blocks: Vec<Block>,
}

impl Transformer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        cfg: EncoderConfig,
        d: usize,
        ffn: usize,
        max_len: usize,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        if cfg.heads == 0 || d % cfg.heads != 0 {
            return Err(TensorError::Config(format!(
                "{name}: hidden size {d} not divisible by {} heads",
                cfg.heads
            )));
        }
        let positions = store.uniform(&format!("{name}.pos"), &[max_len, d], 0.05, rng)?;
        let mut blocks = Vec::with_capacity(cfg.blocks);
        for i in 0..cfg.blocks {
            let p = format!("{name}.block{i}");
            blocks.push(Block {
                q: Dense::new(store, &format!("{p}.q"), d, d, rng)?,
                k: store.glorot(&format!("{p}.k.w"), d, d, rng)?,
                v: Dense::new(store, &format!("{p}.v"), d, d, rng)?,
                o: Dense::new(store, &format!("{p}.o"), d, d, rng)?,
                norm1: Norm::new(store, &format!("{p}.norm1"), d)?,
                ff1: Dense::new(store, &format!("{p}.ff1"), d, ffn, rng)?,
                ff2: Dense::new(store, &format!("{p}.ff2"), ffn, d, rng)?,
                norm2: Norm::new(store, &format!("{p}.norm2"), d)?,
            });
        }
        Ok(Self {
            positions,
            max_len,
            heads: cfg.heads,
            blocks,
        })
    }

    /// Encodes a `[B·L, d]` stack of `B` sequences; `mask` marks real steps.
    pub fn forward(
        &self,
        g: &mut Graph,
        x: Var,
        seq_len: usize,
        mask: &[bool],
    ) -> Result<Var, TensorError> {
        if seq_len > self.max_len {
            return Err(TensorError::Config(format!(
                "sequence length {seq_len} exceeds {} positions",
                self.max_len
            )));
        }
        let rows = g.value(x).rows();
        let pos_idx: Vec<usize> = (0..rows).map(|r| r % seq_len).collect();
        let table = g.param(self.positions);
        let pos = g.gather_rows(table, &pos_idx)?;
        let mut x = g.add(x, pos)?;
        for b in &self.blocks {
            let q = b.q.apply(g, x)?;
            let wk = g.param(b.k);
            let k = g.matmul(x, wk)?;
            let v = b.v.apply(g, x)?;
            let att = g.self_attention(q, k, v, seq_len, self.heads, mask)?;
            let att = b.o.apply(g, att)?;
            let res = g.add(x, att)?;
            x = b.norm1.apply(g, res)?;
            let h = b.ff1.apply(g, x)?;
            let h = g.relu(h);
            let h = b.ff2.apply(g, h)?;
            let res = g.add(x, h)?;
            x = b.norm2.apply(g, res)?;
        }
        Ok(x)
    }
}

/// Token embeddings projected to the hidden size, a transformer, and masked
/// max pooling. Encodes candidates, token-level prefixes and history elements.
#[derive(Clone, Debug)]
pub(crate) struct TokenEncoder {
    embedding: ParamId,
    input: Dense,
    transformer: Transformer,
}

impl TokenEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        vocab_size: usize,
        emb_dim: usize,
        d: usize,
        ffn: usize,
        cfg: EncoderConfig,
        max_len: usize,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        Ok(Self {
            embedding: store.uniform(&format!("{name}.emb"), &[vocab_size, emb_dim], 0.05, rng)?,
            input: Dense::new(store, &format!("{name}.input"), emb_dim, d, rng)?,
            transformer: Transformer::new(store, name, cfg, d, ffn, max_len, rng)?,
        })
    }

    /// Encodes id sequences padded to a common length with `PAD` (0).
    /// Returns the pooled `[B, d]` matrix and the pre-pooling outputs.
    pub fn encode_padded(
        &self,
        g: &mut Graph,
        ids: &[u32],
        seq_len: usize,
    ) -> Result<(Var, Var), TensorError> {
        let mask: Vec<bool> = ids.iter().map(|&i| i != 0).collect();
        for (s, chunk) in mask.chunks(seq_len).enumerate() {
            if !chunk.iter().any(|&m| m) {
                return Err(TensorError::Config(format!("sequence {s} is all padding")));
            }
        }
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let table = g.param(self.embedding);
        let emb = g.gather_rows(table, &idx)?;
        let x = self.input.apply(g, emb)?;
        let h = self.transformer.forward(g, x, seq_len, &mask)?;
        let pooled = g.masked_max_pool(h, seq_len, &mask)?;
        Ok((pooled, h))
    }

    /// Encodes unpadded sequences, padding only to the longest one.
    pub fn encode(&self, g: &mut Graph, seqs: &[Vec<u32>]) -> Result<Var, TensorError> {
        let len = seqs.iter().map(Vec::len).max().ok_or(TensorError::Empty("encode"))?;
        let mut ids = Vec::with_capacity(seqs.len() * len);
        for s in seqs {
            ids.extend_from_slice(s);
            ids.resize(ids.len() + len - s.len(), 0);
        }
        Ok(self.encode_padded(g, &ids, len)?.0)
    }
}

/// Per-segment character CNN (widths × filter counts, tanh, max over time),
/// projected to the hidden size and contextualised by a transformer.
#[derive(Clone, Debug)]
pub(crate) struct CharEncoder {
    embedding: ParamId,
    convs: Vec<(usize, Dense)>,
    input: Dense,
    transformer: Transformer,
    max_width: usize,
}

impl CharEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        num_chars: usize,
        char_dim: usize,
        widths: &[usize],
        filters: &[usize],
        d: usize,
        ffn: usize,
        cfg: EncoderConfig,
        max_segments: usize,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        if widths.len() != filters.len() || widths.is_empty() || widths.contains(&0) {
            return Err(TensorError::Config(
                "char widths and filter counts must be nonempty and equal length".into(),
            ));
        }
        let embedding = store.uniform(&format!("{name}.char_emb"), &[num_chars, char_dim], 0.05, rng)?;
        let mut convs = Vec::new();
        for (&w, &n) in widths.iter().zip(filters) {
            convs.push((w, Dense::new(store, &format!("{name}.conv{w}"), w * char_dim, n, rng)?));
        }
        let features: usize = filters.iter().sum();
        Ok(Self {
            embedding,
            convs,
            input: Dense::new(store, &format!("{name}.input"), features, d, rng)?,
            transformer: Transformer::new(store, name, cfg, d, ffn, max_segments, rng)?,
            max_width: *widths.iter().max().expect("nonempty"),
        })
    }

    /// Feature vectors (before projection) of whitespace segments, one row
    /// per segment. Segments shorter than the widest kernel are right-padded.
    pub fn segment_features(&self, g: &mut Graph, segments: &[Vec<u32>]) -> Result<Var, TensorError> {
        let padded: Vec<Vec<u32>> = segments
            .iter()
            .map(|s| {
                let mut s = s.clone();
                s.resize(s.len().max(self.max_width), 0);
                s
            })
            .collect();
        let table = g.param(self.embedding);
        let mut maps = Vec::with_capacity(self.convs.len());
        for (w, conv) in &self.convs {
            let lengths: Vec<usize> = padded.iter().map(|s| s.len() + 1 - w).collect();
            let mut cols = Vec::with_capacity(*w);
            for off in 0..*w {
                let idx: Vec<usize> = padded
                    .iter()
                    .flat_map(|s| (0..s.len() + 1 - w).map(move |i| s[i + off] as usize))
                    .collect();
                cols.push(g.gather_rows(table, &idx)?);
            }
            let windows = g.concat_cols(&cols)?;
            let z = conv.apply(g, windows)?;
            let f = g.tanh(z);
            maps.push(g.segment_max(f, &lengths)?);
        }
        g.concat_cols(&maps)
    }

    /// Encodes prefixes given as lists of segment char ids; returns `[P, d]`.
    pub fn encode(&self, g: &mut Graph, prefixes: &[Vec<Vec<u32>>]) -> Result<Var, TensorError> {
        if prefixes.iter().any(|p| p.is_empty()) {
            return Err(TensorError::Config("empty prefix".into()));
        }
        let all: Vec<Vec<u32>> = prefixes.iter().flatten().cloned().collect();
        let feats = self.segment_features(g, &all)?;
        let seg = self.input.apply(g, feats)?;
        let len = prefixes.iter().map(Vec::len).max().expect("nonempty");
        let d = g.value(seg).cols();
        let zero = g.input(Tensor::zeros(&[1, d]));
        let stacked = g.concat_rows(&[seg, zero])?;
        let pad_row = all.len();
        let mut idx = Vec::with_capacity(prefixes.len() * len);
        let mut mask = Vec::with_capacity(prefixes.len() * len);
        let mut next = 0;
        for p in prefixes {
            for i in 0..len {
                if i < p.len() {
                    idx.push(next + i);
                    mask.push(true);
                } else {
                    idx.push(pad_row);
                    mask.push(false);
                }
            }
            next += p.len();
        }
        let x = g.gather_rows(stacked, &idx)?;
        let h = self.transformer.forward(g, x, len, &mask)?;
        g.masked_max_pool(h, len, &mask)
    }
}

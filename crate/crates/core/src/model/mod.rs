//! The search intention ranker and its ablations.
//!
//! Candidates, token-level prefixes and history elements share one token
//! encoder. The full model adds a per-segment character CNN prefix encoder
//! (`PI`), reformulation-aware history encoders with candidate-keyed
//! attention (`H`), and the evolution inferencer comparing pooled history
//! with the prefix (`SE`).

mod encoder;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize_pad, Candidate, History, Impression, ViewSpec, Vocab, PAD};
use crate::tensor::checkpoint::{self, CheckpointError};
use crate::tensor::{two_way_softmax, Graph, ParamStore, Tensor, TensorError, Var};

pub use encoder::EncoderConfig;
use encoder::{CharEncoder, Dense, TokenEncoder, Transformer};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid model metadata: {0}")]
    Metadata(#[from] serde_json::Error),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("checkpoint holds variant {found}, expected {expected}")]
    VariantMismatch { expected: Variant, found: Variant },
}

/// Ablation rows: the base model plus any of `H`, `SE` and `PI`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "SIN_b")]
    Base,
    #[serde(rename = "SIN_b+H")]
    History,
    #[serde(rename = "SIN_b+H+SE")]
    HistoryEvolution,
    #[serde(rename = "SIN_b+H+PI")]
    HistoryPrefix,
    #[serde(rename = "SIN")]
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Base,
        Variant::History,
        Variant::HistoryEvolution,
        Variant::HistoryPrefix,
        Variant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "SIN_b",
            Variant::History => "SIN_b+H",
            Variant::HistoryEvolution => "SIN_b+H+SE",
            Variant::HistoryPrefix => "SIN_b+H+PI",
            Variant::Full => "SIN",
        }
    }

    pub fn history_encoder(self) -> bool {
        self != Variant::Base
    }

    pub fn evolution(self) -> bool {
        matches!(self, Variant::HistoryEvolution | Variant::Full)
    }

    pub fn char_prefix(self) -> bool {
        matches!(self, Variant::HistoryPrefix | Variant::Full)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| ModelError::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SinConfig {
    pub char_widths: Vec<usize>,
    pub char_filters: Vec<usize>,
    pub char_dim: usize,
    pub token_dim: usize,
    pub hidden: usize,
    pub ffn_dim: usize,
    pub candidate_encoder: EncoderConfig,
    pub prefix_encoder: EncoderConfig,
    pub history_encoder: EncoderConfig,
    /// Hidden widths of the prediction network; a 2-way output follows.
    pub mlp: Vec<usize>,
    pub views: Vec<ViewSpec>,
    pub query_pad: usize,
    pub max_prefix_chars: usize,
    pub l2: f64,
}

impl Default for SinConfig {
    fn default() -> Self {
        Self {
            char_widths: vec![1, 2, 3],
            char_filters: vec![50, 100, 100],
            char_dim: 32,
            token_dim: 64,
            hidden: 128,
            ffn_dim: 512,
            candidate_encoder: EncoderConfig { blocks: 4, heads: 4 },
            prefix_encoder: EncoderConfig { blocks: 4, heads: 4 },
            history_encoder: EncoderConfig { blocks: 6, heads: 8 },
            mlp: vec![256, 128, 64],
            views: ViewSpec::defaults(),
            query_pad: 8,
            max_prefix_chars: 20,
            l2: 1e-6,
        }
    }
}

impl SinConfig {
    /// Hidden 32 with shallow encoders, for tests and desk-scale runs.
    pub fn small() -> Self {
        Self {
            char_filters: vec![8, 16, 16],
            char_dim: 16,
            token_dim: 32,
            hidden: 32,
            ffn_dim: 64,
            candidate_encoder: EncoderConfig { blocks: 2, heads: 2 },
            prefix_encoder: EncoderConfig { blocks: 2, heads: 2 },
            history_encoder: EncoderConfig { blocks: 2, heads: 2 },
            mlp: vec![64, 32, 16],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: &str| Err(ModelError::Config(m.to_string()));
        let dims = [self.char_dim, self.token_dim, self.hidden, self.ffn_dim, self.query_pad];
        if dims.contains(&0) || self.max_prefix_chars == 0 {
            return err("all dimensions must be positive");
        }
        if self.mlp.contains(&0) {
            return err("mlp widths must be positive");
        }
        if self.views.is_empty() || self.views.iter().any(|v| v.cap == 0 || v.pad_len == 0) {
            return err("need at least one view with positive cap and pad length");
        }
        for e in [self.candidate_encoder, self.prefix_encoder, self.history_encoder] {
            if e.heads == 0 || self.hidden % e.heads != 0 {
                return err("attention heads must divide the hidden size");
            }
        }
        if self.char_widths.len() != self.char_filters.len() || self.char_widths.is_empty() {
            return err("char widths and filter counts must pair up");
        }
        if !(self.l2 >= 0.0) {
            return err("l2 must be non-negative");
        }
        Ok(())
    }

    /// Width of the prediction network input.
    pub fn prediction_input_dim(&self, variant: Variant) -> usize {
        let d = self.hidden;
        let e = if variant.evolution() { 2 * d + 1 } else { 0 };
        self.views.len() * d + d + e + d + 1
    }

    fn max_segments(&self) -> usize {
        self.max_prefix_chars.div_ceil(2)
    }

    fn max_tokens(&self) -> usize {
        self.views.iter().map(|v| v.pad_len).chain([self.query_pad]).max().unwrap_or(1)
    }
}

/// One ranking request: a prefix, the history at that moment and the
/// candidates to score.
#[derive(Clone, Copy, Debug)]
pub struct GroupInput<'a> {
    pub prefix: &'a str,
    pub history: &'a History,
    pub candidates: &'a [Candidate],
}

impl<'a> From<&'a Impression> for GroupInput<'a> {
    fn from(imp: &'a Impression) -> Self {
        Self {
            prefix: &imp.prefix,
            history: &imp.history,
            candidates: &imp.candidates,
        }
    }
}

/// Handles to one view's intermediate values.
#[derive(Clone, Debug)]
pub struct ViewOutput {
    /// Pooled view vector per candidate row, `[M, d]`.
    pub h: Var,
    /// Candidate-keyed attention `[M, G·L]`; only the row's own group slots
    /// are unmasked.
    pub attention: Option<Var>,
    pub attention_mask: Vec<bool>,
    /// Element encodings, reformulations and context outputs, `[G·L, d]`.
    pub elements: Option<Var>,
    pub reformulation: Option<Var>,
    pub context: Option<Var>,
    /// `tanh(W·c_i + b)`, the attention keys.
    pub focus: Option<Var>,
    pub seq_len: usize,
}

/// Handles into the graph built by [`SinModel::forward`].
#[derive(Clone, Debug)]
pub struct Forward {
    /// `[M, 2]` over all candidates of all groups, in order.
    pub logits: Var,
    pub group_of: Vec<usize>,
    /// Candidate vectors `[M, d]` and prefix vectors `[G, d]`.
    pub q: Var,
    pub p: Var,
    pub views: Vec<ViewOutput>,
    /// Present views per group.
    pub view_present: Vec<Vec<bool>>,
    /// `[M, N]` view weights, `[M, d]` pooled history, `[M, 2d+1]` evolution
    /// vector and `[M, 1]` cosine, when the variant has them.
    pub evolve_attention: Option<Var>,
    pub pooled_history: Option<Var>,
    pub evolution: Option<Var>,
    pub cosine: Option<Var>,
}

/// Per-candidate score with the evolution diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub probability: f64,
    pub view_weights: Option<Vec<f64>>,
    pub cosine: Option<f64>,
}

#[derive(Clone, Debug)]
struct HistoryView {
    ts: Dense,
    context: Transformer,
    focus: Dense,
}

#[derive(Clone, Debug)]
struct Parts {
    tokens: TokenEncoder,
    chars: Option<CharEncoder>,
    history: Vec<HistoryView>,
    mlp: Vec<Dense>,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    variant: Variant,
    config: SinConfig,
    vocab: Vocab,
}

/// Parameters and vocabulary of one variant.
#[derive(Clone, Debug)]
pub struct SinModel {
    pub variant: Variant,
    pub config: SinConfig,
    pub vocab: Vocab,
    pub store: ParamStore,
    parts: Parts,
}

fn trimmed(mut ids: Vec<u32>) -> Vec<u32> {
    while ids.last() == Some(&PAD) {
        ids.pop();
    }
    ids
}

impl SinModel {
    pub fn new(variant: Variant, config: SinConfig, vocab: Vocab, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config;
        let d = c.hidden;
        let tokens = TokenEncoder::new(
            &mut store,
            "token",
            vocab.num_tokens(),
            c.token_dim,
            d,
            c.ffn_dim,
            c.candidate_encoder,
            c.max_tokens(),
            &mut rng,
        )?;
        let chars = if variant.char_prefix() {
            Some(CharEncoder::new(
                &mut store,
                "prefix",
                vocab.num_chars(),
                c.char_dim,
                &c.char_widths,
                &c.char_filters,
                d,
                c.ffn_dim,
                c.prefix_encoder,
                c.max_segments(),
                &mut rng,
            )?)
        } else {
            None
        };
        let mut history = Vec::new();
        if variant.history_encoder() {
            for (i, v) in c.views.iter().enumerate() {
                let name = format!("view{i}");
                history.push(HistoryView {
                    ts: Dense::new(&mut store, &format!("{name}.ts"), 2 * d, d, &mut rng)?,
                    context: Transformer::new(
                        &mut store,
                        &format!("{name}.context"),
                        c.history_encoder,
                        d,
                        c.ffn_dim,
                        v.cap,
                        &mut rng,
                    )?,
                    focus: Dense::new(&mut store, &format!("{name}.focus"), d, d, &mut rng)?,
                });
            }
        }
        let mut mlp = Vec::new();
        let mut fan_in = c.prediction_input_dim(variant);
        for (i, &w) in c.mlp.iter().chain([2usize].iter()).enumerate() {
            mlp.push(Dense::new(&mut store, &format!("predict.layer{i}"), fan_in, w, &mut rng)?);
            fan_in = w;
        }
        Ok(Self {
            variant,
            config,
            vocab,
            store,
            parts: Parts {
                tokens,
                chars,
                history,
                mlp,
            },
        })
    }

    fn prefix_text<'s>(&self, prefix: &'s str) -> &'s str {
        match prefix.char_indices().nth(self.config.max_prefix_chars) {
            Some((i, _)) => &prefix[..i],
            None => prefix,
        }
    }

    /// Builds the scoring graph for a batch of groups.
    pub fn forward(&self, g: &mut Graph, groups: &[GroupInput]) -> Result<Forward, ModelError> {
        let cfg = &self.config;
        let d = cfg.hidden;
        if groups.is_empty() {
            return Err(ModelError::Config("empty batch".into()));
        }
        if let Some(i) = groups.iter().position(|gr| gr.candidates.is_empty()) {
            return Err(ModelError::Config(format!("group {i} has no candidates")));
        }
        for gr in groups {
            if gr.history.views.len() != cfg.views.len() {
                return Err(ModelError::Config(format!(
                    "history has {} views, model expects {}",
                    gr.history.views.len(),
                    cfg.views.len()
                )));
            }
        }

        // distinct token sequences across candidates, prefixes and history
        let mut seqs: Vec<Vec<u32>> = Vec::new();
        let mut seen: HashMap<Vec<u32>, usize> = HashMap::new();
        let mut intern = |text: &str, pad: usize| -> Result<usize, ModelError> {
            let ids = trimmed(tokenize_pad(text, &self.vocab, pad));
            if ids.is_empty() {
                return Err(ModelError::Config(format!("`{text}` has no tokens")));
            }
            Ok(*seen.entry(ids.clone()).or_insert_with(|| {
                seqs.push(ids);
                seqs.len() - 1
            }))
        };
        let mut cand_rows = Vec::new();
        let mut group_of = Vec::new();
        let mut popularity = Vec::new();
        for (gi, gr) in groups.iter().enumerate() {
            for c in gr.candidates {
                cand_rows.push(intern(&c.text, cfg.query_pad)?);
                group_of.push(gi);
                popularity.push(c.popularity());
            }
        }
        let mut prefix_rows = Vec::new();
        if self.parts.chars.is_none() {
            for gr in groups {
                prefix_rows.push(intern(self.prefix_text(gr.prefix), cfg.query_pad)?);
            }
        }
        let mut hist_rows: Vec<Vec<Vec<usize>>> = vec![Vec::new(); cfg.views.len()];
        for gr in groups {
            for (v, spec) in cfg.views.iter().enumerate() {
                let seq = &gr.history.views[v];
                let start = seq.items.len().saturating_sub(spec.cap);
                let rows = seq.items[start..]
                    .iter()
                    .map(|t| intern(t, spec.pad_len))
                    .collect::<Result<Vec<_>, _>>()?;
                hist_rows[v].push(rows);
            }
        }
        let view_present: Vec<Vec<bool>> = (0..groups.len())
            .map(|gi| hist_rows.iter().map(|v| !v[gi].is_empty()).collect())
            .collect();

        let enc = self.parts.tokens.encode(g, &seqs)?;
        let q = g.gather_rows(enc, &cand_rows)?;
        let p = match &self.parts.chars {
            Some(chars) => {
                let prefixes = groups
                    .iter()
                    .map(|gr| {
                        self.prefix_text(gr.prefix)
                            .split_whitespace()
                            .map(|s| s.chars().map(|c| self.vocab.char_id(c)).collect())
                            .collect()
                    })
                    .collect::<Vec<Vec<Vec<u32>>>>();
                chars.encode(g, &prefixes)?
            }
            None => g.gather_rows(enc, &prefix_rows)?,
        };
        let p_rep = g.gather_rows(p, &group_of)?;
        let m = group_of.len();

        let zero = g.input(Tensor::zeros(&[1, d]));
        let enc0 = g.concat_rows(&[enc, zero])?;
        let zero_row = seqs.len();
        let mut views = Vec::with_capacity(cfg.views.len());
        for (v, rows) in hist_rows.iter().enumerate() {
            let len = rows.iter().map(Vec::len).max().unwrap_or(0);
            if len == 0 {
                let h = g.input(Tensor::zeros(&[m, d]));
                views.push(ViewOutput {
                    h,
                    attention: None,
                    attention_mask: Vec::new(),
                    elements: None,
                    reformulation: None,
                    context: None,
                    focus: None,
                    seq_len: 0,
                });
                continue;
            }
            match self.parts.history.get(v) {
                None => {
                    // mean of element encodings
                    let mut flat = Vec::new();
                    let mut ranges = Vec::new();
                    for r in rows {
                        ranges.push((flat.len(), r.len()));
                        flat.extend_from_slice(r);
                    }
                    let t = g.gather_rows(enc, &flat)?;
                    let sums = g.segment_sum(t, &ranges)?;
                    let inv: Vec<f64> = rows
                        .iter()
                        .map(|r| if r.is_empty() { 0.0 } else { 1.0 / r.len() as f64 })
                        .collect();
                    let inv = g.input(Tensor::matrix(rows.len(), 1, inv)?);
                    let means = g.mul_col(sums, inv)?;
                    let h = g.gather_rows(means, &group_of)?;
                    views.push(ViewOutput {
                        h,
                        attention: None,
                        attention_mask: Vec::new(),
                        elements: Some(t),
                        reformulation: None,
                        context: None,
                        focus: None,
                        seq_len: 0,
                    });
                }
                Some(hv) => {
                    let mut idx = Vec::with_capacity(rows.len() * len);
                    let mut prev = Vec::with_capacity(rows.len() * len);
                    let mut mask = Vec::with_capacity(rows.len() * len);
                    for r in rows {
                        for i in 0..len {
                            if i < r.len() {
                                idx.push(r[i]);
                                // s_1 = t_1 - t_1 = 0
                                prev.push(r[i.saturating_sub(1)]);
                                mask.push(true);
                            } else {
                                idx.push(zero_row);
                                prev.push(zero_row);
                                mask.push(false);
                            }
                        }
                    }
                    let t = g.gather_rows(enc0, &idx)?;
                    let t_prev = g.gather_rows(enc0, &prev)?;
                    let s = g.sub(t, t_prev)?;
                    let ts = g.concat_cols(&[t, s])?;
                    let r = hv.ts.apply(g, ts)?;
                    let r = g.relu(r);
                    let c = hv.context.forward(g, r, len, &mask)?;
                    let f = hv.focus.apply(g, c)?;
                    let f = g.tanh(f);
                    let logits = g.matmul_t(q, f)?;
                    let cols = rows.len() * len;
                    let mut amask = vec![false; m * cols];
                    for (row, &gi) in group_of.iter().enumerate() {
                        for i in 0..rows[gi].len() {
                            amask[row * cols + gi * len + i] = true;
                        }
                    }
                    let a = g.softmax_rows(logits, Some(&amask))?;
                    let h = g.matmul(a, c)?;
                    views.push(ViewOutput {
                        h,
                        attention: Some(a),
                        attention_mask: amask,
                        elements: Some(t),
                        reformulation: Some(s),
                        context: Some(c),
                        focus: Some(f),
                        seq_len: len,
                    });
                }
            }
        }

        let (mut evolve_attention, mut pooled_history, mut evolution, mut cosine) =
            (None, None, None, None);
        if self.variant.evolution() {
            let ones = g.input(Tensor::matrix(d, 1, vec![1.0; d])?);
            let mut logits = Vec::with_capacity(views.len());
            for vo in &views {
                let prod = g.mul(vo.h, p_rep)?;
                logits.push(g.matmul(prod, ones)?);
            }
            let logits = g.concat_cols(&logits)?;
            let mask: Vec<bool> = group_of.iter().flat_map(|&gi| view_present[gi].clone()).collect();
            let a = g.softmax_rows(logits, Some(&mask))?;
            let mut pooled = None;
            for (v, vo) in views.iter().enumerate() {
                let w = g.slice_cols(a, v, 1)?;
                let term = g.mul_col(vo.h, w)?;
                pooled = Some(match pooled {
                    None => term,
                    Some(acc) => g.add(acc, term)?,
                });
            }
            let pooled = pooled.expect("at least one view");
            let diff = g.sub(pooled, p_rep)?;
            let prod = g.mul(pooled, p_rep)?;
            let cos = g.cosine_rows(pooled, p_rep)?;
            let cat = g.concat_cols(&[diff, prod, cos])?;
            evolution = Some(g.relu(cat));
            evolve_attention = Some(a);
            pooled_history = Some(pooled);
            cosine = Some(cos);
        }

        let pop = g.input(Tensor::matrix(m, 1, popularity)?);
        let mut parts: Vec<Var> = views.iter().map(|v| v.h).collect();
        parts.push(p_rep);
        parts.extend(evolution);
        parts.push(q);
        parts.push(pop);
        let mut x = g.concat_cols(&parts)?;
        let last = self.parts.mlp.len() - 1;
        for (i, layer) in self.parts.mlp.iter().enumerate() {
            x = layer.apply(g, x)?;
            if i < last {
                x = g.relu(x);
            }
        }
        Ok(Forward {
            logits: x,
            group_of,
            q,
            p,
            views,
            view_present,
            evolve_attention,
            pooled_history,
            evolution,
            cosine,
        })
    }

    /// Pooled token-encoder output for sequences padded to `seq_len`.
    pub fn encode_token_ids(&self, g: &mut Graph, ids: &[u32], seq_len: usize) -> Result<Var, ModelError> {
        Ok(self.parts.tokens.encode_padded(g, ids, seq_len)?.0)
    }

    /// Mean cross-entropy of the candidate labels (without the L2 term).
    pub fn loss(&self, g: &mut Graph, groups: &[GroupInput]) -> Result<(Var, Forward), ModelError> {
        let fwd = self.forward(g, groups)?;
        let labels: Vec<f64> = groups
            .iter()
            .flat_map(|gr| gr.candidates.iter().map(|c| f64::from(u8::from(c.label))))
            .collect();
        let loss = g.softmax_bce(fwd.logits, &labels)?;
        Ok((loss, fwd))
    }

    /// Full objective: cross-entropy plus `λ‖Θ‖²`.
    pub fn objective(&self, groups: &[GroupInput]) -> Result<f64, ModelError> {
        let mut g = Graph::new(&self.store);
        let (loss, _) = self.loss(&mut g, groups)?;
        Ok(g.value(loss).data()[0] + self.config.l2 * self.store.l2_squared())
    }

    /// Click probabilities, one list per group.
    pub fn score(&self, groups: &[GroupInput]) -> Result<Vec<Vec<f64>>, ModelError> {
        Ok(self
            .score_detailed(groups)?
            .into_iter()
            .map(|v| v.into_iter().map(|s| s.probability).collect())
            .collect())
    }

    pub fn score_detailed(&self, groups: &[GroupInput]) -> Result<Vec<Vec<Scored>>, ModelError> {
        let mut g = Graph::new(&self.store);
        let fwd = self.forward(&mut g, groups)?;
        let logits = g.value(fwd.logits);
        let weights = fwd.evolve_attention.map(|a| g.value(a));
        let cos = fwd.cosine.map(|c| g.value(c));
        let mut out: Vec<Vec<Scored>> = vec![Vec::new(); groups.len()];
        for (row, &gi) in fwd.group_of.iter().enumerate() {
            out[gi].push(Scored {
                probability: two_way_softmax(logits.get(row, 0), logits.get(row, 1)),
                view_weights: weights.map(|w| w.row(row).to_vec()),
                cosine: cos.map(|c| c.get(row, 0)),
            });
        }
        Ok(out)
    }

    fn metadata(&self) -> Result<String, ModelError> {
        Ok(serde_json::to_string(&Metadata {
            variant: self.variant,
            config: self.config.clone(),
            vocab: self.vocab.clone(),
        })?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        checkpoint::save(path, &self.store, &self.metadata()?)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let mut buf = Vec::new();
        checkpoint::write_to(&mut buf, &self.store, &self.metadata()?).map_err(CheckpointError::from)?;
        Ok(buf)
    }

    fn from_parts(store: ParamStore, meta: &str, expected: Option<Variant>) -> Result<Self, ModelError> {
        let mut meta: Metadata = serde_json::from_str(meta)?;
        if let Some(expected) = expected {
            if expected != meta.variant {
                return Err(ModelError::VariantMismatch {
                    expected,
                    found: meta.variant,
                });
            }
        }
        meta.vocab.reindex();
        let mut model = Self::new(meta.variant, meta.config, meta.vocab, 0)?;
        checkpoint::restore_into(&mut model.store, &store)?;
        Ok(model)
    }

    /// Loads a checkpoint; with `expected` set, refuses any other variant.
    pub fn load(path: &Path, expected: Option<Variant>) -> Result<Self, ModelError> {
        let (store, meta) = checkpoint::load(path)?;
        Self::from_parts(store, &meta, expected)
    }

    pub fn from_bytes(bytes: &[u8], expected: Option<Variant>) -> Result<Self, ModelError> {
        let (store, meta) = checkpoint::read_from(bytes)?;
        Self::from_parts(store, &meta, expected)
    }
}

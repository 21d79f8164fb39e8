//! Deterministic seeded toy transformer with skippable residual blocks.
//!
//! This is the built-in evaluator backend: a CPU-only, decoder-style,
//! pre-norm transformer whose every weight comes from one SplitMix64 stream,
//! so two builds from the same spec are bit-identical. Blocks listed in
//! `redundant_blocks` have both residual-branch output projections scaled by
//! exactly 0, which makes those blocks exact identity functions — ground
//! truth for redundancy-detection tests.
//!
//! ## Weight draw order
//!
//! All weights are drawn from `SplitMix64::new(seed)` as
//! `next_signed_unit() / sqrt(dim)`, row-major within each matrix, in this
//! order:
//!
//! 1. token embedding `[vocab × dim]`
//! 2. positional embedding `[max_len × dim]`
//! 3. per block `b = 0..n_blocks`: `w_q`, `w_k`, `w_v`, `w_o` (each
//!    `[dim × dim]`), `w_in` `[dim × 4·dim]`, `w_out` `[4·dim × dim]`
//! 4. unembedding `[dim × vocab]`
//!
//! Redundant blocks are zeroed *after* drawing, so models that differ only
//! in `redundant_blocks` share all other weights.
//!
//! ## Forward pass
//!
//! `h = tok_emb[id] + pos_emb[position]`, then for each retained block in
//! ascending index order: `h += Attn(LN(h))`, `h += Mlp(LN(h))`, then a
//! final `LN` and the unembedding. LayerNorm is parameter-free,
//! `(x - mean) / sqrt(var + 1e-5)` with population variance. Attention is
//! causal multi-head with `1/sqrt(head_dim)` scaling; the MLP is
//! `relu(x · w_in) · w_out`. There are no biases. A skipped block
//! contributes nothing: its input passes through untouched. With no blocks
//! retained at all, the logits are just the unembedded final-normed
//! embeddings; the search never relies on that degenerate path but it is
//! defined and tested.
//!
//! ## Self-labeled calibration data
//!
//! [`ToyModel::gen_calibration`] draws token sequences from its own seeded
//! stream and labels them with the *full* model's outputs, so the full
//! model's top-1 accuracy and set precision on its own calibration set are
//! exactly 1.0 and removing a planted-redundant block cannot change any
//! score.

use std::fmt;

use thiserror::Error;

use crate::block::BlockSet;
use crate::dataset::{CalExample, CalibrationSet, Gold, TaskKind, TokenSequence};
use crate::metrics::{Caption, Label, LabelSet, ReferenceSet};
use crate::rng::SplitMix64;

/// Generation stops at this reserved token id.
pub const END_TOKEN: usize = 0;
/// New tokens generated for caption references and caption scoring.
pub const DEFAULT_MAX_NEW: usize = 16;
/// Prediction-set size used for self-labeled multi-label data.
pub const DEFAULT_SET_K: usize = 3;
/// Size cap for the canonical class vocabulary `c0, c1, ...`.
pub const DEFAULT_CLASS_COUNT: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum ToyError {
    #[error("invalid model spec: {detail}")]
    InvalidSpec { detail: String },
    #[error("model has {model} blocks but the retained set covers {retained}")]
    BlockCountMismatch { model: usize, retained: usize },
    #[error("sequence length {len} exceeds max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },
    #[error("token id {id} outside vocabulary of size {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("class vocabulary is empty")]
    EmptyClassVocab,
    #[error("class vocabulary of {len} labels exceeds model vocabulary {vocab}")]
    ClassVocabTooLarge { len: usize, vocab: usize },
    #[error("k={k} outside valid range 1..={classes}")]
    KOutOfRange { k: usize, classes: usize },
    #[error("calibration set must have at least one example")]
    EmptyCalibration,
}

/// Everything needed to rebuild a toy model bit-for-bit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyModelSpec {
    pub seed: u64,
    pub n_blocks: usize,
    pub dim: usize,
    pub n_heads: usize,
    pub vocab: usize,
    pub max_len: usize,
    pub redundant_blocks: Vec<usize>,
}

impl Default for ToyModelSpec {
    fn default() -> Self {
        Self {
            seed: 42,
            n_blocks: 8,
            dim: 32,
            n_heads: 4,
            vocab: 64,
            max_len: 32,
            redundant_blocks: Vec::new(),
        }
    }
}

impl ToyModelSpec {
    pub fn validate(&self) -> Result<(), ToyError> {
        let fail = |detail: String| Err(ToyError::InvalidSpec { detail });
        if self.n_blocks == 0 {
            return fail("n_blocks must be >= 1".into());
        }
        if self.dim == 0 || self.n_heads == 0 || self.dim % self.n_heads != 0 {
            return fail(format!(
                "dim {} must be a positive multiple of n_heads {}",
                self.dim, self.n_heads
            ));
        }
        if self.vocab < 2 {
            return fail("vocab must be >= 2 (token 0 is the end token)".into());
        }
        if self.max_len == 0 {
            return fail("max_len must be >= 1".into());
        }
        let mut seen = vec![false; self.n_blocks];
        for &b in &self.redundant_blocks {
            if b >= self.n_blocks {
                return fail(format!("redundant block {b} out of range"));
            }
            if seen[b] {
                return fail(format!("redundant block {b} listed twice"));
            }
            seen[b] = true;
        }
        Ok(())
    }

    /// Parse the CLI model string, e.g.
    /// `toy:seed=42,L=8,d=32,heads=4,vocab=64,redundant=5;6`.
    /// Omitted fields take the defaults; the `toy:` prefix is optional.
    pub fn parse(text: &str) -> Result<Self, ToyError> {
        let body = text.strip_prefix("toy:").unwrap_or(text);
        let mut spec = Self::default();
        let fail = |detail: String| ToyError::InvalidSpec { detail };
        for part in body.split(',') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| fail(format!("expected key=value, got `{part}`")))?;
            let parse_num = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| fail(format!("bad number `{v}` for `{key}`")))
            };
            match key {
                "seed" => {
                    spec.seed = value
                        .parse::<u64>()
                        .map_err(|_| fail(format!("bad seed `{value}`")))?
                }
                "L" => spec.n_blocks = parse_num(value)?,
                "d" => spec.dim = parse_num(value)?,
                "heads" => spec.n_heads = parse_num(value)?,
                "vocab" => spec.vocab = parse_num(value)?,
                "max_len" => spec.max_len = parse_num(value)?,
                "redundant" => {
                    spec.redundant_blocks = value
                        .split(';')
                        .filter(|s| !s.is_empty())
                        .map(|s| {
                            s.parse::<usize>()
                                .map_err(|_| fail(format!("bad redundant index `{s}`")))
                        })
                        .collect::<Result<_, _>>()?
                }
                _ => return Err(fail(format!("unknown key `{key}`"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for ToyModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "toy:seed={},L={},d={},heads={},vocab={},max_len={}",
            self.seed, self.n_blocks, self.dim, self.n_heads, self.vocab, self.max_len
        )?;
        if !self.redundant_blocks.is_empty() {
            let list: Vec<String> = self.redundant_blocks.iter().map(|b| b.to_string()).collect();
            write!(f, ",redundant={}", list.join(";"))?;
        }
        Ok(())
    }
}

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    fn drawn(rows: usize, cols: usize, rng: &mut SplitMix64, scale: f64) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.next_signed_unit() * scale)
            .collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// `self · rhs`, tallying one MAC per multiply-add into `ops`.
    fn matmul(&self, rhs: &Matrix, ops: &mut u64) -> Matrix {
        assert_eq!(self.cols, rhs.rows);
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(i, k);
                let rhs_row = rhs.row(k);
                let out_row = out.row_mut(i);
                for j in 0..rhs.cols {
                    out_row[j] += a * rhs_row[j];
                }
            }
        }
        *ops += (self.rows * self.cols * rhs.cols) as u64;
        out
    }

    fn add_assign(&mut self, other: &Matrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }
}

const LN_EPS: f64 = 1e-5;

/// Parameter-free LayerNorm applied to every row.
fn layer_norm(x: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.rows, x.cols);
    let d = x.cols as f64;
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for (o, v) in out.row_mut(r).iter_mut().zip(row) {
            *o = (v - mean) * inv;
        }
    }
    out
}

struct BlockWeights {
    w_q: Matrix,
    w_k: Matrix,
    w_v: Matrix,
    w_o: Matrix,
    w_in: Matrix,
    w_out: Matrix,
}

/// Output of a forward pass: `logits` is `[seq_len × vocab]`,
/// `hidden_final` the final-normed hidden states `[seq_len × dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: Matrix,
    pub hidden_final: Matrix,
}

/// A built toy model. Immutable after construction; forward passes on a
/// shared reference are safe from any number of threads.
pub struct ToyModel {
    spec: ToyModelSpec,
    tok_emb: Matrix,
    pos_emb: Matrix,
    blocks: Vec<BlockWeights>,
    unembed: Matrix,
}

impl ToyModel {
    pub fn build(spec: ToyModelSpec) -> Result<Self, ToyError> {
        spec.validate()?;
        let mut rng = SplitMix64::new(spec.seed);
        let scale = 1.0 / (spec.dim as f64).sqrt();
        let d = spec.dim;
        let hidden = 4 * d;
        let tok_emb = Matrix::drawn(spec.vocab, d, &mut rng, scale);
        let pos_emb = Matrix::drawn(spec.max_len, d, &mut rng, scale);
        let mut blocks = Vec::with_capacity(spec.n_blocks);
        for _ in 0..spec.n_blocks {
            blocks.push(BlockWeights {
                w_q: Matrix::drawn(d, d, &mut rng, scale),
                w_k: Matrix::drawn(d, d, &mut rng, scale),
                w_v: Matrix::drawn(d, d, &mut rng, scale),
                w_o: Matrix::drawn(d, d, &mut rng, scale),
                w_in: Matrix::drawn(d, hidden, &mut rng, scale),
                w_out: Matrix::drawn(hidden, d, &mut rng, scale),
            });
        }
        let unembed = Matrix::drawn(d, spec.vocab, &mut rng, scale);
        // Zero after drawing so the stream stays aligned across specs that
        // differ only in redundant_blocks.
        for &b in &spec.redundant_blocks {
            blocks[b].w_o = Matrix::zeros(d, d);
            blocks[b].w_out = Matrix::zeros(hidden, d);
        }
        Ok(Self {
            spec,
            tok_emb,
            pos_emb,
            blocks,
            unembed,
        })
    }

    pub fn spec(&self) -> &ToyModelSpec {
        &self.spec
    }

    pub fn n_blocks(&self) -> usize {
        self.spec.n_blocks
    }

    /// Canonical model id string, parseable by [`ToyModelSpec::parse`].
    pub fn id(&self) -> String {
        self.spec.to_string()
    }

    /// The canonical class vocabulary `c0..c{C-1}` with label `ci` bound to
    /// logit index `i`; `C = min(16, vocab)`.
    pub fn class_vocab(&self) -> Vec<Label> {
        (0..DEFAULT_CLASS_COUNT.min(self.spec.vocab))
            .map(|i| Label::new(format!("c{i}")).expect("non-empty"))
            .collect()
    }

    fn check_input(&self, input: &TokenSequence, retained: &BlockSet) -> Result<(), ToyError> {
        if retained.total_blocks() != self.spec.n_blocks {
            return Err(ToyError::BlockCountMismatch {
                model: self.spec.n_blocks,
                retained: retained.total_blocks(),
            });
        }
        if input.len() > self.spec.max_len {
            return Err(ToyError::SequenceTooLong {
                len: input.len(),
                max_len: self.spec.max_len,
            });
        }
        if let Some(&id) = input.ids().iter().find(|&&id| id >= self.spec.vocab) {
            return Err(ToyError::TokenOutOfRange {
                id,
                vocab: self.spec.vocab,
            });
        }
        Ok(())
    }

    pub fn forward(
        &self,
        input: &TokenSequence,
        retained: &BlockSet,
    ) -> Result<ForwardOutput, ToyError> {
        self.forward_with_ops(input, retained).map(|(out, _)| out)
    }

    /// Forward pass plus the multiply-accumulate tally for this call.
    /// The tally counts matmul MACs only (projections, attention scores and
    /// mixing, MLP, unembedding) and is exactly linear in the number of
    /// retained blocks; see [`ToyModel::theoretical_ops`].
    pub fn forward_with_ops(
        &self,
        input: &TokenSequence,
        retained: &BlockSet,
    ) -> Result<(ForwardOutput, u64), ToyError> {
        self.check_input(input, retained)?;
        let t = input.len();
        let d = self.spec.dim;
        let mut ops: u64 = 0;

        let mut h = Matrix::zeros(t, d);
        for (pos, &id) in input.ids().iter().enumerate() {
            let tok = self.tok_emb.row(id);
            let pe = self.pos_emb.row(pos);
            for (j, o) in h.row_mut(pos).iter_mut().enumerate() {
                *o = tok[j] + pe[j];
            }
        }

        for &b in retained.retained() {
            let block = &self.blocks[b];
            let attn = self.attention(&layer_norm(&h), block, &mut ops);
            h.add_assign(&attn);
            let mlp = Self::mlp(&layer_norm(&h), block, &mut ops);
            h.add_assign(&mlp);
        }

        let hidden_final = layer_norm(&h);
        let logits = hidden_final.matmul(&self.unembed, &mut ops);
        Ok((
            ForwardOutput {
                logits,
                hidden_final,
            },
            ops,
        ))
    }

    /// Causal multi-head attention on pre-normed input; returns the residual
    /// contribution (already projected through `w_o`).
    fn attention(&self, x: &Matrix, block: &BlockWeights, ops: &mut u64) -> Matrix {
        let t = x.rows;
        let d = self.spec.dim;
        let heads = self.spec.n_heads;
        let hd = d / heads;
        let scale = 1.0 / (hd as f64).sqrt();

        let q = x.matmul(&block.w_q, ops);
        let k = x.matmul(&block.w_k, ops);
        let v = x.matmul(&block.w_v, ops);

        let mut mixed = Matrix::zeros(t, d);
        for head in 0..heads {
            let lo = head * hd;
            for i in 0..t {
                // Scores over positions j <= i.
                let mut scores = Vec::with_capacity(i + 1);
                for j in 0..=i {
                    let mut dot = 0.0;
                    for c in 0..hd {
                        dot += q.at(i, lo + c) * k.at(j, lo + c);
                    }
                    *ops += hd as u64;
                    scores.push(dot * scale);
                }
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    total += *s;
                }
                let out_row = mixed.row_mut(i);
                for (j, &w) in scores.iter().enumerate() {
                    let weight = w / total;
                    for c in 0..hd {
                        out_row[lo + c] += weight * v.at(j, lo + c);
                    }
                    *ops += hd as u64;
                }
            }
        }
        mixed.matmul(&block.w_o, ops)
    }

    fn mlp(x: &Matrix, block: &BlockWeights, ops: &mut u64) -> Matrix {
        let mut inner = x.matmul(&block.w_in, ops);
        for v in inner.data.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        inner.matmul(&block.w_out, ops)
    }

    /// Closed-form MAC count for a forward pass over `seq_len` tokens with
    /// `n_retained` blocks executed. Matches the tally from
    /// [`ToyModel::forward_with_ops`] exactly.
    pub fn theoretical_ops(&self, seq_len: usize, n_retained: usize) -> u64 {
        let t = seq_len as u64;
        let d = self.spec.dim as u64;
        let vocab = self.spec.vocab as u64;
        // Per block: q/k/v/o projections 4·T·d², scores + mixing
        // 2·(T(T+1)/2)·d, MLP 2·T·d·4d.
        let per_block = 4 * t * d * d + t * (t + 1) * d + 8 * t * d * d;
        t * d * vocab + n_retained as u64 * per_block
    }

    /// Single-label prediction: argmax over the first `class_vocab.len()`
    /// logits at the last position; ties go to the lowest class index.
    pub fn classify(
        &self,
        input: &TokenSequence,
        retained: &BlockSet,
        class_vocab: &[Label],
    ) -> Result<Label, ToyError> {
        if class_vocab.is_empty() {
            return Err(ToyError::EmptyClassVocab);
        }
        if class_vocab.len() > self.spec.vocab {
            return Err(ToyError::ClassVocabTooLarge {
                len: class_vocab.len(),
                vocab: self.spec.vocab,
            });
        }
        let out = self.forward(input, retained)?;
        let logits = out.logits.row(out.logits.rows() - 1);
        let mut best = 0;
        for (i, &logit) in logits[..class_vocab.len()].iter().enumerate() {
            if logit > logits[best] {
                best = i;
            }
        }
        Ok(class_vocab[best].clone())
    }

    /// Top-k prediction set over the class vocabulary; ties broken by the
    /// lower class index.
    pub fn predict_set(
        &self,
        input: &TokenSequence,
        retained: &BlockSet,
        class_vocab: &[Label],
        k: usize,
    ) -> Result<LabelSet, ToyError> {
        if class_vocab.is_empty() {
            return Err(ToyError::EmptyClassVocab);
        }
        if class_vocab.len() > self.spec.vocab {
            return Err(ToyError::ClassVocabTooLarge {
                len: class_vocab.len(),
                vocab: self.spec.vocab,
            });
        }
        if k == 0 || k > class_vocab.len() {
            return Err(ToyError::KOutOfRange {
                k,
                classes: class_vocab.len(),
            });
        }
        let out = self.forward(input, retained)?;
        let logits = out.logits.row(out.logits.rows() - 1);
        let mut order: Vec<usize> = (0..class_vocab.len()).collect();
        order.sort_by(|&a, &b| {
            logits[b]
                .total_cmp(&logits[a])
                .then_with(|| a.cmp(&b))
        });
        Ok(LabelSet::new(
            order[..k].iter().map(|&i| class_vocab[i].clone()),
        ))
    }

    /// Greedy decoding: repeatedly append the argmax next token (lowest id
    /// wins ties) until `max_new` tokens, the end token, or `max_len`.
    /// Token ids are rendered as `t<id>` for metric scoring.
    pub fn generate_greedy(
        &self,
        prompt: &TokenSequence,
        retained: &BlockSet,
        max_new: usize,
    ) -> Result<Caption, ToyError> {
        self.check_input(prompt, retained)?;
        let mut ids = prompt.ids().to_vec();
        let mut words = Vec::new();
        for _ in 0..max_new {
            if ids.len() >= self.spec.max_len {
                break;
            }
            let seq = TokenSequence::new(ids.clone()).expect("non-empty");
            let out = self.forward(&seq, retained)?;
            let logits = out.logits.row(out.logits.rows() - 1);
            let mut best = 0;
            for (i, &logit) in logits.iter().enumerate() {
                if logit > logits[best] {
                    best = i;
                }
            }
            if best == END_TOKEN {
                break;
            }
            words.push(format!("t{best}"));
            ids.push(best);
        }
        Ok(Caption::from_tokens(words).expect("generated tokens have no whitespace"))
    }

    /// Self-labeled calibration data: `n` random token sequences from
    /// `SplitMix64::new(seed)` (length `8 + u % 9` capped at `max_len`, ids
    /// `1 + u % (vocab-1)`), with gold data produced by the full model —
    /// `classify` for single, `predict_set` with k = min(3, classes) for
    /// multi, `generate_greedy` with 16 new tokens for caption.
    pub fn gen_calibration(
        &self,
        task: TaskKind,
        n: usize,
        seed: u64,
    ) -> Result<CalibrationSet, ToyError> {
        if n == 0 {
            return Err(ToyError::EmptyCalibration);
        }
        let mut rng = SplitMix64::new(seed);
        let full = BlockSet::full(self.spec.n_blocks);
        let class_vocab = self.class_vocab();
        let mut examples = Vec::with_capacity(n);
        for i in 0..n {
            let len = (8 + rng.next_below(9) as usize).min(self.spec.max_len);
            let ids: Vec<usize> = (0..len)
                .map(|_| 1 + rng.next_below(self.spec.vocab as u64 - 1) as usize)
                .collect();
            let tokens = TokenSequence::new(ids).expect("len >= 1");
            let gold = match task {
                TaskKind::Single => {
                    Gold::Label(self.classify(&tokens, &full, &class_vocab)?)
                }
                TaskKind::Multi => {
                    let k = DEFAULT_SET_K.min(class_vocab.len());
                    Gold::Labels(self.predict_set(&tokens, &full, &class_vocab, k)?)
                }
                TaskKind::Caption => {
                    let caption = self.generate_greedy(&tokens, &full, DEFAULT_MAX_NEW)?;
                    Gold::References(
                        ReferenceSet::new(vec![caption]).expect("one reference"),
                    )
                }
            };
            examples.push(CalExample {
                id: format!("ex{i}"),
                tokens,
                gold,
            });
        }
        Ok(CalibrationSet::new(examples).expect("n >= 1, single task"))
    }
}

//! Hashing tokenizer and a single-head self-attention encoder block.
//!
//! `Z = softmax(Q Kᵀ / √d_s) V` with `Q = X W_Q`, `K = X W_K`, `V = X W_V`
//! and `X` the token-table rows of the sequence. There is no positional
//! encoding and the output is the mean of the rows of `Z`, so encodings are
//! invariant to token order.
//!
//! Training uses [`Projected`] tables (`token_table · W`) so that each
//! sequence only gathers rows; gradients flow back into the tables and are
//! folded into the parameters once per step by [`ProjectedGrads::fold`].

use std::hash::Hasher;

use fnv::FnvHasher;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};

pub const DEFAULT_VOCAB: usize = 4096;
pub const DEFAULT_DIM: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSeq {
    ids: Vec<u32>,
}

impl TokenSeq {
    pub fn new(ids: Vec<u32>, vocab_size: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptyText);
        }
        if let Some(bad) = ids.iter().find(|&&t| t as usize >= vocab_size) {
            return Err(Error::ShapeMismatch(format!("token {bad} >= vocab {vocab_size}")));
        }
        Ok(TokenSeq { ids })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// FNV-1a 64-bit hash of the token bytes.
pub fn token_hash(token: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(token.as_bytes());
    h.finish()
}

/// Lowercases, splits on runs of non-alphanumeric characters and hashes each
/// token into `[0, vocab_size)`.
pub fn tokenize(text: &str, vocab_size: usize) -> Result<TokenSeq> {
    let lower = text.to_lowercase();
    let ids: Vec<u32> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| (token_hash(t) % vocab_size as u64) as u32)
        .collect();
    if ids.is_empty() {
        return Err(Error::EmptyText);
    }
    Ok(TokenSeq { ids })
}

/// Sorted tags joined into one text, so tag order never matters.
pub fn user_text(tags: &[String]) -> Result<String> {
    if tags.is_empty() {
        return Err(Error::EmptyTagList);
    }
    let mut sorted: Vec<&str> = tags.iter().map(String::as_str).collect();
    sorted.sort_unstable();
    Ok(sorted.join(" "))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    Ad,
    User,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticEmbedding {
    pub vector: Array1<f64>,
    pub source_kind: SourceKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// `vocab × d_s`
    pub token_table: Array2<f64>,
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
}

impl EncoderParams {
    pub fn random<R: Rng + ?Sized>(vocab_size: usize, dim: usize, rng: &mut R) -> Self {
        let tok = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).unwrap();
        let bound = (3.0 / dim as f64).sqrt();
        let proj = Uniform::new(-bound, bound).unwrap();
        let token_table = Array2::from_shape_simple_fn((vocab_size, dim), || tok.sample(rng));
        let mut square = || Array2::from_shape_simple_fn((dim, dim), || proj.sample(rng));
        let w_q = square();
        let w_k = square();
        let w_v = square();
        EncoderParams {
            token_table,
            w_q,
            w_k,
            w_v,
        }
    }

    pub fn dim(&self) -> usize {
        self.token_table.ncols()
    }

    pub fn vocab_size(&self) -> usize {
        self.token_table.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        for (name, w) in [("W_Q", &self.w_q), ("W_K", &self.w_k), ("W_V", &self.w_v)] {
            if w.dim() != (d, d) {
                return Err(Error::ShapeMismatch(format!("{name} is {:?}, expected ({d}, {d})", w.dim())));
            }
        }
        Ok(())
    }

    fn scale(&self) -> f64 {
        1.0 / (self.dim() as f64).sqrt()
    }

    pub fn embed_tokens(&self, tokens: &TokenSeq) -> Result<Array2<f64>> {
        let vocab = self.vocab_size();
        if let Some(bad) = tokens.ids().iter().find(|&&t| t as usize >= vocab) {
            return Err(Error::ShapeMismatch(format!("token {bad} >= vocab {vocab}")));
        }
        let idx: Vec<usize> = tokens.ids().iter().map(|&t| t as usize).collect();
        Ok(self.token_table.select(Axis(0), &idx))
    }
}

/// Numerically stable in-place softmax of every row.
pub fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Row-stochastic attention matrix `softmax(Q Kᵀ / √d_s)` for input rows `x`.
pub fn attention_matrix(x: ArrayView2<f64>, params: &EncoderParams) -> Result<Array2<f64>> {
    params.validate()?;
    if x.nrows() == 0 {
        return Err(Error::EmptyText);
    }
    if x.ncols() != params.dim() {
        return Err(Error::ShapeMismatch(format!("input width {} vs d_s {}", x.ncols(), params.dim())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("attention input".into()));
    }
    let q = x.dot(&params.w_q);
    let k = x.dot(&params.w_k);
    let mut logits = q.dot(&k.t()) * params.scale();
    softmax_rows(&mut logits);
    Ok(logits)
}

pub fn self_attention(x: ArrayView2<f64>, params: &EncoderParams) -> Result<Array2<f64>> {
    let attn = attention_matrix(x, params)?;
    Ok(attn.dot(&x.dot(&params.w_v)))
}

pub fn encode(tokens: &TokenSeq, params: &EncoderParams) -> Result<Array1<f64>> {
    let x = params.embed_tokens(tokens)?;
    let z = self_attention(x.view(), params)?;
    Ok(z.mean_axis(Axis(0)).expect("non-empty sequence"))
}

pub fn encode_ad(text: &str, params: &EncoderParams) -> Result<SemanticEmbedding> {
    let tokens = tokenize(text, params.vocab_size())?;
    Ok(SemanticEmbedding {
        vector: encode(&tokens, params)?,
        source_kind: SourceKind::Ad,
    })
}

pub fn encode_user(tags: &[String], params: &EncoderParams) -> Result<SemanticEmbedding> {
    let tokens = tokenize(&user_text(tags)?, params.vocab_size())?;
    Ok(SemanticEmbedding {
        vector: encode(&tokens, params)?,
        source_kind: SourceKind::User,
    })
}

/// Token table pushed through the three projections.
#[derive(Debug, Clone)]
pub struct Projected {
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    scale: f64,
}

impl Projected {
    pub fn new(params: &EncoderParams) -> Self {
        Projected {
            q: params.token_table.dot(&params.w_q),
            k: params.token_table.dot(&params.w_k),
            v: params.token_table.dot(&params.w_v),
            scale: params.scale(),
        }
    }

    /// Forward pass for one sequence; keeps the attention matrix for backward.
    pub fn encode(&self, tokens: &[u32]) -> EncodedText {
        let idx: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let q = self.q.select(Axis(0), &idx);
        let k = self.k.select(Axis(0), &idx);
        let mut attn = q.dot(&k.t());
        attn *= self.scale;
        softmax_rows(&mut attn);
        let weights = attn.mean_axis(Axis(0)).expect("non-empty sequence");
        let pooled = self.v.select(Axis(0), &idx).t().dot(&weights);
        EncodedText { pooled, attn, weights }
    }

    /// Accumulates the gradient of `g · pooled` into `acc`.
    pub fn backward(&self, tokens: &[u32], enc: &EncodedText, g: ArrayView1<f64>, acc: &mut ProjectedGrads) {
        let idx: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let inv_t = 1.0 / idx.len() as f64;
        let gw = self.v.select(Axis(0), &idx).dot(&g);
        for (j, &tj) in idx.iter().enumerate() {
            acc.v.row_mut(tj).scaled_add(enc.weights[j], &g);
        }
        // d(score_ij) = a_ij (gw_j − Σ_k a_ik gw_k) / t, times the 1/√d scale
        let mean = enc.attn.dot(&gw);
        let mut gs = enc.attn.clone();
        for (i, mut row) in gs.rows_mut().into_iter().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                *x *= (gw[j] - mean[i]) * inv_t * self.scale;
            }
        }
        let gq = gs.dot(&self.k.select(Axis(0), &idx));
        let gk = gs.t().dot(&self.q.select(Axis(0), &idx));
        for (r, &t) in idx.iter().enumerate() {
            acc.q.row_mut(t).scaled_add(1.0, &gq.row(r));
            acc.k.row_mut(t).scaled_add(1.0, &gk.row(r));
        }
    }
}

#[derive(Debug, Clone)]
pub struct EncodedText {
    pub pooled: Array1<f64>,
    pub attn: Array2<f64>,
    /// Column means of `attn`: the pooling weight of each value row.
    pub weights: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct ProjectedGrads {
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub token_table: Array2<f64>,
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
}

impl ProjectedGrads {
    pub fn zeros(params: &EncoderParams) -> Self {
        let shape = params.token_table.raw_dim();
        ProjectedGrads {
            q: Array2::zeros(shape),
            k: Array2::zeros(shape),
            v: Array2::zeros(shape),
        }
    }

    /// Chain rule through `table · W` for each projection.
    pub fn fold(&self, params: &EncoderParams) -> EncoderGrads {
        let table_t = params.token_table.t();
        let mut token_table = self.q.dot(&params.w_q.t());
        token_table += &self.k.dot(&params.w_k.t());
        token_table += &self.v.dot(&params.w_v.t());
        EncoderGrads {
            token_table,
            w_q: table_t.dot(&self.q),
            w_k: table_t.dot(&self.k),
            w_v: table_t.dot(&self.v),
        }
    }
}

//! The full parameter set and its joint objective.
//!
//! Forward: every entity's text is encoded, fused with its KG row, and the
//! fused states are propagated through the GAT stack over the whole graph.
//! The objective is
//!
//! ```text
//! L = λ_rec · BCE(σ(h_uᵀ W_r h_a), y)
//!   + λ_kg  · mean hinge(γ + ‖h+r−t‖ − ‖h'+r−t'‖)
//!   + λ_align · mean ‖h_kg − P e_sem‖²
//! ```
//!
//! [`Model::loss_and_grad`] is a hand-written reverse pass through all of
//! it; `gradcheck` verifies it against central differences.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;

use crate::embed::{self, KgEmbeddings};
use crate::encoder::{self, EncodedText, EncoderParams, Projected, ProjectedGrads};
use crate::error::{Error, Result};
use crate::gnn::{
    self, BilinearParams, FusionParams, GatLayerParams, GatStack, LayerGrads, LayerTape, Neighborhoods,
};
use crate::kg::io::{AdText, UserTags};
use crate::kg::{EntityId, EntityKind, KnowledgeGraph, RelationKind, Triple};
use crate::snapshot::{self, Section};

pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub kg_dim: usize,
    pub sem_dim: usize,
    pub hidden_dim: usize,
    pub vocab_size: usize,
    pub gat_layers: usize,
    pub leaky_slope: f64,
    pub gamma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kg_dim: embed::DEFAULT_DIM,
            sem_dim: encoder::DEFAULT_DIM,
            hidden_dim: gnn::DEFAULT_HIDDEN,
            vocab_size: encoder::DEFAULT_VOCAB,
            gat_layers: gnn::DEFAULT_LAYERS,
            leaky_slope: gnn::DEFAULT_LEAKY_SLOPE,
            gamma: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub rec: f64,
    pub kg: f64,
    pub align: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            rec: 1.0,
            kg: 0.5,
            align: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.rec, self.kg, self.align];
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidConfig("loss weights must be finite and non-negative".into()));
        }
        if w.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidConfig("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

/// `λ₁L_rec + λ₂L_KG + λ₃L_align`.
pub fn total_loss(rec: f64, kg: f64, align: f64, w: &LossWeights) -> f64 {
    w.rec * rec + w.kg * kg + w.align * align
}

/// Mean binary cross-entropy with predictions clamped to `[1e-7, 1 − 1e-7]`.
pub fn bce_loss(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch(predictions.len(), labels.len()));
    }
    if predictions.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let sum: f64 = predictions.iter().zip(labels).map(|(&p, &y)| bce_term(p, y)).sum();
    Ok(sum / predictions.len() as f64)
}

fn bce_term(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Mean of `‖h − P e‖²` over aligned pairs.
pub fn align_loss(kg_rows: &[ArrayView1<f64>], sem_rows: &[ArrayView1<f64>], projector: &Array2<f64>) -> Result<f64> {
    if kg_rows.len() != sem_rows.len() {
        return Err(Error::LengthMismatch(kg_rows.len(), sem_rows.len()));
    }
    if kg_rows.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let sum: f64 = kg_rows
        .iter()
        .zip(sem_rows)
        .map(|(h, e)| {
            let r = h - &projector.dot(e);
            r.dot(&r)
        })
        .sum();
    Ok(sum / kg_rows.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClickExample {
    pub user: EntityId,
    pub ad: EntityId,
    pub label: f64,
}

/// One optimization batch. Empty parts contribute nothing to the objective.
#[derive(Debug, Clone, Copy, Default)]
pub struct Batch<'a> {
    pub clicks: &'a [ClickExample],
    pub kg_pairs: &'a [(Triple, Triple)],
    pub align: &'a [EntityId],
}

impl Batch<'_> {
    pub fn is_empty(&self) -> bool {
        self.clicks.is_empty() && self.kg_pairs.is_empty() && self.align.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub rec: f64,
    pub kg: f64,
    pub align: f64,
    pub total: f64,
}

/// Per-entity token sequences and message-passing neighborhoods for one
/// graph. Built once and shared by every forward pass.
///
/// Click edges carry the training labels themselves, so they are left out
/// of message passing; they still enter the KG margin term.
#[derive(Debug, Clone)]
pub struct GraphContext {
    pub neighborhoods: Neighborhoods,
    pub tokens: Vec<Vec<u32>>,
    pub kinds: Vec<EntityKind>,
}

impl GraphContext {
    pub fn new(graph: &KnowledgeGraph, texts: &[String], vocab_size: usize) -> Result<Self> {
        if texts.len() != graph.entity_count() {
            return Err(Error::LengthMismatch(texts.len(), graph.entity_count()));
        }
        let tokens = texts
            .iter()
            .zip(graph.entities())
            .map(|(t, e)| {
                encoder::tokenize(t, vocab_size)
                    .or_else(|_| encoder::tokenize(&e.id, vocab_size))
                    .map(|seq| seq.ids().to_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GraphContext {
            neighborhoods: Neighborhoods::excluding(graph, &[RelationKind::Clicks]),
            tokens,
            kinds: graph.entities().iter().map(|e| e.kind).collect(),
        })
    }

    pub fn node_count(&self) -> usize {
        self.tokens.len()
    }
}

/// Text fed to the encoder for each entity: ad copy for ads, sorted interest
/// tags for users, and the entity label otherwise.
pub fn entity_texts(graph: &KnowledgeGraph, ad_texts: &[AdText], user_tags: &[UserTags]) -> Result<Vec<String>> {
    let mut texts: Vec<String> = graph.entities().iter().map(|e| e.label.clone()).collect();
    for a in ad_texts {
        texts[graph.lookup(&a.ad_id)?.index()] = a.text.clone();
    }
    for u in user_tags {
        if !u.tags.is_empty() {
            texts[graph.lookup(&u.user_id)?.index()] = encoder::user_text(&u.tags)?;
        }
    }
    Ok(texts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub kg: KgEmbeddings,
    pub encoder: EncoderParams,
    pub fusion: FusionParams,
    pub gat: GatStack,
    pub bilinear: BilinearParams,
    /// Alignment projector `P`, `d_k × d_s`.
    pub projector: Array2<f64>,
}

/// Everything a reverse pass needs from the forward pass.
pub struct ForwardTape {
    projected: Projected,
    encoded: Vec<EncodedText>,
    /// `[h_kg | e_sem]` per entity.
    fusion_input: Array2<f64>,
    fused: Array2<f64>,
    layers: Vec<LayerTape>,
}

impl ForwardTape {
    pub fn semantic(&self) -> Array2<f64> {
        let d_s = self.encoded.first().map_or(0, |e| e.pooled.len());
        let k = self.fusion_input.ncols() - d_s;
        self.fusion_input.slice(s![.., k..]).to_owned()
    }

    pub fn fused(&self) -> &Array2<f64> {
        &self.fused
    }

    pub fn states(&self) -> &Array2<f64> {
        self.layers.last().map_or(&self.fused, |l| &l.output)
    }
}

/// Fused vectors and final GAT states for every entity.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEmbeddings {
    pub fused: Array2<f64>,
    pub states: Array2<f64>,
}

impl Model {
    pub fn random<R: Rng + ?Sized>(config: ModelConfig, n_entities: usize, rng: &mut R) -> Self {
        let kg = KgEmbeddings::random(n_entities, config.kg_dim, rng);
        let encoder = EncoderParams::random(config.vocab_size, config.sem_dim, rng);
        let fusion = FusionParams::random(config.hidden_dim, config.kg_dim, config.sem_dim, rng);
        let mut gat = GatStack::random(config.hidden_dim, config.gat_layers, rng);
        for l in &mut gat.layers {
            l.leaky_slope = config.leaky_slope;
        }
        let bilinear = BilinearParams::random(config.hidden_dim, rng);
        let projector = gnn::glorot(config.kg_dim, config.sem_dim, rng);
        Model {
            config,
            kg,
            encoder,
            fusion,
            gat,
            bilinear,
            projector,
        }
    }

    /// Same shapes, every parameter zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for b in z.blocks_mut() {
            b.data.fill(0.0);
        }
        z
    }

    pub fn entity_count(&self) -> usize {
        self.kg.entities.nrows()
    }

    /// Named parameter blocks in a fixed order.
    pub fn blocks(&self) -> Vec<Block<'_>> {
        let mut out = vec![
            Block::new("kg.entity", &self.kg.entities),
            Block::new("kg.relation", &self.kg.relations),
            Block::new("encoder.token_table", &self.encoder.token_table),
            Block::new("encoder.W_Q", &self.encoder.w_q),
            Block::new("encoder.W_K", &self.encoder.w_k),
            Block::new("encoder.W_V", &self.encoder.w_v),
            Block::new("fusion.W_f", &self.fusion.w_f),
            Block::vector("fusion.b_f", &self.fusion.b_f),
        ];
        for (i, l) in self.gat.layers.iter().enumerate() {
            out.push(Block::new(format!("gat.{i}.W_g"), &l.w_g));
            out.push(Block::vector(format!("gat.{i}.a"), &l.a));
        }
        out.push(Block::new("bilinear.W_r", &self.bilinear.w_r));
        out.push(Block::new("align.P", &self.projector));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<BlockMut<'_>> {
        let mut out = vec![
            BlockMut::new("kg.entity", &mut self.kg.entities),
            BlockMut::new("kg.relation", &mut self.kg.relations),
            BlockMut::new("encoder.token_table", &mut self.encoder.token_table),
            BlockMut::new("encoder.W_Q", &mut self.encoder.w_q),
            BlockMut::new("encoder.W_K", &mut self.encoder.w_k),
            BlockMut::new("encoder.W_V", &mut self.encoder.w_v),
            BlockMut::new("fusion.W_f", &mut self.fusion.w_f),
            BlockMut::vector("fusion.b_f", &mut self.fusion.b_f),
        ];
        for (i, l) in self.gat.layers.iter_mut().enumerate() {
            out.push(BlockMut::new(format!("gat.{i}.W_g"), &mut l.w_g));
            out.push(BlockMut::vector(format!("gat.{i}.a"), &mut l.a));
        }
        out.push(BlockMut::new("bilinear.W_r", &mut self.bilinear.w_r));
        out.push(BlockMut::new("align.P", &mut self.projector));
        out
    }

    pub fn forward(&self, ctx: &GraphContext) -> Result<ForwardTape> {
        let n = ctx.node_count();
        if n != self.entity_count() {
            return Err(Error::MissingState {
                states: self.entity_count(),
                nodes: n,
            });
        }
        let projected = Projected::new(&self.encoder);
        let encoded: Vec<EncodedText> = ctx.tokens.iter().map(|t| projected.encode(t)).collect();
        let (k, d_s) = (self.config.kg_dim, self.config.sem_dim);
        let mut fusion_input = Array2::zeros((n, k + d_s));
        fusion_input.slice_mut(s![.., ..k]).assign(&self.kg.entities);
        for (i, e) in encoded.iter().enumerate() {
            fusion_input.slice_mut(s![i, k..]).assign(&e.pooled);
        }
        let mut fused = fusion_input.dot(&self.fusion.w_f.t());
        fused += &self.fusion.b_f.view().insert_axis(Axis(0));
        fused.mapv_inplace(f64::tanh);

        let mut layers: Vec<LayerTape> = Vec::with_capacity(self.gat.layers.len());
        for params in &self.gat.layers {
            let input = layers.last().map_or(&fused, |l| &l.output);
            let tape = gnn::layer_forward(input.view(), params, &ctx.neighborhoods);
            layers.push(tape);
        }
        Ok(ForwardTape {
            projected,
            encoded,
            fusion_input,
            fused,
            layers,
        })
    }

    pub fn embed(&self, ctx: &GraphContext) -> Result<NodeEmbeddings> {
        let tape = self.forward(ctx)?;
        Ok(NodeEmbeddings {
            states: tape.states().clone(),
            fused: tape.fused,
        })
    }

    /// Click logit `h_uᵀ W_r h_a` from final states.
    pub fn logit(&self, states: &Array2<f64>, user: EntityId, ad: EntityId) -> f64 {
        states.row(user.index()).dot(&self.bilinear.w_r.dot(&states.row(ad.index())))
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let n = self.entity_count();
        let ids = batch
            .clicks
            .iter()
            .flat_map(|c| [c.user, c.ad])
            .chain(batch.kg_pairs.iter().flat_map(|(p, q)| [p.head, p.tail, q.head, q.tail]))
            .chain(batch.align.iter().copied());
        for id in ids {
            if id.index() >= n {
                return Err(Error::UnknownEntity(format!("#{}", id.0)));
            }
        }
        Ok(())
    }

    fn losses(&self, tape: &ForwardTape, batch: &Batch, w: &LossWeights) -> LossBreakdown {
        let states = tape.states();
        let rec = if batch.clicks.is_empty() {
            0.0
        } else {
            let sum: f64 = batch
                .clicks
                .iter()
                .map(|c| bce_term(gnn::logistic(self.logit(states, c.user, c.ad)), c.label))
                .sum();
            sum / batch.clicks.len() as f64
        };
        let kg = if batch.kg_pairs.is_empty() {
            0.0
        } else {
            embed::hinge_sum(&self.kg, batch.kg_pairs, self.config.gamma, 0.0, None) / batch.kg_pairs.len() as f64
        };
        let align = if batch.align.is_empty() {
            0.0
        } else {
            let sum: f64 = batch
                .align
                .iter()
                .map(|&v| {
                    let r = self.align_residual(tape, v);
                    r.dot(&r)
                })
                .sum();
            sum / batch.align.len() as f64
        };
        LossBreakdown {
            rec,
            kg,
            align,
            total: total_loss(rec, kg, align, w),
        }
    }

    fn align_residual(&self, tape: &ForwardTape, v: EntityId) -> Array1<f64> {
        &self.kg.entities.row(v.index()) - &self.projector.dot(&tape.encoded[v.index()].pooled)
    }

    pub fn loss(&self, ctx: &GraphContext, batch: &Batch, w: &LossWeights) -> Result<LossBreakdown> {
        self.check_batch(batch)?;
        let tape = self.forward(ctx)?;
        Ok(self.losses(&tape, batch, w))
    }

    /// Loss and exact gradient of the weighted objective. Non-differentiable
    /// points use zero subgradients (hinge kink, zero residual, clamped BCE).
    pub fn loss_and_grad(&self, ctx: &GraphContext, batch: &Batch, w: &LossWeights) -> Result<(LossBreakdown, Model)> {
        self.check_batch(batch)?;
        let tape = self.forward(ctx)?;
        let loss = self.losses(&tape, batch, w);
        let mut grads = self.zeros_like();
        let n = self.entity_count();
        let (k, d_s, d_h) = (self.config.kg_dim, self.config.sem_dim, self.config.hidden_dim);

        // click term -> final states, W_r
        let states = tape.states();
        let mut g_states = Array2::<f64>::zeros((n, d_h));
        if w.rec != 0.0 && !batch.clicks.is_empty() {
            let scale = w.rec / batch.clicks.len() as f64;
            for c in batch.clicks {
                let p = gnn::logistic(self.logit(states, c.user, c.ad));
                if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p) {
                    continue;
                }
                let coef = scale * (p - c.label);
                let (hu, ha) = (states.row(c.user.index()), states.row(c.ad.index()));
                g_states
                    .row_mut(c.user.index())
                    .scaled_add(coef, &self.bilinear.w_r.dot(&ha));
                g_states
                    .row_mut(c.ad.index())
                    .scaled_add(coef, &self.bilinear.w_r.t().dot(&hu));
                let outer = hu.insert_axis(Axis(1)).dot(&ha.insert_axis(Axis(0)));
                grads.bilinear.w_r.scaled_add(coef, &outer);
            }
        }

        // GAT stack, last layer first
        let mut g = g_states;
        for (l, params) in self.gat.layers.iter().enumerate().rev() {
            let input = if l == 0 { &tape.fused } else { &tape.layers[l - 1].output };
            let mut lg = LayerGrads {
                w_g: Array2::zeros(params.w_g.raw_dim()),
                a: Array1::zeros(params.a.len()),
            };
            g = gnn::layer_backward(input.view(), params, &ctx.neighborhoods, &tape.layers[l], g.view(), &mut lg);
            grads.gat.layers[l].w_g = lg.w_g;
            grads.gat.layers[l].a = lg.a;
        }

        // fusion
        let g_pre = &g * &tape.fused.mapv(|z| 1.0 - z * z);
        grads.fusion.w_f = g_pre.t().dot(&tape.fusion_input);
        grads.fusion.b_f = g_pre.sum_axis(Axis(0));
        let g_input = g_pre.dot(&self.fusion.w_f);
        grads.kg.entities.assign(&g_input.slice(s![.., ..k]));
        let mut g_sem = g_input.slice(s![.., k..]).to_owned();

        // KG margin term
        if w.kg != 0.0 && !batch.kg_pairs.is_empty() {
            let scale = w.kg / batch.kg_pairs.len() as f64;
            embed::hinge_sum(
                &self.kg,
                batch.kg_pairs,
                self.config.gamma,
                scale,
                Some((grads.kg.entities.view_mut(), grads.kg.relations.view_mut())),
            );
        }

        // alignment term
        if w.align != 0.0 && !batch.align.is_empty() {
            let scale = 2.0 * w.align / batch.align.len() as f64;
            for &v in batch.align {
                let r = self.align_residual(&tape, v);
                let e = &tape.encoded[v.index()].pooled;
                grads.kg.entities.row_mut(v.index()).scaled_add(scale, &r);
                let outer = r.view().insert_axis(Axis(1)).dot(&e.view().insert_axis(Axis(0)));
                grads.projector.scaled_add(-scale, &outer);
                g_sem.row_mut(v.index()).scaled_add(-scale, &self.projector.t().dot(&r));
            }
        }

        // encoder
        let mut acc = ProjectedGrads::zeros(&self.encoder);
        for (i, tokens) in ctx.tokens.iter().enumerate() {
            let gi = g_sem.row(i);
            if gi.iter().all(|&v| v == 0.0) {
                continue;
            }
            tape.projected.backward(tokens, &tape.encoded[i], gi, &mut acc);
        }
        debug_assert_eq!(g_sem.ncols(), d_s);
        let eg = acc.fold(&self.encoder);
        grads.encoder.token_table = eg.token_table;
        grads.encoder.w_q = eg.w_q;
        grads.encoder.w_k = eg.w_k;
        grads.encoder.w_v = eg.w_v;

        for b in grads.blocks() {
            if b.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(b.name));
            }
        }
        Ok((loss, grads))
    }

    pub fn to_sections(&self) -> Vec<Section> {
        let mut sections: Vec<Section> = self
            .blocks()
            .into_iter()
            .map(|b| Section::from_f64(b.name, b.rows, b.cols, b.data.iter().copied()))
            .collect();
        sections.push(Section::from_f64(
            "meta.hyper",
            1,
            2,
            [self.config.leaky_slope, self.config.gamma],
        ));
        sections
    }

    pub fn from_sections(sections: Vec<Section>) -> Result<Self> {
        let mut by_name: HashMap<String, Section> = sections.into_iter().map(|s| (s.name.clone(), s)).collect();
        let mut take = |name: &str| {
            by_name
                .remove(name)
                .ok_or_else(|| Error::CorruptSnapshot(format!("missing section `{name}`")))
        };
        let matrix = |s: Section| -> Result<Array2<f64>> {
            Array2::from_shape_vec((s.rows, s.cols), s.data.into_iter().map(f64::from).collect())
                .map_err(|e| Error::CorruptSnapshot(e.to_string()))
        };
        let vector = |s: Section| Array1::from_iter(s.data.into_iter().map(f64::from));

        let entities = matrix(take("kg.entity")?)?;
        let relations = matrix(take("kg.relation")?)?;
        let token_table = matrix(take("encoder.token_table")?)?;
        let w_q = matrix(take("encoder.W_Q")?)?;
        let w_k = matrix(take("encoder.W_K")?)?;
        let w_v = matrix(take("encoder.W_V")?)?;
        let w_f = matrix(take("fusion.W_f")?)?;
        let b_f = vector(take("fusion.b_f")?);
        let hyper = take("meta.hyper")?;
        if hyper.data.len() != 2 {
            return Err(Error::CorruptSnapshot("meta.hyper must hold 2 values".into()));
        }
        let (leaky_slope, gamma) = (f64::from(hyper.data[0]), f64::from(hyper.data[1]));
        let mut layers = Vec::new();
        while let Ok(w) = take(&format!("gat.{}.W_g", layers.len())) {
            let a = vector(take(&format!("gat.{}.a", layers.len()))?);
            layers.push(GatLayerParams {
                w_g: matrix(w)?,
                a,
                leaky_slope,
            });
        }
        let w_r = matrix(take("bilinear.W_r")?)?;
        let projector = matrix(take("align.P")?)?;
        let config = ModelConfig {
            kg_dim: entities.ncols(),
            sem_dim: token_table.ncols(),
            hidden_dim: w_r.nrows(),
            vocab_size: token_table.nrows(),
            gat_layers: layers.len(),
            leaky_slope,
            gamma,
        };
        let model = Model {
            config,
            kg: KgEmbeddings { entities, relations },
            encoder: EncoderParams {
                token_table,
                w_q,
                w_k,
                w_v,
            },
            fusion: FusionParams { w_f, b_f },
            gat: GatStack { layers },
            bilinear: BilinearParams { w_r },
            projector,
        };
        model.validate().map_err(|e| Error::CorruptSnapshot(e.to_string()))?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        let expect = |name: &str, got: (usize, usize), want: (usize, usize)| {
            if got == want {
                Ok(())
            } else {
                Err(Error::ShapeMismatch(format!("{name} is {got:?}, expected {want:?}")))
            }
        };
        expect("kg.relation", self.kg.relations.dim(), (crate::kg::RelationKind::COUNT, c.kg_dim))?;
        self.encoder.validate()?;
        expect("fusion.W_f", self.fusion.w_f.dim(), (c.hidden_dim, c.kg_dim + c.sem_dim))?;
        expect("fusion.b_f", (self.fusion.b_f.len(), 1), (c.hidden_dim, 1))?;
        for l in &self.gat.layers {
            l.validate()?;
            expect("gat.W_g", l.w_g.dim(), (c.hidden_dim, c.hidden_dim))?;
        }
        expect("bilinear.W_r", self.bilinear.w_r.dim(), (c.hidden_dim, c.hidden_dim))?;
        expect("align.P", self.projector.dim(), (c.kg_dim, c.sem_dim))?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        snapshot::encode_sections(&self.to_sections())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Model::from_sections(snapshot::decode_sections(bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        snapshot::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Model::from_bytes(&snapshot::read_file(path)?)
    }
}

pub struct Block<'a> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f64],
}

impl<'a> Block<'a> {
    fn new(name: impl Into<String>, m: &'a Array2<f64>) -> Self {
        Block {
            name: name.into(),
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.as_slice().expect("parameters are contiguous"),
        }
    }

    fn vector(name: impl Into<String>, v: &'a Array1<f64>) -> Self {
        Block {
            name: name.into(),
            rows: 1,
            cols: v.len(),
            data: v.as_slice().expect("parameters are contiguous"),
        }
    }
}

pub struct BlockMut<'a> {
    pub name: String,
    pub data: &'a mut [f64],
}

impl<'a> BlockMut<'a> {
    fn new(name: impl Into<String>, m: &'a mut Array2<f64>) -> Self {
        BlockMut {
            name: name.into(),
            data: m.as_slice_mut().expect("parameters are contiguous"),
        }
    }

    fn vector(name: impl Into<String>, v: &'a mut Array1<f64>) -> Self {
        BlockMut {
            name: name.into(),
            data: v.as_slice_mut().expect("parameters are contiguous"),
        }
    }
}

//! Central finite-difference verification of [`Model::loss_and_grad`].

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::embed;
use crate::error::Result;
use crate::kg::{Entity, EntityKind, KnowledgeGraph, NamedTriple, RelationKind, Triple};
use crate::model::{Batch, ClickExample, GraphContext, LossWeights, Model, ModelConfig};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Coordinates whose analytic and numeric gradients are both below this
/// magnitude are not compared.
pub const SKIP_BELOW: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub dim: usize,
    pub vocab_size: usize,
    pub gat_layers: usize,
    /// At most 10.
    pub nodes: usize,
    /// At most 16.
    pub interactions: usize,
    pub epsilon: f64,
    pub tolerance: f64,
    pub weights: LossWeights,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            dim: 4,
            vocab_size: 64,
            gat_layers: 3,
            nodes: 10,
            interactions: 16,
            epsilon: DEFAULT_EPSILON,
            tolerance: DEFAULT_TOLERANCE,
            weights: LossWeights {
                rec: 1.0,
                kg: 0.5,
                align: 0.5,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockReport {
    pub name: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub loss: f64,
    pub blocks: Vec<BlockReport>,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// A randomly generated instance small enough to difference every
/// coordinate.
pub struct TinyInstance {
    pub graph: KnowledgeGraph,
    pub context: GraphContext,
    pub model: Model,
    pub clicks: Vec<ClickExample>,
    pub kg_pairs: Vec<(Triple, Triple)>,
    pub align: Vec<crate::kg::EntityId>,
}

impl TinyInstance {
    pub fn batch(&self) -> Batch<'_> {
        Batch {
            clicks: &self.clicks,
            kg_pairs: &self.kg_pairs,
            align: &self.align,
        }
    }
}

const WORDS: [&str; 12] = [
    "shoe", "run", "sale", "phone", "fast", "cheap", "game", "travel", "book", "garden", "camera", "music",
];

pub fn tiny_instance(cfg: &GradcheckConfig, seed: u64) -> Result<TinyInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = cfg.nodes.clamp(5, 10);
    let layout = [
        EntityKind::User,
        EntityKind::Ad,
        EntityKind::Category,
        EntityKind::User,
        EntityKind::Ad,
        EntityKind::InterestTag,
        EntityKind::Product,
        EntityKind::User,
        EntityKind::Ad,
        EntityKind::Category,
    ];
    let entities: Vec<Entity> = layout[..nodes]
        .iter()
        .enumerate()
        .map(|(i, k)| Entity::new(format!("{}{i}", k.as_str().to_lowercase()), *k, random_text(&mut rng, 3)))
        .collect();
    let of = |kind: EntityKind| -> Vec<String> {
        entities.iter().filter(|e| e.kind == kind).map(|e| e.id.clone()).collect()
    };
    let (users, ads, cats, tags, prods) = (
        of(EntityKind::User),
        of(EntityKind::Ad),
        of(EntityKind::Category),
        of(EntityKind::InterestTag),
        of(EntityKind::Product),
    );
    let mut triples = Vec::new();
    for a in &ads {
        triples.push(NamedTriple::new(a.clone(), RelationKind::BelongsTo, cats.choose(&mut rng).unwrap().clone()));
        if let Some(p) = prods.first() {
            if rng.random_bool(0.5) {
                triples.push(NamedTriple::new(a.clone(), RelationKind::Promotes, p.clone()));
            }
        }
    }
    for u in &users {
        let a = ads.choose(&mut rng).unwrap();
        triples.push(NamedTriple::new(u.clone(), RelationKind::Clicks, a.clone()));
        if let Some(t) = tags.first() {
            if rng.random_bool(0.6) {
                triples.push(NamedTriple::new(u.clone(), RelationKind::InterestedIn, t.clone()));
            }
        }
        for c in &cats {
            if rng.random_bool(0.5) {
                triples.push(NamedTriple::new(u.clone(), RelationKind::LikesCategory, c.clone()));
            }
        }
    }
    let graph = KnowledgeGraph::build(entities, &triples)?;

    let config = ModelConfig {
        kg_dim: cfg.dim,
        sem_dim: cfg.dim,
        hidden_dim: cfg.dim,
        vocab_size: cfg.vocab_size,
        gat_layers: cfg.gat_layers,
        ..ModelConfig::default()
    };
    let mut model = Model::random(config, graph.entity_count(), &mut rng);
    for b in model.blocks_mut() {
        for v in b.data.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    let texts: Vec<String> = graph.entities().iter().map(|e| e.label.clone()).collect();
    let context = GraphContext::new(&graph, &texts, cfg.vocab_size)?;

    let user_ids = graph.entities_of_kind(EntityKind::User).to_vec();
    let ad_ids = graph.entities_of_kind(EntityKind::Ad).to_vec();
    let clicks = (0..cfg.interactions.min(16))
        .map(|_| ClickExample {
            user: *user_ids.choose(&mut rng).unwrap(),
            ad: *ad_ids.choose(&mut rng).unwrap(),
            label: f64::from(rng.random_bool(0.4) as u8),
        })
        .collect();
    let kg_pairs = graph
        .triples()
        .iter()
        .filter_map(|t| graph.sample_negative(t, &mut rng).ok().map(|n| (*t, n)))
        .collect();
    let mut align: Vec<_> = user_ids.iter().chain(&ad_ids).copied().collect();
    align.shuffle(&mut rng);
    Ok(TinyInstance {
        graph,
        context,
        model,
        clicks,
        kg_pairs,
        align,
    })
}

fn random_text<R: Rng + ?Sized>(rng: &mut R, words: usize) -> String {
    (0..words).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

/// `|a − n| / max(|a|, |n|)`, or `None` when both are negligible.
pub fn relative_error(analytic: f64, numeric: f64) -> Option<f64> {
    let scale = analytic.abs().max(numeric.abs());
    (scale >= SKIP_BELOW).then(|| (analytic - numeric).abs() / scale)
}

/// Compares every coordinate of every block against central differences.
pub fn check_model(
    model: &Model,
    ctx: &GraphContext,
    batch: &Batch,
    weights: &LossWeights,
    epsilon: f64,
) -> Result<(f64, Vec<BlockReport>)> {
    let (loss, grads) = model.loss_and_grad(ctx, batch, weights)?;
    let analytic: Vec<(String, Vec<f64>)> = grads.blocks().into_iter().map(|b| (b.name, b.data.to_vec())).collect();
    let mut probe = model.clone();
    let mut reports = Vec::with_capacity(analytic.len());
    for (block, (name, g)) in analytic.iter().enumerate() {
        let mut report = BlockReport {
            name: name.clone(),
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
        };
        for (i, &a) in g.iter().enumerate() {
            let orig = probe.blocks()[block].data[i];
            probe.blocks_mut()[block].data[i] = orig + epsilon;
            let up = probe.loss(ctx, batch, weights)?;
            probe.blocks_mut()[block].data[i] = orig - epsilon;
            let down = probe.loss(ctx, batch, weights)?;
            probe.blocks_mut()[block].data[i] = orig;
            // per-term differences, then weighted
            let numeric = (weights.rec * (up.rec - down.rec)
                + weights.kg * (up.kg - down.kg)
                + weights.align * (up.align - down.align))
                / (2.0 * epsilon);
            match relative_error(a, numeric) {
                Some(e) => {
                    report.checked += 1;
                    report.max_rel_error = report.max_rel_error.max(e);
                }
                None => report.skipped += 1,
            }
        }
        reports.push(report);
    }
    Ok((loss.total, reports))
}

pub fn run(cfg: &GradcheckConfig, seed: u64) -> Result<GradcheckReport> {
    cfg.weights.validate()?;
    let inst = tiny_instance(cfg, seed)?;
    let (loss, blocks) = check_model(&inst.model, &inst.context, &inst.batch(), &cfg.weights, cfg.epsilon)?;
    let max_rel_error = blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport {
        seed,
        loss,
        blocks,
        max_rel_error,
        passed: max_rel_error < cfg.tolerance,
    })
}

/// Single-triple and random-graph checks of the standalone margin loss.
pub fn check_margin(seed: u64, entities: usize, dim: usize, epsilon: f64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds = [EntityKind::User, EntityKind::Ad, EntityKind::Category, EntityKind::InterestTag];
    let ents: Vec<Entity> = (0..entities)
        .map(|i| {
            let k = kinds[i % kinds.len()];
            Entity::new(format!("e{i}"), k, format!("e{i}"))
        })
        .collect();
    let mut triples = Vec::new();
    for i in 0..entities {
        let j = (i + 1 + rng.random_range(0..entities - 1)) % entities;
        let rel = RelationKind::ALL[rng.random_range(0..RelationKind::COUNT)];
        triples.push(NamedTriple::new(format!("e{i}"), rel, format!("e{j}")));
    }
    let graph = KnowledgeGraph::build(ents, &triples)?;
    let emb = embed::KgEmbeddings::random(entities, dim, &mut rng);
    let pairs = embed::sample_pairs(&graph, 1, &mut rng)?;
    let gamma = 1.0;
    let mut ge = ndarray::Array2::zeros(emb.entities.raw_dim());
    let mut gr = ndarray::Array2::zeros(emb.relations.raw_dim());
    embed::hinge_sum(&emb, &pairs, gamma, 1.0, Some((ge.view_mut(), gr.view_mut())));
    let mut worst: f64 = 0.0;
    let mut probe = emb.clone();
    for (which, g) in [(0, &ge), (1, &gr)] {
        for ((r, c), &a) in g.indexed_iter() {
            let cell = |p: &mut embed::KgEmbeddings, v: Option<f64>| -> f64 {
                let slot = if which == 0 {
                    &mut p.entities[[r, c]]
                } else {
                    &mut p.relations[[r, c]]
                };
                if let Some(v) = v {
                    *slot = v;
                }
                *slot
            };
            let orig = cell(&mut probe, None);
            cell(&mut probe, Some(orig + epsilon));
            let up = embed::hinge_sum(&probe, &pairs, gamma, 0.0, None);
            cell(&mut probe, Some(orig - epsilon));
            let down = embed::hinge_sum(&probe, &pairs, gamma, 0.0, None);
            cell(&mut probe, Some(orig));
            if let Some(e) = relative_error(a, (up - down) / (2.0 * epsilon)) {
                worst = worst.max(e);
            }
        }
    }
    Ok(worst)
}

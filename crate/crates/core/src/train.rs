//! Minibatch training of the joint objective with Adam.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, EntityKind, InteractionRecord, KnowledgeGraph, Triple};
use crate::model::{Batch, ClickExample, GraphContext, LossBreakdown, LossWeights, Model, ModelConfig};

/// Flat `key = value` training configuration. Every key is optional and
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub lambda_rec: f64,
    pub lambda_kg: f64,
    pub lambda_align: f64,
    /// Global L2 norm cap on the gradient; absent means no clipping.
    pub grad_clip: Option<f64>,
    /// Decoupled weight decay; 0 makes the optimizer plain Adam.
    pub weight_decay: f64,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub kg_dim: usize,
    pub sem_dim: usize,
    pub hidden_dim: usize,
    pub vocab_size: usize,
    pub gat_layers: usize,
    pub gamma: f64,
    pub leaky_slope: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let w = LossWeights::default();
        TrainConfig {
            learning_rate: 2e-2,
            batch_size: 2048,
            epochs: 30,
            seed: 42,
            lambda_rec: w.rec,
            lambda_kg: w.kg,
            lambda_align: w.align,
            grad_clip: Some(5.0),
            weight_decay: 0.0,
            lr_decay_every: 10,
            lr_decay_factor: 0.5,
            kg_dim: m.kg_dim,
            sem_dim: m.sem_dim,
            hidden_dim: m.hidden_dim,
            vocab_size: m.vocab_size,
            gat_layers: m.gat_layers,
            gamma: m.gamma,
            leaky_slope: m.leaky_slope,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            rec: self.lambda_rec,
            kg: self.lambda_kg,
            align: self.lambda_align,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            kg_dim: self.kg_dim,
            sem_dim: self.sem_dim,
            hidden_dim: self.hidden_dim,
            vocab_size: self.vocab_size,
            gat_layers: self.gat_layers,
            leaky_slope: self.leaky_slope,
            gamma: self.gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be finite and >= 0");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return bad("grad_clip must be > 0");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0");
        }
        if self.lr_decay_every == 0 || !(self.lr_decay_factor > 0.0) {
            return bad("lr_decay_every must be >= 1 and lr_decay_factor > 0");
        }
        if [self.kg_dim, self.sem_dim, self.hidden_dim, self.vocab_size].contains(&0) {
            return bad("dimensions must be >= 1");
        }
        if !(self.gamma > 0.0) {
            return bad("gamma must be > 0");
        }
        self.weights().validate()
    }

    /// Step decay: the rate is multiplied by `lr_decay_factor` every
    /// `lr_decay_every` epochs (1-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let steps = (epoch.saturating_sub(1) / self.lr_decay_every) as i32;
        self.learning_rate * self.lr_decay_factor.powi(steps)
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Bias-corrected Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Model,
    v: Model,
    t: i32,
}

impl Adam {
    pub fn new(model: &Model) -> Self {
        Adam {
            m: model.zeros_like(),
            v: model.zeros_like(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut Model, grads: &Model, lr: f64, weight_decay: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        let blocks = params
            .blocks_mut()
            .into_iter()
            .zip(grads.blocks())
            .zip(self.m.blocks_mut())
            .zip(self.v.blocks_mut());
        for (((p, g), m), v) in blocks {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = ADAM_BETA1 * m.data[i] + (1.0 - ADAM_BETA1) * gi;
                v.data[i] = ADAM_BETA2 * v.data[i] + (1.0 - ADAM_BETA2) * gi * gi;
                let update = (m.data[i] / c1) / ((v.data[i] / c2).sqrt() + ADAM_EPS);
                p.data[i] -= lr * (update + weight_decay * p.data[i]);
            }
        }
    }
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Model, max_norm: f64) -> f64 {
    let norm = grads
        .blocks()
        .iter()
        .flat_map(|b| b.data.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for b in grads.blocks_mut() {
            b.data.iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct LossCurve {
    pub points: Vec<EpochLoss>,
}

impl LossCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,test_loss\n");
        for p in &self.points {
            writeln!(out, "{},{:.17e},{:.17e}", p.epoch, p.train_loss, p.test_loss).unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Everything training reads. `train` and `test` must be user-disjoint and
/// the graph must carry no click edges from `test`.
pub struct TrainData<'a> {
    pub graph: &'a KnowledgeGraph,
    pub context: &'a GraphContext,
    pub train: &'a [InteractionRecord],
    pub test: &'a [InteractionRecord],
}

/// A fixed objective: click examples with their sampled negatives, KG
/// corruption pairs and alignment entities.
#[derive(Debug, Clone, Default)]
pub struct Objective {
    pub clicks: Vec<ClickExample>,
    pub kg_pairs: Vec<(Triple, Triple)>,
    pub align: Vec<EntityId>,
}

impl Objective {
    pub fn batch(&self) -> Batch<'_> {
        Batch {
            clicks: &self.clicks,
            kg_pairs: &self.kg_pairs,
            align: &self.align,
        }
    }

    /// Builds the objective for one side of the split: every record, one
    /// unclicked ad per positive, one corruption per triple whose head is
    /// among `users` (or every triple when `users` is `None`), and alignment
    /// over `users` plus all ads.
    pub fn build<R: Rng + ?Sized>(
        graph: &KnowledgeGraph,
        records: &[InteractionRecord],
        users: Option<&HashSet<EntityId>>,
        rng: &mut R,
    ) -> Result<Self> {
        let ads = graph.entities_of_kind(EntityKind::Ad);
        let clicked: HashSet<(EntityId, EntityId)> =
            records.iter().filter(|r| r.label == 1).map(|r| (r.user, r.ad)).collect();
        let mut clicks = Vec::with_capacity(records.len() * 2);
        for r in records {
            clicks.push(ClickExample {
                user: r.user,
                ad: r.ad,
                label: f64::from(r.label),
            });
            if r.label == 1 {
                if let Some(ad) = sample_unclicked(ads, r.user, &clicked, rng) {
                    clicks.push(ClickExample {
                        user: r.user,
                        ad,
                        label: 0.0,
                    });
                }
            }
        }
        let mut kg_pairs = Vec::new();
        for t in graph.triples() {
            if users.is_some_and(|u| !u.contains(&t.head)) {
                continue;
            }
            if let Ok(neg) = graph.sample_negative(t, rng) {
                kg_pairs.push((*t, neg));
            }
        }
        let align = match users {
            Some(u) => {
                let mut v: Vec<EntityId> = u.iter().copied().collect();
                v.sort();
                v
            }
            None => (0..graph.entity_count() as u32).map(EntityId).collect(),
        };
        Ok(Objective {
            clicks,
            kg_pairs,
            align,
        })
    }
}

fn sample_unclicked<R: Rng + ?Sized>(
    ads: &[EntityId],
    user: EntityId,
    clicked: &HashSet<(EntityId, EntityId)>,
    rng: &mut R,
) -> Option<EntityId> {
    for _ in 0..100 {
        let ad = ads[rng.random_range(0..ads.len())];
        if !clicked.contains(&(user, ad)) {
            return Some(ad);
        }
    }
    ads.iter().copied().find(|&a| !clicked.contains(&(user, a)))
}

fn chunks<T: Copy>(items: &[T], parts: usize) -> Vec<&[T]> {
    (0..parts)
        .map(|i| &items[i * items.len() / parts..(i + 1) * items.len() / parts])
        .collect()
}

/// Accumulates per-batch means into size-weighted epoch means.
#[derive(Default)]
struct EpochMeans {
    rec: (f64, usize),
    kg: (f64, usize),
    align: (f64, usize),
}

impl EpochMeans {
    fn add(&mut self, l: &LossBreakdown, b: &Batch) {
        self.rec.0 += l.rec * b.clicks.len() as f64;
        self.rec.1 += b.clicks.len();
        self.kg.0 += l.kg * b.kg_pairs.len() as f64;
        self.kg.1 += b.kg_pairs.len();
        self.align.0 += l.align * b.align.len() as f64;
        self.align.1 += b.align.len();
    }

    fn total(&self, w: &LossWeights) -> f64 {
        let mean = |(s, n): (f64, usize)| if n == 0 { 0.0 } else { s / n as f64 };
        crate::model::total_loss(mean(self.rec), mean(self.kg), mean(self.align), w)
    }
}

pub struct TrainOutput {
    pub model: Model,
    pub curve: LossCurve,
}

pub fn train(config: &TrainConfig, data: &TrainData) -> Result<TrainOutput> {
    train_with(config, data, |_| {})
}

/// Trains from a seeded random init. `on_epoch` sees each curve point as it
/// is produced.
pub fn train_with(config: &TrainConfig, data: &TrainData, mut on_epoch: impl FnMut(&EpochLoss)) -> Result<TrainOutput> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let weights = config.weights();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Model::random(config.model_config(), data.graph.entity_count(), &mut rng);
    model.kg.renormalize();

    let mut train_obj = Objective::build(data.graph, data.train, None, &mut rng)?;
    let test_users: HashSet<EntityId> = data.test.iter().map(|r| r.user).collect();
    let test_obj = Objective::build(data.graph, data.test, Some(&test_users), &mut rng)?;

    let mut adam = Adam::new(&model);
    let mut curve = LossCurve::default();
    let n_batches = train_obj.clicks.len().div_ceil(config.batch_size);
    let mut first_train = None;
    for epoch in 1..=config.epochs {
        let lr = config.learning_rate_at(epoch);
        train_obj.clicks.shuffle(&mut rng);
        train_obj.kg_pairs.shuffle(&mut rng);
        train_obj.align.shuffle(&mut rng);
        let parts = (
            chunks(&train_obj.clicks, n_batches),
            chunks(&train_obj.kg_pairs, n_batches),
            chunks(&train_obj.align, n_batches),
        );
        let mut means = EpochMeans::default();
        for b in 0..n_batches {
            let batch = Batch {
                clicks: parts.0[b],
                kg_pairs: parts.1[b],
                align: parts.2[b],
            };
            let (loss, mut grads) = model.loss_and_grad(data.context, &batch, &weights)?;
            means.add(&loss, &batch);
            if let Some(c) = config.grad_clip {
                clip_global_norm(&mut grads, c);
            }
            adam.step(&mut model, &grads, lr, config.weight_decay);
            model.kg.renormalize();
        }
        let train_loss = means.total(&weights);
        let test_loss = if test_obj.clicks.is_empty() {
            0.0
        } else {
            model.loss(data.context, &test_obj.batch(), &weights)?.total
        };
        let first = *first_train.get_or_insert(train_loss);
        if !train_loss.is_finite() || train_loss > 10.0 * first || !test_loss.is_finite() {
            return Err(Error::DivergedLoss {
                epoch,
                loss: train_loss,
            });
        }
        let point = EpochLoss {
            epoch,
            train_loss,
            test_loss,
        };
        on_epoch(&point);
        curve.points.push(point);
    }
    Ok(TrainOutput { model, curve })
}

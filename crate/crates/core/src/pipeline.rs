//! File-based stages: dataset → graph directory → model → index → report.
//!
//! A graph directory holds the split interactions next to the graph built
//! from the train split, so later stages never read the raw bundle:
//!
//! ```text
//! entities.tsv  triples.tsv  ad_texts.jsonl  user_tags.jsonl
//! train.jsonl  valid.jsonl  test.jsonl  [latent.json]
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::datagen::{self, DatasetBundle, Latent};
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport, MetricsReport, UserMetrics};
use crate::index::{
    HnswParams, IndexKind, IvfParams, LatencyMonitor, SearchParams, VectorIndex, VectorStore,
};
use crate::kg::io::{self, AdText, RawInteraction, UserTags};
use crate::kg::{Entity, EntityId, EntityKind, InteractionRecord, KnowledgeGraph, NamedTriple, RelationKind};
use crate::model::{self, GraphContext, Model, NodeEmbeddings};
use crate::train::{self, TrainConfig, TrainOutput};

pub const TRAIN_FILE: &str = "train.jsonl";
pub const VALID_FILE: &str = "valid.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const MODEL_FILE: &str = "model.kgsr";
pub const LOSS_FILE: &str = "loss.csv";
pub const INDEX_FILE: &str = "index.kgsi";
pub const REPORT_FILE: &str = "metrics.json";

/// Ads retrieved per user before reranking.
pub const RETRIEVE_DEPTH: usize = 100;

/// The graph directory written by [`build_kg`].
#[derive(Debug, Clone)]
pub struct GraphDir {
    pub dir: PathBuf,
}

impl GraphDir {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        GraphDir { dir: dir.into() }
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    pub fn load(&self) -> Result<Prepared> {
        let entities = io::read_entities(&self.path(datagen::ENTITIES_FILE))?;
        let triples = io::read_triples(&self.path(datagen::TRIPLES_FILE))?;
        let graph = KnowledgeGraph::build(entities, &triples)?;
        let ad_texts = io::read_ad_texts(&self.path(datagen::AD_TEXTS_FILE))?;
        let user_tags = io::read_user_tags(&self.path(datagen::USER_TAGS_FILE))?;
        let resolve = |file: &str| -> Result<Vec<InteractionRecord>> {
            io::read_interactions(&self.path(file))?
                .iter()
                .map(|r| graph.resolve_interaction(r))
                .collect()
        };
        let (train, valid, test) = (resolve(TRAIN_FILE)?, resolve(VALID_FILE)?, resolve(TEST_FILE)?);
        let latent_path = self.path(datagen::LATENT_FILE);
        let latent = if latent_path.exists() {
            Some(DatasetBundle::new(&self.dir).latent()?)
        } else {
            None
        };
        Ok(Prepared {
            graph,
            ad_texts,
            user_tags,
            train,
            valid,
            test,
            latent,
        })
    }
}

/// Everything downstream stages need, in memory.
pub struct Prepared {
    pub graph: KnowledgeGraph,
    pub ad_texts: Vec<AdText>,
    pub user_tags: Vec<UserTags>,
    pub train: Vec<InteractionRecord>,
    pub valid: Vec<InteractionRecord>,
    pub test: Vec<InteractionRecord>,
    pub latent: Option<Latent>,
}

impl Prepared {
    pub fn context(&self, vocab_size: usize) -> Result<GraphContext> {
        let texts = model::entity_texts(&self.graph, &self.ad_texts, &self.user_tags)?;
        GraphContext::new(&self.graph, &texts, vocab_size)
    }

    /// Click edges that touch a user outside the train split.
    pub fn leakage(&self) -> Vec<String> {
        audit_leakage(&self.graph, &self.train, self.valid.iter().chain(&self.test))
    }
}

/// Reports click edges whose user is not a train user or that are absent
/// from the train positives.
pub fn audit_leakage<'a>(
    graph: &KnowledgeGraph,
    train: &[InteractionRecord],
    held_out: impl IntoIterator<Item = &'a InteractionRecord>,
) -> Vec<String> {
    let held: HashSet<EntityId> = held_out.into_iter().map(|r| r.user).collect();
    let train_pos: HashSet<(EntityId, EntityId)> =
        train.iter().filter(|r| r.label == 1).map(|r| (r.user, r.ad)).collect();
    graph
        .triples()
        .iter()
        .filter(|t| t.relation == RelationKind::Clicks)
        .filter(|t| held.contains(&t.head) || !train_pos.contains(&(t.head, t.tail)))
        .map(|t| graph.describe(t))
        .collect()
}

pub fn gen_data(cfg: &datagen::SyntheticConfig, out: &Path, dump_latent: bool) -> Result<DatasetBundle> {
    let data = datagen::generate(cfg)?;
    datagen::write_bundle(cfg, &data, out, dump_latent)
}

/// Splits the bundle's interactions by user and writes the graph directory.
/// Click edges come from train positives only.
pub fn build_kg(bundle: &DatasetBundle, out: &Path, split_seed: u64) -> Result<GraphDir> {
    let loaded = bundle.load()?;
    let split = eval::split_by_user(&loaded.interactions, |r| r.user.clone(), eval::DEFAULT_RATIOS, split_seed)?;
    let (entities, triples) = graph_from_split(&loaded.entities, &loaded.triples, &split.train);
    KnowledgeGraph::build(entities.clone(), &triples)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let dir = GraphDir::new(out);
    io::write_entities(&dir.path(datagen::ENTITIES_FILE), &entities)?;
    io::write_triples(&dir.path(datagen::TRIPLES_FILE), &triples)?;
    io::write_jsonl(&dir.path(datagen::AD_TEXTS_FILE), &loaded.ad_texts)?;
    io::write_jsonl(&dir.path(datagen::USER_TAGS_FILE), &loaded.user_tags)?;
    io::write_jsonl(&dir.path(TRAIN_FILE), &split.train)?;
    io::write_jsonl(&dir.path(VALID_FILE), &split.valid)?;
    io::write_jsonl(&dir.path(TEST_FILE), &split.test)?;
    let latent = bundle.path(datagen::LATENT_FILE);
    if latent.exists() {
        let to = dir.path(datagen::LATENT_FILE);
        fs::copy(&latent, &to).map_err(|e| Error::io(&to, e))?;
    }
    let prepared = dir.load()?;
    let leaks = prepared.leakage();
    if !leaks.is_empty() {
        return Err(Error::InvalidConfig(format!("held-out click edges in graph: {}", leaks.join("; "))));
    }
    Ok(dir)
}

/// Attribute triples plus one click edge per distinct train positive.
pub fn graph_from_split(
    entities: &[Entity],
    triples: &[NamedTriple],
    train: &[RawInteraction],
) -> (Vec<Entity>, Vec<NamedTriple>) {
    let mut out: Vec<NamedTriple> = triples
        .iter()
        .filter(|t| t.relation != RelationKind::Clicks)
        .cloned()
        .collect();
    let clicks: BTreeSet<(&str, &str)> = train
        .iter()
        .filter(|r| r.label == 1)
        .map(|r| (r.user.as_str(), r.ad.as_str()))
        .collect();
    out.extend(clicks.into_iter().map(|(u, a)| NamedTriple::new(u, RelationKind::Clicks, a)));
    (entities.to_vec(), out)
}

pub fn train_model(
    prepared: &Prepared,
    config: &TrainConfig,
    on_epoch: impl FnMut(&train::EpochLoss),
) -> Result<(TrainOutput, GraphContext)> {
    let context = prepared.context(config.vocab_size)?;
    let data = train::TrainData {
        graph: &prepared.graph,
        context: &context,
        train: &prepared.train,
        test: &prepared.test,
    };
    let out = train::train_with(config, &data, on_epoch)?;
    Ok((out, context))
}

pub fn train_stage(dir: &GraphDir, config: &TrainConfig, out: &Path, on_epoch: impl FnMut(&train::EpochLoss)) -> Result<TrainOutput> {
    let prepared = dir.load()?;
    let (trained, _) = train_model(&prepared, config, on_epoch)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    trained.model.save(&out.join(MODEL_FILE))?;
    trained.curve.write_csv(&out.join(LOSS_FILE))?;
    Ok(trained)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexConfig {
    pub kind: IndexKind,
    pub hnsw: HnswParams,
    pub ivf: IvfParams,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            kind: IndexKind::Hnsw,
            hnsw: HnswParams::default(),
            ivf: IvfParams {
                nlist: 32,
                ..IvfParams::default()
            },
        }
    }
}

fn to_f32(v: ndarray::ArrayView1<f64>) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Fused ad vectors keyed by ad id.
pub fn ad_store(graph: &KnowledgeGraph, emb: &NodeEmbeddings) -> Result<VectorStore> {
    let rows = graph
        .entities_of_kind(EntityKind::Ad)
        .iter()
        .map(|&a| (graph.entity(a).id.clone(), to_f32(emb.fused.row(a.index()))))
        .collect();
    VectorStore::new(emb.fused.ncols(), rows)
}

pub fn build_index(store: VectorStore, cfg: &IndexConfig) -> Result<VectorIndex> {
    match cfg.kind {
        IndexKind::Exact => VectorIndex::exact(store),
        IndexKind::Hnsw => VectorIndex::hnsw(store, cfg.hnsw),
        IndexKind::Ivf => {
            let nlist = cfg.ivf.nlist.min(store.len());
            VectorIndex::ivf(store, IvfParams { nlist, ..cfg.ivf })
        }
    }
}

pub fn index_stage(dir: &GraphDir, model_path: &Path, cfg: &IndexConfig, out: &Path) -> Result<VectorIndex> {
    let prepared = dir.load()?;
    let model = Model::load(model_path)?;
    let emb = model.embed(&prepared.context(model.config.vocab_size)?)?;
    let index = build_index(ad_store(&prepared.graph, &emb)?, cfg)?;
    index.save(out)?;
    Ok(index)
}

/// One ranked ad with its retrieval distance and click score.
#[derive(Debug, Clone, PartialEq)]
pub struct Recommendation {
    pub ad: String,
    pub distance: f64,
    pub score: f64,
}

/// Retrieves by fused-vector distance and reranks by the bilinear click
/// logit on the final states, ties by ad id.
pub struct Recommender<'a> {
    pub graph: &'a KnowledgeGraph,
    pub model: &'a Model,
    pub embeddings: &'a NodeEmbeddings,
    pub index: &'a VectorIndex,
    pub search: SearchParams,
}

impl Recommender<'_> {
    fn ad_entity(&self, row: u32) -> Result<EntityId> {
        self.graph.lookup(self.index.store.id(row))
    }

    pub fn retrieve(&self, user: EntityId) -> Result<Vec<Recommendation>> {
        let q = to_f32(self.embeddings.fused.row(user.index()));
        let hits = self.index.search(&q, &self.search)?;
        hits.hits
            .iter()
            .map(|h| {
                let ad = self.ad_entity(h.row)?;
                Ok(Recommendation {
                    ad: self.index.store.id(h.row).to_string(),
                    distance: h.distance,
                    score: gnn_score(self.model, self.embeddings, user, ad),
                })
            })
            .collect()
    }

    pub fn rerank(mut recs: Vec<Recommendation>) -> Vec<Recommendation> {
        recs.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.ad.cmp(&b.ad)));
        recs
    }
}

fn gnn_score(model: &Model, emb: &NodeEmbeddings, user: EntityId, ad: EntityId) -> f64 {
    crate::gnn::logistic(model.logit(&emb.states, user, ad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub search: SearchParams,
    pub latency_threshold_ms: f64,
    pub random_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            search: SearchParams {
                k: RETRIEVE_DEPTH,
                ef_search: 128,
                nprobe: 8,
            },
            latency_threshold_ms: 50.0,
            random_seed: 7,
        }
    }
}

pub struct Evaluation {
    pub report: EvalReport,
    pub per_user: Vec<(String, UserMetrics)>,
}

/// Test users with at least one positive, and their positive ads.
pub fn test_truth(graph: &KnowledgeGraph, test: &[InteractionRecord]) -> BTreeMap<EntityId, HashSet<String>> {
    let mut truth: BTreeMap<EntityId, HashSet<String>> = BTreeMap::new();
    for r in test.iter().filter(|r| r.label == 1) {
        truth.entry(r.user).or_default().insert(graph.entity(r.ad).id.clone());
    }
    truth
}

pub fn evaluate(prepared: &Prepared, model: &Model, index: &VectorIndex, cfg: &EvalConfig) -> Result<Evaluation> {
    let graph = &prepared.graph;
    let context = prepared.context(model.config.vocab_size)?;
    let embeddings = model.embed(&context)?;
    let rec = Recommender {
        graph,
        model,
        embeddings: &embeddings,
        index,
        search: cfg.search,
    };
    let truth = test_truth(graph, &prepared.test);
    if truth.is_empty() {
        return Err(Error::NoQueries);
    }
    let ads: Vec<String> = graph
        .entities_of_kind(EntityKind::Ad)
        .iter()
        .map(|&a| graph.entity(a).id.clone())
        .collect();
    let popular = eval::popularity_ranking(
        &ads,
        prepared
            .train
            .iter()
            .filter(|r| r.label == 1)
            .map(|r| graph.entity(r.ad).id.clone()),
    );
    let latent_rows = prepared.latent.as_ref().map(|l| {
        let user_row: BTreeMap<&str, usize> = l.user_ids.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
        (l, user_row)
    });

    let threshold_us = (cfg.latency_threshold_ms * 1000.0).round() as u64;
    let mut monitor = LatencyMonitor::new(threshold_us);
    let (mut raw, mut reranked, mut pop, mut rnd, mut oracle) = (vec![], vec![], vec![], vec![], vec![]);
    let mut per_user = Vec::new();
    for (&user, relevant) in &truth {
        let t0 = Instant::now();
        let retrieved = rec.retrieve(user)?;
        let ranked = Recommender::rerank(retrieved.clone());
        monitor.record(t0.elapsed());

        let ids = |v: &[Recommendation]| v.iter().map(|r| r.ad.clone()).collect::<Vec<_>>();
        let m = eval::user_metrics(&ids(&ranked), relevant)?;
        per_user.push((graph.entity(user).id.clone(), m));
        reranked.push(m);
        raw.push(eval::user_metrics(&ids(&retrieved), relevant)?);
        pop.push(eval::user_metrics(&popular, relevant)?);
        let shuffled = eval::random_ranking(&ads, cfg.random_seed, u64::from(user.0));
        rnd.push(eval::user_metrics(&shuffled, relevant)?);
        if let Some((latent, rows)) = &latent_rows {
            let uid = graph.entity(user).id.as_str();
            if let Some(&u) = rows.get(uid) {
                let order: Vec<String> = latent.oracle_ranking(u).into_iter().map(|a| latent.ad_ids[a].clone()).collect();
                oracle.push(eval::user_metrics(&order, relevant)?);
            }
        }
    }
    let latency = monitor.report()?;
    let with_arl = |mut m: MetricsReport| {
        m.arl_ms = latency.avg_us / 1000.0;
        m
    };
    let report = EvalReport {
        users: truth.len(),
        candidates: ads.len(),
        model_retrieval: with_arl(eval::aggregate(&raw)?),
        model_reranked: with_arl(eval::aggregate(&reranked)?),
        popularity: eval::aggregate(&pop)?,
        random: eval::aggregate(&rnd)?,
        oracle: if oracle.is_empty() {
            None
        } else {
            Some(eval::aggregate(&oracle)?)
        },
        latency_threshold_ms: cfg.latency_threshold_ms,
        within_threshold: latency.within_threshold,
    };
    Ok(Evaluation { report, per_user })
}

pub fn eval_stage(dir: &GraphDir, model_path: &Path, index_path: &Path, cfg: &EvalConfig) -> Result<Evaluation> {
    let prepared = dir.load()?;
    let model = Model::load(model_path)?;
    let index = VectorIndex::load(index_path)?;
    evaluate(&prepared, &model, &index, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn click_edges_follow_train_positives() {
        let entities = vec![
            Entity::new("u1", EntityKind::User, "u1"),
            Entity::new("a1", EntityKind::Ad, "a1"),
        ];
        let attrs = vec![NamedTriple::new("u1", RelationKind::Clicks, "a1")];
        let train = vec![
            RawInteraction {
                user: "u1".into(),
                ad: "a1".into(),
                label: 0,
                ts: 0,
            },
        ];
        let (_, t) = graph_from_split(&entities, &attrs, &train);
        assert!(t.is_empty());
        let train = vec![RawInteraction { label: 1, ..train[0].clone() }; 2];
        let (_, t) = graph_from_split(&entities, &attrs, &train);
        assert_eq!(t, vec![NamedTriple::new("u1", RelationKind::Clicks, "a1")]);
    }

    #[test]
    fn leakage_audit_flags_held_out_users() {
        let entities = vec![
            Entity::new("u1", EntityKind::User, "u1"),
            Entity::new("u2", EntityKind::User, "u2"),
            Entity::new("a1", EntityKind::Ad, "a1"),
        ];
        let triples = vec![
            NamedTriple::new("u1", RelationKind::Clicks, "a1"),
            NamedTriple::new("u2", RelationKind::Clicks, "a1"),
        ];
        let g = KnowledgeGraph::build(entities, &triples).unwrap();
        let rec = |u: u32| InteractionRecord {
            user: EntityId(u),
            ad: EntityId(2),
            label: 1,
            timestamp: 0,
        };
        assert!(audit_leakage(&g, &[rec(0), rec(1)], &[]).is_empty());
        assert_eq!(audit_leakage(&g, &[rec(0)], &[rec(1)]).len(), 1);
    }
}

//! Seeded synthetic datasets from a latent-topic model.
//!
//! Users and ads each carry a sparse mixture over latent topics. Every topic
//! owns a slice of a pseudo-word vocabulary; ad copy, interest tags and
//! category labels are drawn from those slices, so text overlap reflects
//! topic overlap. A user's exposure to an ad grows as `exp(β · affinity)`,
//! the click probability grows linearly with relative affinity and labels
//! are flipped with probability `noise_rate`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::io::{self, AdText, RawInteraction, UserTags};
use crate::kg::{Entity, EntityKind, NamedTriple, RelationKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub n_ads: usize,
    pub n_products: usize,
    pub n_categories: usize,
    pub n_interactions: usize,
    pub avg_tags_per_user: f64,
    pub avg_text_len: f64,
    pub n_latent_topics: usize,
    pub noise_rate: f64,
    pub seed: u64,
    pub vocab_size: usize,
    pub tags_per_topic: usize,
    /// Dirichlet concentration of the topic mixtures; small is sparse.
    pub topic_concentration: f64,
    /// β in the exposure weight `exp(β · affinity)`.
    pub exposure_sharpness: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_users: 2000,
            n_ads: 1000,
            n_products: 300,
            n_categories: 32,
            n_interactions: 50_000,
            avg_tags_per_user: 4.7,
            avg_text_len: 28.0,
            n_latent_topics: 16,
            noise_rate: 0.05,
            seed: 42,
            vocab_size: 4096,
            tags_per_topic: 12,
            topic_concentration: 0.2,
            exposure_sharpness: 60.0,
        }
    }
}

impl SyntheticConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SyntheticConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let counts = [
            ("n_users", self.n_users),
            ("n_ads", self.n_ads),
            ("n_products", self.n_products),
            ("n_categories", self.n_categories),
            ("n_interactions", self.n_interactions),
            ("n_latent_topics", self.n_latent_topics),
            ("tags_per_topic", self.tags_per_topic),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{name} must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return bad(format!("noise_rate {} not in [0,1]", self.noise_rate));
        }
        if !(self.avg_tags_per_user >= 1.0) || !(self.avg_text_len >= 1.0) {
            return bad("avg_tags_per_user and avg_text_len must be >= 1".into());
        }
        if !(self.topic_concentration > 0.0) || !(self.exposure_sharpness >= 0.0) {
            return bad("topic_concentration must be > 0 and exposure_sharpness >= 0".into());
        }
        if self.vocab_size < self.n_latent_topics * self.tags_per_topic * 2 {
            return bad(format!("vocab_size {} too small for the topic layout", self.vocab_size));
        }
        Ok(())
    }
}

/// Ground-truth topic mixtures, dumped for oracle diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub user_ids: Vec<String>,
    pub user_topics: Vec<Vec<f64>>,
    pub ad_ids: Vec<String>,
    pub ad_topics: Vec<Vec<f64>>,
}

impl Latent {
    pub fn affinity(&self, user: usize, ad: usize) -> f64 {
        dot(&self.user_topics[user], &self.ad_topics[ad])
    }

    /// Ads ranked by true affinity for one user, ties by index.
    pub fn oracle_ranking(&self, user: usize) -> Vec<usize> {
        let mut ads: Vec<usize> = (0..self.ad_ids.len()).collect();
        let aff: Vec<f64> = ads.iter().map(|&a| self.affinity(user, a)).collect();
        ads.sort_by(|&a, &b| aff[b].total_cmp(&aff[a]).then(a.cmp(&b)));
        ads
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// In-memory dataset, as written to a bundle directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub entities: Vec<Entity>,
    pub triples: Vec<NamedTriple>,
    pub interactions: Vec<RawInteraction>,
    pub ad_texts: Vec<AdText>,
    pub user_tags: Vec<UserTags>,
    pub latent: Latent,
}

pub const ENTITIES_FILE: &str = "entities.tsv";
pub const TRIPLES_FILE: &str = "triples.tsv";
pub const INTERACTIONS_FILE: &str = "interactions.jsonl";
pub const AD_TEXTS_FILE: &str = "ad_texts.jsonl";
pub const USER_TAGS_FILE: &str = "user_tags.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LATENT_FILE: &str = "latent.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub entities: usize,
    pub triples: usize,
    pub interactions: usize,
    pub ad_texts: usize,
    pub user_tags: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: SyntheticConfig,
    pub counts: Counts,
    pub seed: u64,
    pub format_versions: BTreeMap<String, u32>,
    /// CRC32 (hex) of each data file.
    pub checksums: BTreeMap<String, String>,
}

/// Paths of one written dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetBundle {
    pub dir: PathBuf,
}

impl DatasetBundle {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        DatasetBundle { dir: dir.into() }
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    pub fn manifest(&self) -> Result<Manifest> {
        let p = self.path(MANIFEST_FILE);
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        serde_json::from_str(&text).map_err(|e| Error::CorruptSnapshot(format!("{}: {e}", p.display())))
    }

    pub fn latent(&self) -> Result<Latent> {
        let p = self.path(LATENT_FILE);
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        serde_json::from_str(&text).map_err(|e| Error::CorruptSnapshot(format!("{}: {e}", p.display())))
    }

    /// Re-reads every file through the dataset readers.
    pub fn load(&self) -> Result<LoadedBundle> {
        Ok(LoadedBundle {
            entities: io::read_entities(&self.path(ENTITIES_FILE))?,
            triples: io::read_triples(&self.path(TRIPLES_FILE))?,
            interactions: io::read_interactions(&self.path(INTERACTIONS_FILE))?,
            ad_texts: io::read_ad_texts(&self.path(AD_TEXTS_FILE))?,
            user_tags: io::read_user_tags(&self.path(USER_TAGS_FILE))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedBundle {
    pub entities: Vec<Entity>,
    pub triples: Vec<NamedTriple>,
    pub interactions: Vec<RawInteraction>,
    pub ad_texts: Vec<AdText>,
    pub user_tags: Vec<UserTags>,
}

impl LoadedBundle {
    pub fn counts(&self) -> Counts {
        Counts {
            entities: self.entities.len(),
            triples: self.triples.len(),
            interactions: self.interactions.len(),
            ad_texts: self.ad_texts.len(),
            user_tags: self.user_tags.len(),
        }
    }
}

/// Pronounceable pseudo-word for vocabulary slot `i`.
pub fn word(i: usize) -> String {
    const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "tr"];
    const VOWELS: [&str; 8] = ["a", "e", "i", "o", "u", "ai", "ou", "ei"];
    let mut n = i;
    let mut out = String::new();
    loop {
        out.push_str(ONSETS[n % 16]);
        n /= 16;
        out.push_str(VOWELS[n % 8]);
        n /= 8;
        if n == 0 {
            break;
        }
        n -= 1;
    }
    out
}

struct Vocabulary {
    /// Per topic: word slots, most frequent first.
    topics: Vec<Vec<usize>>,
    background: Vec<usize>,
    zipf: WeightedIndex<f64>,
    background_zipf: WeightedIndex<f64>,
}

impl Vocabulary {
    fn new(vocab_size: usize, topics: usize) -> Self {
        let background_len = vocab_size / 4;
        let per_topic = (vocab_size - background_len) / topics;
        let topic_words = (0..topics)
            .map(|t| (0..per_topic).map(|j| background_len + t * per_topic + j).collect())
            .collect();
        let zipf = |n: usize| WeightedIndex::new((1..=n).map(|r| 1.0 / r as f64)).unwrap();
        Vocabulary {
            topics: topic_words,
            background: (0..background_len).collect(),
            zipf: zipf(per_topic),
            background_zipf: zipf(background_len),
        }
    }

    fn topic_word<R: Rng + ?Sized>(&self, topic: usize, rng: &mut R) -> usize {
        self.topics[topic][self.zipf.sample(rng)]
    }

    fn background_word<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.background[self.background_zipf.sample(rng)]
    }
}

fn mixture<R: Rng + ?Sized>(k: usize, alpha: f64, rng: &mut R) -> Vec<f64> {
    if k == 1 {
        return vec![1.0];
    }
    let gamma = Gamma::new(alpha, 1.0).unwrap();
    let mut v: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let s: f64 = v.iter().sum();
    if s > 0.0 && s.is_finite() {
        v.iter_mut().for_each(|x| *x /= s);
    } else {
        v = vec![0.0; k];
        v[rng.random_range(0..k)] = 1.0;
    }
    v
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap()
}

fn draw_topic<R: Rng + ?Sized>(theta: &[f64], rng: &mut R) -> usize {
    WeightedIndex::new(theta).map(|w| w.sample(rng)).unwrap_or(0)
}

pub fn user_id(i: usize) -> String {
    format!("u{i:05}")
}

pub fn ad_id(i: usize) -> String {
    format!("a{i:05}")
}

fn tag_id(word: &str) -> String {
    format!("tag:{word}")
}

pub fn generate(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.n_latent_topics;
    let vocab = Vocabulary::new(cfg.vocab_size, k);
    let words: Vec<String> = (0..cfg.vocab_size).map(word).collect();
    let mut entities = Vec::new();
    let mut triples = Vec::new();

    // categories: category c belongs to topic c mod k
    let category_ids: Vec<String> = (0..cfg.n_categories).map(|c| format!("c{c:03}")).collect();
    let mut categories_of_topic = vec![Vec::new(); k];
    for (c, id) in category_ids.iter().enumerate() {
        let t = c % k;
        categories_of_topic[t].push(c);
        let label = (0..2).map(|_| words[vocab.topic_word(t, &mut rng)].as_str()).collect::<Vec<_>>().join(" ");
        entities.push(Entity::new(id, EntityKind::Category, label));
    }
    let category_for = |t: usize, rng: &mut ChaCha8Rng| -> usize {
        let pool = &categories_of_topic[t];
        if pool.is_empty() {
            rng.random_range(0..cfg.n_categories)
        } else {
            pool[rng.random_range(0..pool.len())]
        }
    };

    // tags: the head of each topic's word list
    let tag_words: Vec<Vec<usize>> = vocab
        .topics
        .iter()
        .map(|ws| ws[..cfg.tags_per_topic.min(ws.len())].to_vec())
        .collect();
    let mut tag_seen = HashSet::new();

    // products
    let mut products_of_topic = vec![Vec::new(); k];
    for p in 0..cfg.n_products {
        let t = rng.random_range(0..k);
        let id = format!("p{p:04}");
        let label = (0..3).map(|_| words[vocab.topic_word(t, &mut rng)].as_str()).collect::<Vec<_>>().join(" ");
        entities.push(Entity::new(&id, EntityKind::Product, label));
        triples.push(NamedTriple::new(&id, RelationKind::BelongsTo, &category_ids[category_for(t, &mut rng)]));
        products_of_topic[t].push(id);
    }

    // ads
    let text_len = Poisson::new(cfg.avg_text_len).unwrap();
    let mut ad_topics = Vec::with_capacity(cfg.n_ads);
    let mut ad_texts = Vec::with_capacity(cfg.n_ads);
    for a in 0..cfg.n_ads {
        let id = ad_id(a);
        let theta = mixture(k, cfg.topic_concentration, &mut rng);
        let dominant = argmax(&theta);
        let len = (text_len.sample(&mut rng) as usize).max(1);
        let text = (0..len)
            .map(|_| {
                let w = if rng.random_bool(0.8) {
                    vocab.topic_word(draw_topic(&theta, &mut rng), &mut rng)
                } else {
                    vocab.background_word(&mut rng)
                };
                words[w].as_str()
            })
            .collect::<Vec<_>>()
            .join(" ");
        let label = text.split(' ').take(4).collect::<Vec<_>>().join(" ");
        entities.push(Entity::new(&id, EntityKind::Ad, label));
        triples.push(NamedTriple::new(&id, RelationKind::BelongsTo, &category_ids[category_for(dominant, &mut rng)]));
        let prods = &products_of_topic[dominant];
        if !prods.is_empty() {
            triples.push(NamedTriple::new(&id, RelationKind::Promotes, &prods[rng.random_range(0..prods.len())]));
        }
        ad_texts.push(AdText { ad_id: id, text });
        ad_topics.push(theta);
    }

    // users
    let extra_tags = Poisson::new(cfg.avg_tags_per_user - 1.0).ok();
    let mut user_topics = Vec::with_capacity(cfg.n_users);
    let mut user_tags = Vec::with_capacity(cfg.n_users);
    let mut user_entities = Vec::with_capacity(cfg.n_users);
    let mut user_triples = Vec::new();
    for u in 0..cfg.n_users {
        let id = user_id(u);
        let theta = mixture(k, cfg.topic_concentration, &mut rng);
        let want = 1 + extra_tags.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
        let mut tags: Vec<String> = Vec::with_capacity(want);
        for _ in 0..want * 20 {
            if tags.len() == want {
                break;
            }
            let pool = &tag_words[draw_topic(&theta, &mut rng)];
            let w = &words[pool[rng.random_range(0..pool.len())]];
            if !tags.contains(w) {
                tags.push(w.clone());
            }
        }
        for t in &tags {
            if tag_seen.insert(t.clone()) {
                entities.push(Entity::new(tag_id(t), EntityKind::InterestTag, t));
            }
            user_triples.push(NamedTriple::new(&id, RelationKind::InterestedIn, tag_id(t)));
        }
        let mut liked = HashSet::new();
        for _ in 0..2 {
            let c = category_for(draw_topic(&theta, &mut rng), &mut rng);
            if liked.insert(c) {
                user_triples.push(NamedTriple::new(&id, RelationKind::LikesCategory, &category_ids[c]));
            }
        }
        user_entities.push(Entity::new(&id, EntityKind::User, format!("user {u}")));
        user_tags.push(UserTags { user_id: id, tags });
        user_topics.push(theta);
    }
    entities.extend(user_entities);
    triples.extend(user_triples);

    // interactions
    let mut interactions = Vec::with_capacity(cfg.n_interactions);
    let mut exposure: Vec<Option<(WeightedIndex<f64>, f64)>> = vec![None; cfg.n_users];
    for i in 0..cfg.n_interactions {
        let u = rng.random_range(0..cfg.n_users);
        let (dist, max_aff) = exposure[u].get_or_insert_with(|| {
            let aff: Vec<f64> = ad_topics.iter().map(|a| dot(&user_topics[u], a)).collect();
            let max = aff.iter().copied().fold(0.0, f64::max);
            let w = aff.iter().map(|x| (cfg.exposure_sharpness * (x - max)).exp());
            (WeightedIndex::new(w).unwrap(), max)
        });
        let a = dist.sample(&mut rng);
        let rel = if *max_aff > 0.0 {
            dot(&user_topics[u], &ad_topics[a]) / *max_aff
        } else {
            1.0
        };
        let mut click = rng.random_bool((0.05 + 0.9 * rel).clamp(0.0, 1.0));
        if rng.random_bool(cfg.noise_rate) {
            click = !click;
        }
        interactions.push(RawInteraction {
            user: user_id(u),
            ad: ad_id(a),
            label: u8::from(click),
            ts: 1_700_000_000 + i as i64 * 60,
        });
    }

    Ok(Dataset {
        entities,
        triples,
        interactions,
        ad_texts,
        user_tags,
        latent: Latent {
            user_ids: (0..cfg.n_users).map(user_id).collect(),
            user_topics,
            ad_ids: (0..cfg.n_ads).map(ad_id).collect(),
            ad_topics,
        },
    })
}

pub fn format_versions() -> BTreeMap<String, u32> {
    [
        (ENTITIES_FILE, 1),
        (TRIPLES_FILE, 1),
        (INTERACTIONS_FILE, 1),
        (AD_TEXTS_FILE, 1),
        (USER_TAGS_FILE, 1),
        ("model_snapshot", crate::snapshot::SECTIONED_VERSION),
        ("index_snapshot", crate::index::SNAPSHOT_VERSION),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Writes the dataset files and manifest into `dir`; with `dump_latent` the
/// ground-truth mixtures go to `latent.json` as well.
pub fn write_bundle(cfg: &SyntheticConfig, data: &Dataset, dir: &Path, dump_latent: bool) -> Result<DatasetBundle> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bundle = DatasetBundle::new(dir);
    io::write_entities(&bundle.path(ENTITIES_FILE), &data.entities)?;
    io::write_triples(&bundle.path(TRIPLES_FILE), &data.triples)?;
    io::write_jsonl(&bundle.path(INTERACTIONS_FILE), &data.interactions)?;
    io::write_jsonl(&bundle.path(AD_TEXTS_FILE), &data.ad_texts)?;
    io::write_jsonl(&bundle.path(USER_TAGS_FILE), &data.user_tags)?;
    let mut checksums = BTreeMap::new();
    for file in [ENTITIES_FILE, TRIPLES_FILE, INTERACTIONS_FILE, AD_TEXTS_FILE, USER_TAGS_FILE] {
        let p = bundle.path(file);
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        checksums.insert(file.to_string(), format!("{:08x}", crc32fast::hash(&bytes)));
    }
    let manifest = Manifest {
        config: cfg.clone(),
        counts: Counts {
            entities: data.entities.len(),
            triples: data.triples.len(),
            interactions: data.interactions.len(),
            ad_texts: data.ad_texts.len(),
            user_tags: data.user_tags.len(),
        },
        seed: cfg.seed,
        format_versions: format_versions(),
        checksums,
    };
    write_json(&bundle.path(MANIFEST_FILE), &manifest)?;
    if dump_latent {
        write_json(&bundle.path(LATENT_FILE), &data.latent)?;
    }
    Ok(bundle)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("plain data serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Min-max scaling per column; a constant column maps to zeros.
pub fn normalize_features(columns: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    columns
        .iter()
        .map(|col| {
            if col.is_empty() {
                return Err(Error::EmptyColumn);
            }
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::NonFiniteInput("feature column".into()));
            }
            Ok(if hi > lo {
                col.iter().map(|x| (x - lo) / (hi - lo)).collect()
            } else {
                vec![0.0; col.len()]
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            n_users: 100,
            n_ads: 60,
            n_products: 20,
            n_categories: 8,
            n_interactions: 2000,
            n_latent_topics: 4,
            vocab_size: 512,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_features(&[vec![0.0, 5.0, 10.0]]).unwrap(), vec![vec![0.0, 0.5, 1.0]]);
        assert_eq!(normalize_features(&[vec![3.0; 4]]).unwrap(), vec![vec![0.0; 4]]);
        assert!(matches!(normalize_features(&[vec![]]), Err(Error::EmptyColumn)));
    }

    #[test]
    fn words_are_distinct_tokens() {
        let ws: HashSet<String> = (0..4096).map(word).collect();
        assert_eq!(ws.len(), 4096);
        assert!(ws.iter().all(|w| w.chars().all(|c| c.is_ascii_lowercase())));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate(&SyntheticConfig { seed: 7, ..small() }).unwrap();
        assert_ne!(a.interactions, c.interactions);
    }

    #[test]
    fn single_topic_has_uniform_affinity() {
        let cfg = SyntheticConfig {
            n_latent_topics: 1,
            n_interactions: 20_000,
            ..small()
        };
        let d = generate(&cfg).unwrap();
        assert!(d.latent.user_topics.iter().all(|t| t == &vec![1.0]));
        let rate = d.interactions.iter().filter(|r| r.label == 1).count() as f64 / d.interactions.len() as f64;
        // click prob 0.95 flipped with 0.05 noise
        let expect = 0.95 * 0.95 + 0.05 * 0.05;
        let sigma = (expect * (1.0 - expect) / d.interactions.len() as f64).sqrt();
        assert!((rate - expect).abs() < 4.0 * sigma, "{rate} vs {expect}");
    }

    #[test]
    fn bundle_checksums_are_reproducible() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ma = write_bundle(&small(), &generate(&small()).unwrap(), a.path(), false).unwrap().manifest().unwrap();
        let mb = write_bundle(&small(), &generate(&small()).unwrap(), b.path(), false).unwrap().manifest().unwrap();
        assert_eq!(ma.checksums.len(), 5);
        assert_eq!(ma.checksums, mb.checksums);
        let bytes = fs::read(a.path().join(TRIPLES_FILE)).unwrap();
        assert_eq!(ma.checksums[TRIPLES_FILE], format!("{:08x}", crc32fast::hash(&bytes)));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(generate(&SyntheticConfig { n_users: 0, ..small() }).is_err());
        assert!(generate(&SyntheticConfig { noise_rate: 1.5, ..small() }).is_err());
        assert!(SyntheticConfig::from_toml_str("n_users = 3\nbogus = 1\n").is_err());
    }

    proptest::proptest! {
        #[test]
        fn normalized_columns_span_unit_interval(
            col in proptest::collection::vec(-1e6f64..1e6, 2..100),
        ) {
            let out = normalize_features(std::slice::from_ref(&col)).unwrap();
            let lo = out[0].iter().copied().fold(f64::INFINITY, f64::min);
            let hi = out[0].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let constant = col.iter().all(|&v| v == col[0]);
            proptest::prop_assert_eq!(lo, 0.0);
            proptest::prop_assert_eq!(hi, if constant { 0.0 } else { 1.0 });
        }
    }
}

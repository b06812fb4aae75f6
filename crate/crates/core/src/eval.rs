//! Ranking metrics, user-disjoint splitting, baselines and report output.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::hash::Hash;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.70, 0.15, 0.15);

#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub valid: Vec<T>,
    pub test: Vec<T>,
}

/// Partitions users (sorted, then shuffled by `seed`) into train, valid and
/// test with `floor(r_train·n)`, `floor(r_valid·n)` and the remainder.
/// Items keep their input order inside each part.
pub fn split_by_user<T, K, F>(items: &[T], user_of: F, ratios: (f64, f64, f64), seed: u64) -> Result<Split<T>>
where
    T: Clone,
    K: Ord + Hash + Clone,
    F: Fn(&T) -> K,
{
    let (rt, rv, rs) = ratios;
    if [rt, rv, rs].iter().any(|r| !(*r >= 0.0)) || ((rt + rv + rs) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("split ratios {ratios:?} must be >= 0 and sum to 1")));
    }
    let mut users: Vec<K> = items.iter().map(&user_of).collect::<HashSet<_>>().into_iter().collect();
    if users.len() < 3 {
        return Err(Error::TooFewUsers(users.len()));
    }
    users.sort();
    users.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = users.len() as f64;
    let n_train = (rt * n).floor() as usize;
    let n_valid = (rv * n).floor() as usize;
    let part: HashMap<K, u8> = users
        .into_iter()
        .enumerate()
        .map(|(i, u)| (u, if i < n_train { 0 } else if i < n_train + n_valid { 1 } else { 2 }))
        .collect();
    let mut split = Split {
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
    };
    for it in items {
        match part[&user_of(it)] {
            0 => split.train.push(it.clone()),
            1 => split.valid.push(it.clone()),
            _ => split.test.push(it.clone()),
        }
    }
    Ok(split)
}

/// Users present in more than one part. Empty for any valid split.
pub fn leaked_users<T, K, F>(split: &Split<T>, user_of: F) -> Vec<K>
where
    K: Ord + Hash + Clone,
    F: Fn(&T) -> K,
{
    let sets: [HashSet<K>; 3] = [&split.train, &split.valid, &split.test].map(|p| p.iter().map(&user_of).collect());
    let mut leaked: Vec<K> = sets[0]
        .iter()
        .filter(|u| sets[1].contains(u) || sets[2].contains(u))
        .chain(sets[1].iter().filter(|u| sets[2].contains(u)))
        .cloned()
        .collect();
    leaked.sort();
    leaked.dedup();
    leaked
}

fn hits<T: Eq + Hash>(ranked: &[T], truth: &HashSet<T>, k: usize) -> Result<usize> {
    if truth.is_empty() {
        return Err(Error::EmptyTruth);
    }
    if k == 0 {
        return Err(Error::InvalidConfig("K must be >= 1".into()));
    }
    Ok(ranked.iter().take(k).filter(|x| truth.contains(x)).count())
}

/// `|top-K ∩ truth| / K`.
pub fn precision_at_k<T: Eq + Hash>(ranked: &[T], truth: &HashSet<T>, k: usize) -> Result<f64> {
    Ok(hits(ranked, truth, k)? as f64 / k as f64)
}

/// `|top-K ∩ truth| / |truth|`.
pub fn recall_at_k<T: Eq + Hash>(ranked: &[T], truth: &HashSet<T>, k: usize) -> Result<f64> {
    Ok(hits(ranked, truth, k)? as f64 / truth.len() as f64)
}

/// Binary-relevance NDCG with `log₂(rank + 1)` discounts.
pub fn ndcg_at_k<T: Eq + Hash>(ranked: &[T], truth: &HashSet<T>, k: usize) -> Result<f64> {
    hits(ranked, truth, k)?;
    let gain = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, x)| truth.contains(x))
        .map(|(i, _)| gain(i + 1))
        .sum();
    let idcg: f64 = (1..=k.min(truth.len())).map(gain).sum();
    Ok(dcg / idcg)
}

pub fn reciprocal_rank<T: Eq + Hash>(ranked: &[T], truth: &HashSet<T>) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::EmptyTruth);
    }
    Ok(ranked
        .iter()
        .position(|x| truth.contains(x))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64))
}

pub fn mrr<T: Eq + Hash>(queries: &[(Vec<T>, HashSet<T>)]) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::NoQueries);
    }
    let mut sum = 0.0;
    for (ranked, truth) in queries {
        sum += reciprocal_rank(ranked, truth)?;
    }
    Ok(sum / queries.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "precision@10")]
    pub precision_at_10: f64,
    #[serde(rename = "precision@20")]
    pub precision_at_20: f64,
    #[serde(rename = "recall@10")]
    pub recall_at_10: f64,
    #[serde(rename = "recall@20")]
    pub recall_at_20: f64,
    #[serde(rename = "ndcg@10")]
    pub ndcg_at_10: f64,
    #[serde(rename = "ndcg@20")]
    pub ndcg_at_20: f64,
    pub mrr: f64,
    pub arl_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UserMetrics {
    pub precision_at_10: f64,
    pub precision_at_20: f64,
    pub recall_at_10: f64,
    pub recall_at_20: f64,
    pub ndcg_at_10: f64,
    pub ndcg_at_20: f64,
    pub reciprocal_rank: f64,
}

pub fn user_metrics<T: Eq + Hash>(ranked: &[T], truth: &HashSet<T>) -> Result<UserMetrics> {
    Ok(UserMetrics {
        precision_at_10: precision_at_k(ranked, truth, 10)?,
        precision_at_20: precision_at_k(ranked, truth, 20)?,
        recall_at_10: recall_at_k(ranked, truth, 10)?,
        recall_at_20: recall_at_k(ranked, truth, 20)?,
        ndcg_at_10: ndcg_at_k(ranked, truth, 10)?,
        ndcg_at_20: ndcg_at_k(ranked, truth, 20)?,
        reciprocal_rank: reciprocal_rank(ranked, truth)?,
    })
}

/// Averages per-user metrics in input order. `arl_ms` is left at zero.
pub fn aggregate(per_user: &[UserMetrics]) -> Result<MetricsReport> {
    if per_user.is_empty() {
        return Err(Error::NoQueries);
    }
    let n = per_user.len() as f64;
    let mean = |f: fn(&UserMetrics) -> f64| per_user.iter().map(f).sum::<f64>() / n;
    Ok(MetricsReport {
        precision_at_10: mean(|m| m.precision_at_10),
        precision_at_20: mean(|m| m.precision_at_20),
        recall_at_10: mean(|m| m.recall_at_10),
        recall_at_20: mean(|m| m.recall_at_20),
        ndcg_at_10: mean(|m| m.ndcg_at_10),
        ndcg_at_20: mean(|m| m.ndcg_at_20),
        mrr: mean(|m| m.reciprocal_rank),
        arl_ms: 0.0,
    })
}

pub fn metrics_for<T: Eq + Hash>(queries: &[(Vec<T>, HashSet<T>)]) -> Result<MetricsReport> {
    let per_user = queries
        .iter()
        .map(|(r, t)| user_metrics(r, t))
        .collect::<Result<Vec<_>>>()?;
    aggregate(&per_user)
}

/// Seeded shuffle of `candidates`, independent per `query_key`.
pub fn random_ranking<T: Clone>(candidates: &[T], seed: u64, query_key: u64) -> Vec<T> {
    let mut out = candidates.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ query_key.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    out.shuffle(&mut rng);
    out
}

/// `candidates` ordered by descending click count in `clicked`, ties by
/// ascending id.
pub fn popularity_ranking<T: Clone + Ord + Hash>(candidates: &[T], clicked: impl IntoIterator<Item = T>) -> Vec<T> {
    let mut counts: HashMap<T, usize> = HashMap::new();
    for a in clicked {
        *counts.entry(a).or_default() += 1;
    }
    let mut out = candidates.to_vec();
    out.sort_by(|a, b| {
        let (ca, cb) = (counts.get(a).copied().unwrap_or(0), counts.get(b).copied().unwrap_or(0));
        cb.cmp(&ca).then_with(|| a.cmp(b))
    });
    out
}

/// Evaluation of every ranker on the same test users.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub users: usize,
    pub candidates: usize,
    pub model_retrieval: MetricsReport,
    pub model_reranked: MetricsReport,
    pub popularity: MetricsReport,
    pub random: MetricsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<MetricsReport>,
    pub latency_threshold_ms: f64,
    pub within_threshold: bool,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut rows = vec![
            ("model (retrieval)", &self.model_retrieval),
            ("model (reranked)", &self.model_reranked),
            ("popularity", &self.popularity),
            ("random", &self.random),
        ];
        if let Some(o) = &self.oracle {
            rows.push(("oracle", o));
        }
        let mut out = format!(
            "{:<18} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>9}\n",
            "ranker", "P@10", "P@20", "R@10", "R@20", "NDCG@10", "NDCG@20", "MRR", "ARL(ms)"
        );
        for (name, m) in rows {
            writeln!(
                out,
                "{:<18} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>9.3}",
                name,
                m.precision_at_10,
                m.precision_at_20,
                m.recall_at_10,
                m.recall_at_20,
                m.ndcg_at_10,
                m.ndcg_at_20,
                m.mrr,
                m.arl_ms
            )
            .unwrap();
        }
        writeln!(
            out,
            "{} test users, {} candidate ads, ARL {} {:.3} ms threshold",
            self.users,
            self.candidates,
            if self.within_threshold { "within" } else { "exceeds" },
            self.latency_threshold_ms
        )
        .unwrap();
        out
    }
}

pub fn write_user_csv(path: &Path, rows: &[(String, UserMetrics)]) -> Result<()> {
    let mut out = String::from("user,precision@10,precision@20,recall@10,recall@20,ndcg@10,ndcg@20,rr\n");
    for (u, m) in rows {
        writeln!(
            out,
            "{u},{},{},{},{},{},{},{}",
            m.precision_at_10,
            m.precision_at_20,
            m.recall_at_10,
            m.recall_at_20,
            m.ndcg_at_10,
            m.ndcg_at_20,
            m.reciprocal_rank
        )
        .unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

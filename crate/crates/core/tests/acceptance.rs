//! Release acceptance checks. Prints one PASS/FAIL line per check and exits
//! non-zero if any fails.

use std::collections::HashSet;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use adgraph::datagen::{DatasetBundle, SyntheticConfig};
use adgraph::eval::{self, EvalReport, Split};
use adgraph::gradcheck::{self, GradcheckConfig};
use adgraph::index::{
    exact_search, recall, HnswParams, IvfParams, LatencyMonitor, QueryResult, SearchParams, Structure, VectorIndex,
    VectorStore,
};
use adgraph::model::Model;
use adgraph::pipeline::{self, EvalConfig, GraphDir, IndexConfig};
use adgraph::train::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn outcome(name: &'static str, passed: bool, elapsed: Duration, detail: String) -> Outcome {
    Outcome {
        name,
        passed,
        detail: format!("{detail}; {:.1} s", elapsed.as_secs_f64()),
    }
}

fn report(o: &Outcome) {
    println!("{} {:<22} {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
}

fn gradient_fidelity() -> Outcome {
    let t = Instant::now();
    let cfg = GradcheckConfig::default();
    let mut worst: f64 = 0.0;
    let mut checked: std::collections::BTreeMap<String, usize> = Default::default();
    let mut failures = 0;
    for seed in 0..20 {
        match gradcheck::run(&cfg, seed) {
            Ok(r) => {
                worst = worst.max(r.max_rel_error);
                for b in r.blocks {
                    *checked.entry(b.name).or_default() += b.checked;
                }
            }
            Err(_) => failures += 1,
        }
    }
    let elapsed = t.elapsed();
    let all_blocks = !checked.is_empty() && checked.values().all(|&c| c > 0);
    let passed = failures == 0 && all_blocks && worst < 1e-4 && elapsed < Duration::from_secs(60);
    outcome(
        "gradient_fidelity",
        passed,
        elapsed,
        format!(
            "max rel err {worst:.3e} over 20 seeds (< 1e-4), {} blocks all compared: {all_blocks}",
            checked.len()
        ),
    )
}

// Second implementation with plain loops and vector membership.
mod naive {
    fn member(truth: &[u32], x: u32) -> bool {
        truth.iter().any(|&t| t == x)
    }

    pub fn hits(ranked: &[u32], truth: &[u32], k: usize) -> f64 {
        let mut n = 0.0;
        for i in 0..k.min(ranked.len()) {
            if member(truth, ranked[i]) {
                n += 1.0;
            }
        }
        n
    }

    pub fn precision(ranked: &[u32], truth: &[u32], k: usize) -> f64 {
        hits(ranked, truth, k) / k as f64
    }

    pub fn recall(ranked: &[u32], truth: &[u32], k: usize) -> f64 {
        hits(ranked, truth, k) / truth.len() as f64
    }

    pub fn ndcg(ranked: &[u32], truth: &[u32], k: usize) -> f64 {
        let mut dcg = 0.0;
        for i in 0..k.min(ranked.len()) {
            if member(truth, ranked[i]) {
                dcg += 1.0 / ((i + 2) as f64).log2();
            }
        }
        let mut idcg = 0.0;
        for i in 0..k.min(truth.len()) {
            idcg += 1.0 / ((i + 2) as f64).log2();
        }
        dcg / idcg
    }

    pub fn rr(ranked: &[u32], truth: &[u32]) -> f64 {
        for (i, &x) in ranked.iter().enumerate() {
            if member(truth, x) {
                return 1.0 / (i + 1) as f64;
            }
        }
        0.0
    }
}

fn metric_oracle() -> Outcome {
    let t = Instant::now();
    let set = |v: &[u32]| v.iter().copied().collect::<HashSet<u32>>();
    let mut worst: f64 = 0.0;
    let mut note = |a: f64, b: f64| worst = worst.max((a - b).abs());

    let hand = [
        precision_at(&[2, 1], &[1], 2) - 0.5,
        eval::recall_at_k(&[2, 1], &set(&[1]), 2).unwrap() - 1.0,
        eval::ndcg_at_k(&[2, 1], &set(&[1]), 2).unwrap() - 0.63093,
    ];
    let hand_ok = hand[0] == 0.0 && hand[1] == 0.0 && hand[2].abs() < 1e-5;

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut queries = Vec::new();
    for _ in 0..1000 {
        let pool = rng.random_range(1..60u32);
        let mut ranked: Vec<u32> = (0..pool).collect();
        for i in (1..ranked.len()).rev() {
            ranked.swap(i, rng.random_range(0..=i));
        }
        ranked.truncate(rng.random_range(1..=ranked.len()));
        let truth: Vec<u32> = {
            let mut t: Vec<u32> = (0..60).filter(|_| rng.random_bool(0.15)).collect();
            if t.is_empty() {
                t.push(rng.random_range(0..60));
            }
            t
        };
        let k = [1, 2, 5, 10, 20, 50][rng.random_range(0..6)];
        let ts = set(&truth);
        note(eval::precision_at_k(&ranked, &ts, k).unwrap(), naive::precision(&ranked, &truth, k));
        note(eval::recall_at_k(&ranked, &ts, k).unwrap(), naive::recall(&ranked, &truth, k));
        note(eval::ndcg_at_k(&ranked, &ts, k).unwrap(), naive::ndcg(&ranked, &truth, k));
        note(eval::reciprocal_rank(&ranked, &ts).unwrap(), naive::rr(&ranked, &truth));
        queries.push((ranked, truth));
    }
    let with_sets: Vec<(Vec<u32>, HashSet<u32>)> = queries.iter().map(|(r, t)| (r.clone(), set(t))).collect();
    let naive_mrr = queries.iter().map(|(r, t)| naive::rr(r, t)).sum::<f64>() / queries.len() as f64;
    note(eval::mrr(&with_sets).unwrap(), naive_mrr);

    let passed = hand_ok && worst < 1e-12;
    outcome(
        "metric_oracle",
        passed,
        t.elapsed(),
        format!("max |diff| {worst:.2e} over 1000 fixtures (< 1e-12), hand cases ok: {hand_ok}"),
    )
}

fn precision_at(ranked: &[u32], truth: &[u32], k: usize) -> f64 {
    eval::precision_at_k(ranked, &truth.iter().copied().collect(), k).unwrap()
}

fn gaussian_store(n: usize, dim: usize, seed: u64) -> VectorStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    VectorStore::from_rows(dim, data).unwrap()
}

/// `x = A z + 0.1 ε` with `z ∈ R¹⁶`: points near a 16-dimensional subspace.
fn low_rank_store(n: usize, seed: u64) -> VectorStore {
    const DIM: usize = 64;
    const RANK: usize = 16;
    let mut basis_rng = ChaCha8Rng::seed_from_u64(99);
    let a: Vec<f32> = (0..DIM * RANK).map(|_| StandardNormal.sample(&mut basis_rng)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * DIM);
    for _ in 0..n {
        let z: Vec<f32> = (0..RANK).map(|_| StandardNormal.sample(&mut rng)).collect();
        for j in 0..DIM {
            let e: f32 = StandardNormal.sample(&mut rng);
            data.push((0..RANK).map(|i| a[j * RANK + i] * z[i]).sum::<f32>() + 0.1 * e);
        }
    }
    VectorStore::from_rows(DIM, data).unwrap()
}

fn mean_recall(index: &VectorIndex, queries: &VectorStore, truth: &[QueryResult], p: &SearchParams) -> f64 {
    (0..queries.len() as u32)
        .map(|i| recall(&index.search(queries.vector(i), p).unwrap(), &truth[i as usize]))
        .sum::<f64>()
        / queries.len() as f64
}

fn hnsw_audit(index: &VectorIndex) -> bool {
    match &index.structure {
        Structure::Hnsw(h) => h.audit().passed(),
        _ => true,
    }
}

/// Same hits for `n` stored-vector queries before and after a byte round trip.
fn round_trips(index: &VectorIndex, n: u32) -> bool {
    let Ok(back) = index.to_bytes().and_then(|b| VectorIndex::from_bytes(&b)) else {
        return false;
    };
    let p = SearchParams {
        k: 10,
        ef_search: 64,
        nprobe: 4,
    };
    (0..n.min(index.store.len() as u32)).all(|i| {
        let q: Vec<f32> = index.store.vector(i).iter().map(|x| x + 0.01).collect();
        back.search(&q, &p).unwrap() == index.search(&q, &p).unwrap()
    })
}

struct AnnFixture {
    hnsw: VectorIndex,
    ivf: VectorIndex,
}

fn ann_recall() -> (Outcome, AnnFixture) {
    let t = Instant::now();
    let store = gaussian_store(10_000, 64, 1);
    let queries = gaussian_store(100, 64, 2);
    let truth: Vec<QueryResult> = (0..100u32)
        .map(|i| exact_search(&store, queries.vector(i), 10).unwrap())
        .collect();
    let hnsw = VectorIndex::hnsw(
        store.clone(),
        HnswParams {
            m: 16,
            ef_construction: 200,
            seed: 42,
        },
    )
    .unwrap();
    let ivf = VectorIndex::ivf(
        store.clone(),
        IvfParams {
            nlist: 64,
            kmeans_iters: 20,
            seed: 42,
        },
    )
    .unwrap();
    let hr = mean_recall(&hnsw, &queries, &truth, &SearchParams { k: 10, ef_search: 64, nprobe: 1 });
    let ir = mean_recall(&ivf, &queries, &truth, &SearchParams { k: 10, ef_search: 10, nprobe: 8 });

    let single = VectorIndex::ivf(
        store,
        IvfParams {
            nlist: 1,
            kmeans_iters: 1,
            seed: 42,
        },
    )
    .unwrap();
    let degenerate = (0..100u32).all(|i| {
        let q = queries.vector(i);
        let full = SearchParams { k: 10, ef_search: 10, nprobe: 64 };
        let one = SearchParams { k: 10, ef_search: 10, nprobe: 1 };
        ivf.search(q, &full).unwrap() == truth[i as usize] && single.search(q, &one).unwrap() == truth[i as usize]
    });
    let elapsed = t.elapsed();
    let passed = hr >= 0.95 && ir >= 0.90 && degenerate && elapsed < Duration::from_secs(120);
    let o = outcome(
        "ann_recall",
        passed,
        elapsed,
        format!(
            "10k i.i.d. N(0,1) 64-d: HNSW recall@10 {hr:.3} (>= 0.95), IVF recall@10 {ir:.3} (>= 0.90), \
             nprobe=nlist and nlist=1 exact: {degenerate}"
        ),
    );
    (o, AnnFixture { hnsw, ivf })
}

fn retrieval_speed() -> (Outcome, VectorIndex) {
    let t = Instant::now();
    let store = low_rank_store(100_000, 3);
    let queries = low_rank_store(100, 4);
    let index = VectorIndex::hnsw(store.clone(), HnswParams::default()).unwrap();

    let mut exact_us = Vec::new();
    let mut truth = Vec::new();
    for i in 0..100u32 {
        let t0 = Instant::now();
        truth.push(exact_search(&store, queries.vector(i), 10).unwrap());
        exact_us.push(t0.elapsed().as_secs_f64() * 1e6);
    }
    let p = SearchParams {
        k: 10,
        ef_search: 64,
        nprobe: 1,
    };
    let mut monitor = LatencyMonitor::new(0);
    let mut found = Vec::new();
    for i in 0..100u32 {
        let t0 = Instant::now();
        found.push(index.search(queries.vector(i), &p).unwrap());
        monitor.record(t0.elapsed());
    }
    let r = found.iter().zip(&truth).map(|(f, e)| recall(f, e)).sum::<f64>() / 100.0;
    let hnsw_mean = monitor.samples().iter().sum::<u64>() as f64 / 100.0;
    let exact_mean = exact_us.iter().sum::<f64>() / 100.0;
    let ratio = hnsw_mean / exact_mean;

    let threshold_ok = [0u64, hnsw_mean.floor() as u64, hnsw_mean.ceil() as u64 + 1, 1_000_000]
        .into_iter()
        .all(|tau| {
            let mut m = LatencyMonitor::new(tau);
            for &s in monitor.samples() {
                m.record_us(s);
            }
            let rep = m.report().unwrap();
            rep.within_threshold == (rep.avg_us < tau as f64)
        });
    let elapsed = t.elapsed();
    let passed = r >= 0.95 && ratio < 0.5 && threshold_ok && elapsed < Duration::from_secs(300);
    let o = outcome(
        "retrieval_speed",
        passed,
        elapsed,
        format!(
            "100k low-rank 64-d: HNSW {hnsw_mean:.0} us vs exact {exact_mean:.0} us (ratio {ratio:.3} < 0.5) \
             at recall@10 {r:.3} (>= 0.95), within_threshold correct: {threshold_ok}"
        ),
    );
    (o, index)
}

struct Run {
    loss_csv: String,
    model: Vec<u8>,
    report: EvalReport,
    bundle: DatasetBundle,
    graph: GraphDir,
    model_path: std::path::PathBuf,
    index_path: std::path::PathBuf,
    report_path: std::path::PathBuf,
    elapsed: Duration,
}

fn pipeline_run(root: &Path) -> adgraph::Result<Run> {
    let t = Instant::now();
    let bundle = pipeline::gen_data(&SyntheticConfig::default(), &root.join("data"), true)?;
    let graph = pipeline::build_kg(&bundle, &root.join("kg"), 42)?;
    let model_dir = root.join("model");
    pipeline::train_stage(&graph, &TrainConfig::default(), &model_dir, |_| {})?;
    let model_path = model_dir.join(pipeline::MODEL_FILE);
    let index_path = root.join(pipeline::INDEX_FILE);
    pipeline::index_stage(&graph, &model_path, &IndexConfig::default(), &index_path)?;
    let ev = pipeline::eval_stage(&graph, &model_path, &index_path, &EvalConfig::default())?;
    let report_path = root.join(pipeline::REPORT_FILE);
    std::fs::write(&report_path, ev.report.to_json()).unwrap();
    Ok(Run {
        loss_csv: std::fs::read_to_string(model_dir.join(pipeline::LOSS_FILE)).unwrap(),
        model: std::fs::read(&model_path).unwrap(),
        report: ev.report,
        bundle,
        graph,
        model_path,
        index_path,
        report_path,
        elapsed: t.elapsed(),
    })
}

fn parse_curve(csv: &str) -> Option<Vec<(f64, f64)>> {
    csv.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            Some((f.get(1)?.parse().ok()?, f.get(2)?.parse().ok()?))
        })
        .collect()
}

fn learning_signal(run: &adgraph::Result<Run>) -> Outcome {
    let Ok(run) = run else {
        return outcome("learning_signal", false, Duration::ZERO, format!("pipeline error: {}", run.as_ref().err().unwrap()));
    };
    let curve = parse_curve(&run.loss_csv).unwrap_or_default();
    let (Some(first), Some(last)) = (curve.first(), curve.last()) else {
        return outcome("learning_signal", false, run.elapsed, "empty loss curve".into());
    };
    let finite = curve.iter().all(|(a, b)| a.is_finite() && b.is_finite());
    let ratio = last.0 / first.0;
    let passed = finite && ratio < 0.5 && last.1 < first.1 && run.elapsed < Duration::from_secs(600);
    outcome(
        "learning_signal",
        passed,
        run.elapsed,
        format!(
            "train {:.4} -> {:.4} (ratio {ratio:.3} < 0.5), test {:.4} -> {:.4}, all finite: {finite}",
            first.0, last.0, first.1, last.1
        ),
    )
}

fn effectiveness(run: &adgraph::Result<Run>) -> Outcome {
    let Ok(run) = run else {
        return outcome("effectiveness", false, Duration::ZERO, "pipeline failed".into());
    };
    let r = &run.report;
    let model = r.model_reranked.ndcg_at_10;
    let pop = r.popularity.ndcg_at_10;
    let rnd = r.random.ndcg_at_10;
    let oracle = r.oracle.map_or(f64::NAN, |o| o.ndcg_at_10);
    let passed = model >= 1.2 * pop && model >= 5.0 * rnd && oracle >= 0.8 && run.elapsed < Duration::from_secs(900);
    outcome(
        "effectiveness",
        passed,
        run.elapsed,
        format!(
            "NDCG@10 model {model:.4}, popularity {pop:.4} ({:.2}x >= 1.2), random {rnd:.4} ({:.1}x >= 5), oracle {oracle:.3} (>= 0.8)",
            model / pop,
            model / rnd
        ),
    )
}

fn structural_audits(ann: &AnnFixture, large: &VectorIndex, run: &adgraph::Result<Run>) -> Outcome {
    let t = Instant::now();
    let hnsw_ok = hnsw_audit(&ann.hnsw) && hnsw_audit(large);
    let snapshots_ok = round_trips(&ann.hnsw, 100) && round_trips(&ann.ivf, 100);
    let (files_ok, leaked) = match run {
        Ok(run) => {
            let bundle_ok = run.bundle.load().is_ok() && run.bundle.latent().is_ok();
            let checksums_ok = run.bundle.manifest().is_ok_and(|m| {
                m.checksums.iter().all(|(file, sum)| {
                    std::fs::read(run.bundle.path(file))
                        .is_ok_and(|b| format!("{:08x}", crc32fast::hash(&b)) == *sum)
                })
            });
            let prepared = run.graph.load();
            let model_ok = Model::load(&run.model_path).is_ok();
            let index = VectorIndex::load(&run.index_path);
            let index_ok = index.as_ref().is_ok_and(|i| hnsw_audit(i) && round_trips(i, 100));
            let report_ok = std::fs::read_to_string(&run.report_path)
                .ok()
                .and_then(|s| serde_json::from_str::<serde_json::Value>(&s).ok())
                .is_some();
            let curve_ok = parse_curve(&run.loss_csv).is_some();
            let leaked = prepared.as_ref().map_or(usize::MAX, |p| {
                let split = Split {
                    train: p.train.clone(),
                    valid: p.valid.clone(),
                    test: p.test.clone(),
                };
                eval::leaked_users(&split, |r| r.user).len() + p.leakage().len()
            });
            (
                bundle_ok && checksums_ok && prepared.is_ok() && model_ok && index_ok && report_ok && curve_ok,
                leaked,
            )
        }
        Err(_) => (false, usize::MAX),
    };
    let passed = hnsw_ok && snapshots_ok && files_ok && leaked == 0;
    outcome(
        "structural_audits",
        passed,
        t.elapsed(),
        format!(
            "HNSW audits: {hnsw_ok}, snapshot round trips (100 queries): {snapshots_ok}, \
             generated files re-parse: {files_ok}, leaked users: {leaked}"
        ),
    )
}

/// ARL is wall-clock time, so it is zeroed before comparing reports.
fn without_latency(r: &EvalReport) -> String {
    let mut r = r.clone();
    r.model_retrieval.arl_ms = 0.0;
    r.model_reranked.arl_ms = 0.0;
    r.to_json()
}

fn determinism(a: &adgraph::Result<Run>, b: &adgraph::Result<Run>) -> Outcome {
    let (Ok(a), Ok(b)) = (a, b) else {
        return outcome("determinism", false, Duration::ZERO, "pipeline failed".into());
    };
    let csv = a.loss_csv == b.loss_csv;
    let model = a.model == b.model;
    let report = without_latency(&a.report) == without_latency(&b.report);
    outcome(
        "determinism",
        csv && model && report,
        a.elapsed + b.elapsed,
        format!("identical loss CSV: {csv}, model snapshot: {model}, metrics report: {report}"),
    )
}

fn main() -> ExitCode {
    let mut all = Vec::new();
    let mut emit = |o: Outcome| {
        report(&o);
        all.push(o.passed);
    };
    emit(gradient_fidelity());
    emit(metric_oracle());
    let (o, ann) = ann_recall();
    emit(o);
    let (o, large) = retrieval_speed();
    emit(o);

    let dirs = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = pipeline_run(dirs.0.path());
    emit(learning_signal(&first));
    emit(effectiveness(&first));
    emit(structural_audits(&ann, &large, &first));
    let second = pipeline_run(dirs.1.path());
    emit(determinism(&first, &second));

    let failed = all.iter().filter(|p| !**p).count();
    println!("{} of {} acceptance checks passed", all.len() - failed, all.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

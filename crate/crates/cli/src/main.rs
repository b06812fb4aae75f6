use std::path::PathBuf;
use std::process::ExitCode;

use adgraph::datagen::{DatasetBundle, SyntheticConfig};
use adgraph::eval;
use adgraph::gradcheck::{self, GradcheckConfig};
use adgraph::index::{IndexKind, SearchParams, VectorIndex};
use adgraph::model::Model;
use adgraph::pipeline::{self, EvalConfig, GraphDir, IndexConfig, Recommender};
use adgraph::train::TrainConfig;
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adgraph", version, about = "Knowledge-graph ad recommendation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset bundle
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the latent topic mixtures (enables the oracle ranker)
        #[arg(long)]
        debug_latent: bool,
    },
    /// Split interactions by user and build the training graph
    BuildKg {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Split seed
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Train the model; writes model.kgsr and loss.csv
    Train {
        #[arg(long)]
        kg: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Index the fused ad vectors
    Index {
        #[arg(long)]
        kg: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "hnsw")]
        index_kind: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Top-k ads for a user id or a raw vector, as TSV
    Query {
        #[command(flatten)]
        artifacts: Artifacts,
        #[arg(long, conflicts_with = "vector", required_unless_present = "vector")]
        user: Option<String>,
        /// Comma-separated floats
        #[arg(long)]
        vector: Option<String>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[command(flatten)]
        search: SearchFlags,
        #[arg(long)]
        json: bool,
    },
    /// Evaluate against the test split and the baselines
    Eval {
        #[command(flatten)]
        artifacts: Artifacts,
        #[command(flatten)]
        search: SearchFlags,
        /// Ads retrieved per user before reranking
        #[arg(long, default_value_t = pipeline::RETRIEVE_DEPTH)]
        k: usize,
        #[arg(long, default_value_t = 50.0)]
        latency_threshold_ms: f64,
        /// Write the report JSON here as well
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-user metrics CSV
        #[arg(long)]
        per_user: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Finite-difference check of the analytic gradients
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of consecutive seeds to check
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct Artifacts {
    #[arg(long)]
    kg: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    index: PathBuf,
}

#[derive(Args)]
struct SearchFlags {
    #[arg(long, default_value_t = 128)]
    ef_search: usize,
    #[arg(long, default_value_t = 8)]
    nprobe: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            let kind = e.downcast_ref::<adgraph::Error>().map_or("Error", |e| e.kind());
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {kind}: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::GenData {
            config,
            seed,
            out,
            debug_latent,
        } => {
            let mut cfg = match config {
                Some(p) => SyntheticConfig::load(&p)?,
                None => SyntheticConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let bundle = pipeline::gen_data(&cfg, &out, debug_latent)?;
            let m = bundle.manifest()?;
            println!(
                "wrote {} entities, {} triples, {} interactions to {}",
                m.counts.entities,
                m.counts.triples,
                m.counts.interactions,
                out.display()
            );
        }
        Command::BuildKg { data, out, seed } => {
            let dir = pipeline::build_kg(&DatasetBundle::new(&data), &out, seed)?;
            let p = dir.load()?;
            println!(
                "graph: {} entities, {} triples; split: {} train / {} valid / {} test interactions",
                p.graph.entity_count(),
                p.graph.triple_count(),
                p.train.len(),
                p.valid.len(),
                p.test.len()
            );
        }
        Command::Train { kg, config, seed, out } => {
            let mut cfg = match config {
                Some(p) => TrainConfig::load(&p)?,
                None => TrainConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let trained = pipeline::train_stage(&GraphDir::new(&kg), &cfg, &out, |p| {
                eprintln!("epoch {:>3}  train {:.5}  test {:.5}", p.epoch, p.train_loss, p.test_loss);
            })?;
            let last = trained.curve.points.last().context("empty loss curve")?;
            println!(
                "wrote {} and {} (final train {:.5}, test {:.5})",
                out.join(pipeline::MODEL_FILE).display(),
                out.join(pipeline::LOSS_FILE).display(),
                last.train_loss,
                last.test_loss
            );
        }
        Command::Index {
            kg,
            model,
            index_kind,
            seed,
            out,
        } => {
            let mut cfg = IndexConfig {
                kind: index_kind.parse::<IndexKind>()?,
                ..IndexConfig::default()
            };
            if let Some(s) = seed {
                cfg.hnsw.seed = s;
                cfg.ivf.seed = s;
            }
            let index = pipeline::index_stage(&GraphDir::new(&kg), &model, &cfg, &out)?;
            println!(
                "indexed {} ads ({}, d={}) into {}",
                index.store.len(),
                index.kind().as_str(),
                index.store.dim(),
                out.display()
            );
        }
        Command::Query {
            artifacts,
            user,
            vector,
            k,
            search,
            json,
        } => query(&artifacts, user, vector, k, &search, json)?,
        Command::Eval {
            artifacts,
            search,
            k,
            latency_threshold_ms,
            out,
            per_user,
            json,
        } => {
            let cfg = EvalConfig {
                search: SearchParams {
                    k,
                    ef_search: search.ef_search.max(k),
                    nprobe: search.nprobe,
                },
                latency_threshold_ms,
                ..EvalConfig::default()
            };
            let ev = pipeline::eval_stage(&GraphDir::new(&artifacts.kg), &artifacts.model, &artifacts.index, &cfg)?;
            if let Some(p) = out {
                std::fs::write(&p, ev.report.to_json() + "\n").with_context(|| p.display().to_string())?;
            }
            if let Some(p) = per_user {
                eval::write_user_csv(&p, &ev.per_user)?;
            }
            if json {
                println!("{}", ev.report.to_json());
            } else {
                print!("{}", ev.report.to_table());
            }
        }
        Command::Gradcheck { seed, seeds, json } => {
            let cfg = GradcheckConfig::default();
            let mut worst: f64 = 0.0;
            let mut passed = true;
            for s in seed..seed + seeds.max(1) {
                let r = gradcheck::run(&cfg, s)?;
                worst = worst.max(r.max_rel_error);
                passed &= r.passed;
                if json {
                    println!("{}", serde_json::to_string(&r)?);
                } else {
                    for b in &r.blocks {
                        println!(
                            "seed {s:>3}  {:<20} checked {:>4}  skipped {:>3}  max rel err {:.3e}",
                            b.name, b.checked, b.skipped, b.max_rel_error
                        );
                    }
                }
            }
            println!(
                "max relative error {worst:.3e} (tolerance {:.0e}): {}",
                cfg.tolerance,
                if passed { "PASS" } else { "FAIL" }
            );
            if !passed {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn query(
    artifacts: &Artifacts,
    user: Option<String>,
    vector: Option<String>,
    k: usize,
    search: &SearchFlags,
    json: bool,
) -> Result<()> {
    let index = VectorIndex::load(&artifacts.index)?;
    let params = SearchParams {
        k,
        ef_search: search.ef_search.max(k),
        nprobe: search.nprobe,
    };
    let recs = match (user, vector) {
        (Some(u), _) => {
            let prepared = GraphDir::new(&artifacts.kg).load()?;
            let id = prepared.graph.lookup(&u)?;
            if prepared.graph.entity(id).kind != adgraph::kg::EntityKind::User {
                return Err(adgraph::Error::UnknownEntity(format!("{u} (not a user)")).into());
            }
            let model = Model::load(&artifacts.model)?;
            let emb = model.embed(&prepared.context(model.config.vocab_size)?)?;
            let rec = Recommender {
                graph: &prepared.graph,
                model: &model,
                embeddings: &emb,
                index: &index,
                search: params,
            };
            Recommender::rerank(rec.retrieve(id)?)
        }
        (None, Some(v)) => {
            let q = parse_vector(&v)?;
            index
                .search(&q, &params)?
                .hits
                .iter()
                .map(|h| pipeline::Recommendation {
                    ad: index.store.id(h.row).to_string(),
                    distance: h.distance,
                    score: f64::NAN,
                })
                .collect()
        }
        (None, None) => bail!("either --user or --vector is required"),
    };
    if json {
        let rows: Vec<_> = recs
            .iter()
            .map(|r| serde_json::json!({"ad": r.ad, "distance": r.distance, "score": finite(r.score)}))
            .collect();
        println!("{}", serde_json::Value::Array(rows));
    } else {
        println!("rank\tad\tdistance\tscore");
        for (i, r) in recs.iter().enumerate() {
            println!("{}\t{}\t{:.6}\t{:.6}", i + 1, r.ad, r.distance, r.score);
        }
    }
    Ok(())
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn parse_vector(s: &str) -> Result<Vec<f32>> {
    s.split(',')
        .map(|x| x.trim().parse::<f32>().with_context(|| format!("bad vector component `{x}`")))
        .collect()
}

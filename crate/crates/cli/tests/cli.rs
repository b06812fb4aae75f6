use std::path::Path;
use std::process::{Command, Output};

fn adgraph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adgraph"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn at(root: &Path, rel: &str) -> String {
    root.join(rel).to_str().unwrap().to_string()
}

fn run(args: &[String]) -> Output {
    adgraph(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

const DATA_CONFIG: &str = "\
n_users = 100
n_ads = 60
n_products = 20
n_categories = 5
n_interactions = 2000
n_latent_topics = 4
vocab_size = 512
";

const TRAIN_CONFIG: &str = "\
epochs = 3
batch_size = 256
kg_dim = 8
sem_dim = 8
hidden_dim = 8
vocab_size = 512
gat_layers = 2
";

/// Runs gen-data, build-kg, train and index into `root`.
fn build(root: &Path) {
    std::fs::write(root.join("data.toml"), DATA_CONFIG).unwrap();
    std::fs::write(root.join("train.toml"), TRAIN_CONFIG).unwrap();
    let r = |rel: &str| at(root, rel);
    let steps = [
        vec!["gen-data".into(), "--config".into(), r("data.toml"), "--out".into(), r("data"), "--debug-latent".into()],
        vec!["build-kg".into(), "--data".into(), r("data"), "--out".into(), r("kg")],
        vec!["train".into(), "--kg".into(), r("kg"), "--config".into(), r("train.toml"), "--out".into(), r("model")],
        vec!["index".into(), "--kg".into(), r("kg"), "--model".into(), r("model/model.kgsr"), "--out".into(), r("ads.kgsi")],
    ];
    for args in steps {
        let o = run(&args);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    }
}

/// `command` followed by the artifact flags and `rest`.
fn with_artifacts(root: &Path, command: &str, rest: &[&str]) -> Vec<String> {
    let mut v = vec![command.to_string()];
    for (flag, rel) in [("--kg", "kg"), ("--model", "model/model.kgsr"), ("--index", "ads.kgsi")] {
        v.push(flag.into());
        v.push(at(root, rel));
    }
    v.extend(strings(rest));
    v
}

#[test]
fn gradcheck_passes_and_reports_error() {
    let o = adgraph(&["gradcheck", "--seeds", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("max relative error"), "{out}");
    assert!(out.trim_end().ends_with("PASS"));
}

#[test]
fn end_to_end_query_and_eval() {
    let root = tempfile::tempdir().unwrap();
    build(root.path());

    let o = run(&with_artifacts(root.path(), "query", &["--user", "u00000", "--k", "5"]));
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines[0], "rank\tad\tdistance\tscore");
    assert_eq!(lines.len(), 6);

    let o = run(&with_artifacts(root.path(), "eval", &["--json"]));
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert!(report["model_reranked"]["ndcg@10"].is_number());
    assert!(report["oracle"].is_object());
}

#[test]
fn unknown_user_is_reported() {
    let root = tempfile::tempdir().unwrap();
    build(root.path());
    let o = run(&with_artifacts(root.path(), "query", &["--user", "nobody"]));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("UnknownEntity"), "{}", stderr(&o));
}

#[test]
fn missing_input_fails_cleanly() {
    let root = tempfile::tempdir().unwrap();
    let o = run(&strings(&["build-kg", "--data", &at(root.path(), "absent"), "--out", &at(root.path(), "kg")]));
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error: "));
}

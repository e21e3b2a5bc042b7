use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const FILTER: &str = r#"SELECT * FROM synth WHERE AI.IF("is it positive? ", text)"#;

fn sample(file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/sample").join(file)
}

fn proxyq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_proxyq")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn run_sample(report: &Path, extra: &[&str]) -> Output {
    let (table, emb, gold) = (sample("table.jsonl"), sample("embeddings.jsonl"), sample("gold.jsonl"));
    let mut args = vec![
        "run",
        "--query",
        FILTER,
        "--table",
        table.to_str().unwrap(),
        "--embeddings",
        emb.to_str().unwrap(),
        "--gold",
        gold.to_str().unwrap(),
        "--oracle",
        "mock:noise=0.02,seed=3",
        "--report",
        report.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    proxyq(&args)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn run_on_bundled_sample_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let out = run_sample(&report, &["--sample", "random:n=300", "--seed", "5"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let r = json(&report);
    assert_eq!(r["mode"], "filter");
    assert_eq!(r["config"]["seed"], 5);
    assert!(r["tool"].as_str().unwrap().starts_with("proxyq "));
    let c = &r["ledger"]["counts"];
    let total = c["oracle_label_calls"].as_u64().unwrap()
        + c["oracle_fallback_calls"].as_u64().unwrap()
        + c["proxy_predictions"].as_u64().unwrap();
    assert_eq!(total, 1000);
    assert!(stderr(&out).contains("Proxy"));
}

#[test]
fn repeated_seed_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    assert!(run_sample(&a, &["--seed", "9", "--workers", "1"]).status.success());
    assert!(run_sample(&b, &["--seed", "9", "--workers", "4"]).status.success());
    let (ja, jb) = (json(&a), json(&b));
    assert_eq!(ja["outputs"], jb["outputs"]);
    let c = dir.path().join("c.json");
    assert!(run_sample(&c, &["--seed", "9", "--workers", "1"]).status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn config_file_is_merged_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let config = sample("config.json");
    let out = run_sample(&report, &["--config", config.to_str().unwrap(), "--tau", "0.2"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let r = json(&report);
    assert_eq!(r["config"]["workers"], 4);
    assert_eq!(r["config"]["sample"]["n"], 300);
    assert_eq!(r["config"]["tau"], 0.2);
}

#[test]
fn explain_prints_the_plan_without_running() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let out = run_sample(&report, &["--explain"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let plan: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(plan["plan"]["semantic_ops"][0]["kind"], "IF");
    assert!(!report.exists());

    let out = proxyq(&["explain", "--query", r#"SELECT AI.RANK("r", text) FROM corpus LIMIT 5"#]);
    assert!(out.status.success());
    let plan: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(plan["limit"], 5);
}

#[test]
fn require_proxy_exits_2_on_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("flat");
    let out = proxyq(&["synth", "--rows", "800", "--separation", "0", "--out", data.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = dir.path().join("r.json");
    let out = proxyq(&[
        "run",
        "--query",
        FILTER,
        "--table",
        data.join("table.jsonl").to_str().unwrap(),
        "--embeddings",
        data.join("embeddings.jsonl").to_str().unwrap(),
        "--gold",
        data.join("gold.jsonl").to_str().unwrap(),
        "--sample",
        "random:n=200",
        "--require-proxy",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert_eq!(json(&report)["operators"][0]["decision"]["chosen"], "llm");
}

#[test]
fn errors_exit_1() {
    let out = proxyq(&["run", "--query", "SELEC * FROM t", "--table", "t.jsonl", "--embeddings", "e.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("query grammar"), "{}", stderr(&out));

    let out = proxyq(&["run", "--table", "t.jsonl"]);
    assert_eq!(out.status.code(), Some(1));

    let table = sample("table.jsonl");
    let out = proxyq(&["run", "--query", FILTER, "--table", table.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--embeddings"));
}

#[test]
fn mock_embeddings_on_the_fly() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let (table, gold) = (sample("table.jsonl"), sample("gold.jsonl"));
    let out = proxyq(&[
        "run",
        "--query",
        FILTER,
        "--table",
        table.to_str().unwrap(),
        "--embed",
        "mock:dim=32,seed=1",
        "--gold",
        gold.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let c = &json(&report)["ledger"]["counts"];
    assert_eq!(c["embed_texts"], 1000);
    assert_eq!(c["embed_calls"], 50);
}

#[test]
fn synth_matches_requested_ratio_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = proxyq(&["synth", "--rows", "20000", "--ratio", "11.61", "--seed", "4", "--out", d.to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    for f in ["table.jsonl", "embeddings.jsonl", "gold.jsonl", "spec.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let gold = fs::read_to_string(a.join("gold.jsonl")).unwrap();
    let positives = gold.lines().filter(|l| l.contains(r#""label":1"#)).count() as f64;
    let ratio = (20_000.0 - positives) / positives;
    assert!((ratio / 11.61 - 1.0).abs() <= 0.01, "ratio {ratio}");

    let out = proxyq(&["synth", "--rows", "0", "--out", dir.path().join("c").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn rank_and_classify_from_synthetic_data() {
    let dir = tempfile::tempdir().unwrap();
    let r = dir.path().join("rank");
    let out = proxyq(&["synth", "--mode", "rank", "--queries", "3", "--corpus", "1500", "--relevant", "40", "--out", r.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = dir.path().join("rank.json");
    let out = proxyq(&[
        "rank",
        "--query",
        r#"SELECT AI.RANK("relevance to: ", text) FROM corpus LIMIT 10"#,
        "--table",
        r.join("table.jsonl").to_str().unwrap(),
        "--embeddings",
        r.join("embeddings.jsonl").to_str().unwrap(),
        "--queries",
        r.join("queries.jsonl").to_str().unwrap(),
        "--query-embeddings",
        r.join("query_embeddings.jsonl").to_str().unwrap(),
        "--gold",
        r.join("gold.jsonl").to_str().unwrap(),
        "--prefilter",
        "topk:k=300",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rep = json(&report);
    assert_eq!(rep["outputs"]["rankings"].as_array().unwrap().len(), 3);
    assert_eq!(rep["config"]["prefilter_k"], 300);

    let out = proxyq(&["eval", "--report", report.to_str().unwrap(), "--gold", r.join("gold.jsonl").to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let ev: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let mean = ev["mean_ndcg10"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&mean));

    let c = dir.path().join("cls");
    let out = proxyq(&["synth", "--mode", "classify", "--classes", "3", "--rows", "1500", "--separation", "6", "--out", c.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = dir.path().join("cls.json");
    let out = proxyq(&[
        "classify",
        "--query",
        r#"SELECT id, AI.CLASSIFY("topic of: ", text, ['a', 'b', 'c']) FROM synth"#,
        "--table",
        c.join("table.jsonl").to_str().unwrap(),
        "--embeddings",
        c.join("embeddings.jsonl").to_str().unwrap(),
        "--gold",
        c.join("gold.jsonl").to_str().unwrap(),
        "--gate-metric",
        "macro_f1",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rep = json(&report);
    assert_eq!(rep["mode"], "classify");
    assert_eq!(rep["categories"].as_array().unwrap().len(), 3);
}

#[test]
fn offline_model_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m/model.json");
    let (table, emb, gold) = (sample("table.jsonl"), sample("embeddings.jsonl"), sample("gold.jsonl"));
    let common = [
        "--query",
        FILTER,
        "--table",
        table.to_str().unwrap(),
        "--embeddings",
        emb.to_str().unwrap(),
        "--gold",
        gold.to_str().unwrap(),
    ];
    let train_report = dir.path().join("t.json");
    let mut args = vec!["train-offline", "--model", model.to_str().unwrap(), "--report", train_report.to_str().unwrap()];
    args.extend_from_slice(&common);
    let out = proxyq(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(model.exists());

    let served = dir.path().join("s.json");
    let mut args = vec!["run", "--model", model.to_str().unwrap(), "--report", served.to_str().unwrap()];
    args.extend_from_slice(&common);
    let out = proxyq(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    let r = json(&served);
    assert_eq!(r["mode"], "offline");
    assert_eq!(r["ledger"]["counts"]["proxy_predictions"], 1000);
    assert_eq!(r["ledger"]["counts"]["oracle_label_calls"], 0);
}

#[test]
fn eval_writes_slice_tables() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    assert!(run_sample(&report, &["--baseline", "--sample", "random:n=300"]).status.success());
    let out_dir = dir.path().join("eval");
    let (gold, slices, table) = (sample("gold.jsonl"), sample("slices.json"), sample("table.jsonl"));
    let out = proxyq(&[
        "eval",
        "--report",
        report.to_str().unwrap(),
        "--gold",
        gold.to_str().unwrap(),
        "--slices",
        slices.to_str().unwrap(),
        "--table",
        table.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let ev = json(&out_dir.join("eval.json"));
    let names: Vec<&str> = ev["slices"]["rows"].as_array().unwrap().iter().map(|r| r["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["*", "a0", "a1"]);
    assert!(ev["relative_accuracy"].as_f64().unwrap() > 0.9);
    let csv = fs::read_to_string(out_dir.join("eval_slices.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(fs::read_to_string(out_dir.join("eval.csv")).unwrap().starts_with("source,rows,"));
}

#[test]
fn repro_writes_artifacts_and_rejects_unknown_names() {
    let dir = tempfile::tempdir().unwrap();
    let out = proxyq(&["repro", "table4_scaling", "--seeds", "1", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("table4_scaling.csv")).unwrap();
    for n in ["10000", "100000", "1000000"] {
        assert!(
            csv.lines().any(|l| l.starts_with(&format!("{n},precomputed,closed_form,"))),
            "missing N = {n}"
        );
    }
    assert!(dir.path().join("table4_scaling.json").exists());

    let out = proxyq(&["repro", "nonexistent"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("figure5_imbalance"));
}

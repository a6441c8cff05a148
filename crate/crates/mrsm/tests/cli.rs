use std::path::Path;
use std::process::{Command, Output};

use mrsm::formats::{read_forest, read_index, read_keys, write_forest, write_index, write_keys};
use mrsm::RunDir;
use mrsm_core::engine::{build_pipeline, EngineConfig};
use mrsm_core::forest::{EncryptedForest, Forest, Tree};
use mrsm_core::synth::{generate, SynthConfig};

fn mrsm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrsm")).args(args).env_remove("MRSM_RUN_DIR").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = mrsm(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Files store trees in preorder, so arena slot numbers may differ after a
/// read; compare what the slots hold instead.
fn same_tree<P: PartialEq + std::fmt::Debug>(a: &Tree<P>, b: &Tree<P>) {
    assert_eq!(a.partition, b.partition);
    assert_eq!(a.to_preorder(), b.to_preorder());
}

fn same_plain(a: &Forest, b: &Forest) {
    assert_eq!(a.trees.len(), b.trees.len());
    for (x, y) in a.trees.iter().zip(&b.trees) {
        same_tree(&x.tree, &y.tree);
        assert_eq!(x.probes, y.probes);
        assert_eq!(x.built_size, y.built_size);
    }
}

fn same_encrypted(a: &EncryptedForest, b: &EncryptedForest) {
    assert_eq!(a.trees.len(), b.trees.len());
    for (x, y) in a.trees.iter().zip(&b.trees) {
        same_tree(x, y);
    }
}

fn doc_ids(search_output: &str) -> Vec<u64> {
    search_output.lines().map(|l| l.split('\t').nth(1).unwrap().parse().unwrap()).collect()
}

const CORPUS: &str = r#"{"doc_id": 1, "owner_id": 1, "text": "encrypted search over cloud data"}
{"doc_id": 2, "owner_id": 1, "text": "ranked keyword search"}
{"doc_id": 3, "owner_id": 2, "text": "cloud storage pricing"}
{"doc_id": 4, "owner_id": 2, "text": "keyword privacy and encrypted indexes"}
{"doc_id": 5, "owner_id": 3, "text": "balanced trees for fast search"}
{"doc_id": 6, "owner_id": 3, "text": "forest of trees"}
"#;

fn build_small(dir: &Path) -> String {
    let corpus = dir.join("corpus_in.jsonl");
    std::fs::write(&corpus, CORPUS).unwrap();
    let run = dir.join("run");
    ok(&["build", "--corpus", corpus.to_str().unwrap(), "--out", run.to_str().unwrap(), "--s", "2", "--sigma", "0", "--U-ratio", "0"]);
    run.to_str().unwrap().to_string()
}

#[test]
fn build_search_update_inspect() {
    let tmp = tempfile::tempdir().unwrap();
    let run = build_small(tmp.path());
    for f in ["proxy.json", "keys.bin", "index.bin", "forest.bin", "corpus.jsonl"] {
        assert!(Path::new(&run).join(f).is_file(), "{f}");
    }

    let hits = doc_ids(&ok(&["search", "--run", &run, "--keywords", "storage", "--k", "1"]));
    assert_eq!(hits, vec![3]);
    let hits = doc_ids(&ok(&["search", "--run", &run, "--keywords", "search,encrypted", "--k", "3", "--full"]));
    assert_eq!(hits.len(), 3);
    assert!(hits.contains(&1));

    let new = tmp.path().join("new.jsonl");
    std::fs::write(&new, "{\"doc_id\": 7, \"owner_id\": 4, \"terms\": [\"storage\", \"storage\", \"quota\"]}\n").unwrap();
    let out = ok(&["update", "--run", &run, "--insert", new.to_str().unwrap(), "--delete", "3"]);
    assert!(out.contains("deleted 3"));
    assert!(out.contains("inserted 7"));
    assert_eq!(doc_ids(&ok(&["search", "--run", &run, "--keywords", "quota", "--k", "1"])), vec![7]);
    assert!(!doc_ids(&ok(&["search", "--run", &run, "--keywords", "storage", "--k", "6", "--full"])).contains(&3));

    let dict = tmp.path().join("dict.txt");
    let parts = tmp.path().join("parts.json");
    let out = ok(&["inspect", "--run", &run, "--dictionary", dict.to_str().unwrap(), "--partitions", parts.to_str().unwrap()]);
    assert!(out.starts_with("documents 6  owners 4"));
    assert!(std::fs::read_to_string(&dict).unwrap().lines().any(|w| w == "quota"));
    let records: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&parts).unwrap()).unwrap();
    assert_eq!(records.as_array().unwrap().len(), 2);
}

#[test]
fn run_dir_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let run = build_small(tmp.path());
    let out = Command::new(env!("CARGO_BIN_EXE_mrsm"))
        .args(["search", "--keywords", "forest", "--k", "1"])
        .env("MRSM_RUN_DIR", &run)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(doc_ids(&String::from_utf8(out.stdout).unwrap()), vec![6]);
}

#[test]
fn tiny_tune_writes_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    ok(&["build", "--synthetic", "200", "--vocab", "300", "--out", run.to_str().unwrap(), "--seed", "3"]);
    let csv = tmp.path().join("eq.csv");
    let out = ok(&[
        "tune", "--run", run.to_str().unwrap(), "--grid", "0.05:0.1:0.05", "--k", "5", "--queries", "10", "--csv",
        csv.to_str().unwrap(),
    ]);
    assert!(!out.is_empty());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("sigma,precision,rank_privacy,f"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn usage_and_runtime_errors_have_distinct_codes() {
    assert_eq!(mrsm(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(mrsm(&["search", "--k", "notanumber"]).status.code(), Some(2));
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nothing");
    let out = mrsm(&["search", "--run", missing.to_str().unwrap(), "--keywords", "x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn binary_formats_roundtrip() {
    let docs = generate(&SynthConfig::new(60, 150, 5)).unwrap();
    let p = build_pipeline(&docs, &EngineConfig { s: Some(2), seed: 5, ..EngineConfig::default() }).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("f");

    write_keys(&path, &p.keys).unwrap();
    assert_eq!(read_keys(&path).unwrap(), p.keys);
    write_index(&path, &p.forest).unwrap();
    same_plain(&read_index(&path).unwrap(), &p.forest);
    write_forest(&path, &p.encrypted).unwrap();
    same_encrypted(&read_forest(&path).unwrap(), &p.encrypted);

    // a file of the wrong kind is rejected by its magic
    write_keys(&path, &p.keys).unwrap();
    assert!(read_forest(&path).is_err());
}

#[test]
fn saved_run_reloads_to_the_same_engine() {
    let docs = generate(&SynthConfig::new(60, 150, 6)).unwrap();
    let engine = mrsm_core::engine::Engine::build(&docs, &EngineConfig { s: Some(2), seed: 6, ..EngineConfig::default() }).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let dir = RunDir::new(tmp.path());
    dir.save(&engine).unwrap();
    let back = dir.load().unwrap();
    same_encrypted(&back.server.forest, &engine.server.forest);
    same_plain(&back.proxy.forest, &engine.proxy.forest);
    assert_eq!(back.proxy.keys, engine.proxy.keys);
    assert_eq!(back.owners.documents(), engine.owners.documents());
}

//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! writes the raw numbers as CSV under the cargo target tmpdir.
//!
//! Exits 0 regardless of failures so the rest of the workspace suite still
//! runs; set `MRSM_ACCEPTANCE_STRICT=1` to exit 1 when any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::Instant;

use mrsm::bench::{self, SystemClock, TreeSpeedRow};
use mrsm::formats::write_csv;
use mrsm_core::aspe::{encrypt_vector, keygen_partition, make_trapdoor, score};
use mrsm_core::corpus::{build_dictionary, Document};
use mrsm_core::engine::{
    build_index, build_pipeline, Engine, EngineConfig, IndexBuild, NoiseSweep, OwnerRegistry, SearchRequest, Selection,
    UserGrant,
};
use mrsm_core::eval::{bench_forest, bench_tree_orders, efficiency_ratio, equilibrium, storage_ratio, BenchmarkConfig};
use mrsm_core::forest::{search_tree, PlainQuery, Quota, Tree};
use mrsm_core::padding::{optimize_noise, sigma_grid, DiscriminatorConfig, NoiseDistribution};
use mrsm_core::rng::stream;
use mrsm_core::synth::{generate, SynthConfig};
use mrsm_core::{DocId, PartitionId};
use rand::Rng;
use serde::Serialize;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn out_dir() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn plain_config(s: usize, seed: u64) -> EngineConfig {
    EngineConfig { s: Some(s), u_ratio: 0.0, noise: NoiseDistribution::Normal { sigma: 0.0 }, seed, ..EngineConfig::default() }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// 1..=3 keywords drawn uniformly from the corpus vocabulary.
fn random_queries(docs: &[Document], count: usize, seed: u64) -> Vec<Vec<String>> {
    let words: Vec<String> = build_dictionary(docs).unwrap().words().to_vec();
    let mut r = stream(seed, &[77]);
    (0..count)
        .map(|_| {
            let n = r.gen_range(1..=3);
            (0..n).map(|_| words[r.gen_range(0..words.len())].clone()).collect()
        })
        .collect()
}

/// Top `k` by brute force over the unpadded weighted indexes: score desc,
/// doc id asc, scores compared at 1e-9 resolution.
fn brute_force(index: &IndexBuild, keywords: &[String], k: usize) -> Vec<DocId> {
    let mut scores: BTreeMap<DocId, f64> = BTreeMap::new();
    for part in &index.weighted {
        for w in part {
            scores.insert(w.doc_id, 0.0);
        }
    }
    for word in keywords {
        let Some(g) = index.dictionary.position(word) else { continue };
        for (p, part) in index.partitions.partitions.iter().enumerate() {
            if let Some(l) = part.keywords.iter().position(|&x| x == g) {
                for w in &index.weighted[p] {
                    *scores.get_mut(&w.doc_id).unwrap() += w.values[l];
                }
            }
        }
    }
    let mut ranked: Vec<(i64, DocId)> = scores.into_iter().map(|(d, s)| (-(s * 1e9).round() as i64, d)).collect();
    ranked.sort();
    ranked.into_iter().take(k).map(|(_, d)| d).collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    for (i, &dim) in [8usize, 64, 512].iter().enumerate() {
        let mut r = stream(1, &[i as u64]);
        let key = keygen_partition(dim, &mut r).unwrap();
        for _ in 0..1000 {
            let v: Vec<f64> = (0..dim).map(|_| r.gen()).collect();
            let q: Vec<f64> = (0..dim).map(|_| r.gen()).collect();
            let e = encrypt_vector(&v, &key, &mut r).unwrap();
            let t = make_trapdoor(PartitionId(0), &q, &key, &mut r).unwrap();
            let exact = dot(&v, &q);
            worst = worst.max((score(&e, &t).unwrap() - exact).abs() / (1.0 + exact.abs()));
            pairs += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-6 && secs < 10.0,
        format!("{pairs} pairs over dims 8/64/512, max |err|/(1+|v.q|) = {worst:.2e}, {secs:.2} s"),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let docs = generate(&SynthConfig::new(200, 500, 2)).unwrap();
    let cfg = plain_config(2, 2);
    let index = build_index(&docs, &cfg, None).unwrap();
    let mut engine = Engine::build(&docs, &cfg).unwrap();
    let grant = UserGrant::all(0, 2);
    let mut mismatches = 0;
    let queries = random_queries(&docs, 100, 2);
    for q in &queries {
        let req = SearchRequest::new(q, 10).quota(Quota::Full);
        let got = engine.query(&req, &grant).unwrap().doc_ids();
        if got != brute_force(&index, q, 10) {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(mismatches == 0 && secs < 30.0, format!("{} queries, {mismatches} mismatches against brute force, {secs:.2} s", queries.len()))
}

fn criterion_3() -> Outcome {
    let mut r = stream(3, &[0]);
    let mut bound_violations = 0;
    let mut pruned_winners = 0;
    for _ in 0..10_000 {
        let leaves = r.gen_range(1..=64);
        let dim = r.gen_range(1..=8);
        let vectors: Vec<(DocId, Vec<f64>)> =
            (0..leaves).map(|i| (DocId(i as u64), (0..dim).map(|_| if r.gen_bool(0.4) { 0.0 } else { r.gen() }).collect())).collect();
        let q: Vec<f64> = (0..dim).map(|_| if r.gen_bool(0.3) { 0.0 } else { r.gen::<f64>() * 2.0 }).collect();
        let tree = Tree::build(PartitionId(0), vectors.clone()).unwrap();
        // ceil(k/t) for random k and t
        let (k, t) = (r.gen_range(1..=12usize), r.gen_range(1..=3usize));
        let quota = k.div_ceil(t);
        let below = descendants(&tree);
        for slot in tree.preorder() {
            let s = dot(&tree.node(slot).payload, &q);
            if below[&slot].iter().any(|&l| dot(&tree.node(l).payload, &q) > s) {
                bound_violations += 1;
            }
        }
        let found = search_tree(&tree, &PlainQuery(&q), quota);
        let mut exact: Vec<(f64, DocId)> = vectors.iter().map(|(d, v)| (-dot(v, &q), *d)).collect();
        exact.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let winners: BTreeSet<usize> = exact.iter().take(quota).map(|(_, d)| tree.leaf(*d).unwrap()).collect();
        for p in &found.pruned {
            if below[p].iter().any(|l| winners.contains(l)) {
                pruned_winners += 1;
            }
        }
    }
    outcome(
        bound_violations == 0 && pruned_winners == 0,
        format!("10000 trees: {bound_violations} bound violations, {pruned_winners} pruned subtrees holding a top leaf"),
    )
}

/// Leaf slots under every slot.
fn descendants(tree: &Tree<Vec<f64>>) -> BTreeMap<usize, Vec<usize>> {
    let mut out = BTreeMap::new();
    for slot in tree.preorder() {
        let mut leaves = Vec::new();
        let mut stack = vec![slot];
        while let Some(s) = stack.pop() {
            let n = tree.node(s);
            if n.doc.is_some() {
                leaves.push(s);
            }
            stack.extend(&n.children);
        }
        out.insert(slot, leaves);
    }
    out
}

/// Adjacent pairs moving the wrong way.
fn inversions(xs: &[f64], increasing: bool) -> usize {
    xs.windows(2).filter(|w| if increasing { w[1] < w[0] } else { w[1] > w[0] }).count()
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut synth = SynthConfig::new(1000, 2000, 4);
    synth.owners = 1000;
    let docs = generate(&synth).unwrap();
    let cfg = EngineConfig { u_ratio: 0.01, omega: Some(1), seed: 4, ..EngineConfig::default() };
    let pipeline = build_pipeline(&docs, &cfg).unwrap();
    let requests = bench::equilibrium_requests(&pipeline, &docs, 100, 1, 200, 2, 4).unwrap();
    let mut sweep = NoiseSweep::new(&pipeline, requests, 4).unwrap();
    let grid = sigma_grid(0.01, 0.2, 0.01).unwrap();
    let report = optimize_noise(&mut sweep, &grid, &DiscriminatorConfig::default()).unwrap();
    bench::write_equilibrium(&out_dir().join("fig3_equilibrium.csv"), &report).unwrap();

    let f_exact = report.rows.iter().all(|r| r.f == r.precision * r.precision / 95.0 + r.rank_privacy * r.rank_privacy / 80.0);
    let low: Vec<f64> = report.rows.iter().filter(|r| r.sigma <= 0.05 + 1e-12).map(|r| r.precision).collect();
    let low_ok = low.iter().all(|&p| p >= 95.0);
    let precision: Vec<f64> = report.rows.iter().map(|r| r.precision).collect();
    let privacy: Vec<f64> = report.rows.iter().map(|r| r.rank_privacy).collect();
    let (pi, ri) = (inversions(&precision, false), inversions(&privacy, true));

    // x^2/95 + y^2/80 = (80 x^2 + 95 y^2) / 7600, exact in integers
    let hand = [(98, 78, 177.14), (97, 79, 177.05), (93, 84, 179.25)];
    let mut hand_ok = true;
    let mut hand_text = Vec::new();
    for (x, y, quoted) in hand {
        let exact = (80 * x * x + 95 * y * y) as f64 / 7600.0;
        let f = equilibrium(x as f64, y as f64);
        hand_ok &= (f - exact).abs() <= 1e-9 && (f - quoted).abs() <= 0.01;
        hand_text.push(format!("f({x},{y})={f:.4} (quoted {quoted})"));
    }
    let best = report.optimum();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        f_exact && low_ok && pi <= 1 && ri <= 1 && hand_ok && secs < 600.0,
        format!(
            "(a) f recomputed {}; (b) precision at sigma<=0.05 {:?}; (c) inversions precision {pi}, privacy {ri}; (d) {}; \
             optimum sigma={} f={:.2} vs stated 177.5; {} queries, {secs:.0} s",
            if f_exact { "exact" } else { "MISMATCH" },
            low.iter().map(|p| format!("{p:.1}")).collect::<Vec<_>>(),
            hand_text.join(", "),
            best.sigma,
            best.f,
            sweep.requests().len(),
        ),
    )
}

fn structure_engine(seed: u64) -> EngineConfig {
    EngineConfig { seed, ..plain_config(1, seed) }
}

fn criterion_5() -> Outcome {
    let config = BenchmarkConfig { docs: 2000, vocabulary: 4000, topics: 4, owners: 8, queries: 1000, k: 10, seed: 5, ..BenchmarkConfig::default() };
    let docs = mrsm_core::eval::synthetic_corpus(&config).unwrap();
    let reports = bench_tree_orders(&docs, &config, &structure_engine(5), &SystemClock).unwrap();
    let rows: Vec<TreeSpeedRow> = reports.iter().map(|r| TreeSpeedRow::new("a", r)).collect();
    write_csv(&out_dir().join("fig4a_tree_orders.csv"), &rows).unwrap();
    let by = |name: &str| rows.iter().find(|r| r.variant == name).unwrap();
    let (random, grouped, mlsb) = (by("random"), by("grouped"), by("mlsb"));
    let ratio = mlsb.mean_nodes / random.mean_nodes;
    let lowest_var = mlsb.var_nodes < random.var_nodes && mlsb.var_nodes < grouped.var_nodes;
    outcome(
        ratio <= 0.95 && lowest_var,
        format!(
            "mean nodes random {:.1} / grouped {:.1} / mlsb {:.1} (mlsb {:.1}% fewer than random); variance {:.0} / {:.0} / {:.0}",
            random.mean_nodes,
            grouped.mean_nodes,
            mlsb.mean_nodes,
            100.0 * (1.0 - ratio),
            random.var_nodes,
            grouped.var_nodes,
            mlsb.var_nodes
        ),
    )
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let config =
        BenchmarkConfig { docs: 500, vocabulary: 4000, topics: 4, owners: 8, s: 4, t: 1, queries: 1000, k: 10, seed: 6, ..BenchmarkConfig::default() };
    let docs = mrsm_core::eval::synthetic_corpus(&config).unwrap();
    let [single, forest] = bench_forest(&docs, &config, &structure_engine(6), &SystemClock).unwrap();
    let rows = vec![TreeSpeedRow::new("b", &single), TreeSpeedRow::new("b", &forest)];
    write_csv(&out_dir().join("fig4b_forest.csv"), &rows).unwrap();
    let node_ratio = single.total_visited() as f64 / forest.total_visited() as f64;
    let time_ratio = single.seconds.iter().sum::<f64>() / forest.seconds.iter().sum::<f64>();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        node_ratio >= 2.0 && secs < 300.0,
        format!(
            "visited nodes single {} / forest {} = {node_ratio:.2}x; wall clock {time_ratio:.2}x; {secs:.1} s",
            single.total_visited(),
            forest.total_visited()
        ),
    )
}

fn criterion_7() -> Outcome {
    let eta = efficiency_ratio(20000.0, 80.0).unwrap();
    let storage = storage_ratio((1u64 << 14) as f64, 16.0).unwrap();
    outcome(
        (eta - 143.0).abs() <= 1.0 && (storage - 16.0).abs() <= 0.05 * 16.0,
        format!("efficiency_ratio(20000, 80) = {eta:.2}; storage_ratio(2^14, 16) = {storage:.4}"),
    )
}

#[derive(Serialize)]
struct InsertRow {
    doc_id: u64,
    partition: usize,
    touched: usize,
    trees_changed: usize,
    rebuilt: bool,
}

fn criterion_8() -> Outcome {
    let mut synth = SynthConfig::new(900, 2000, 8);
    synth.topics = 4;
    synth.owners = 8;
    let all = generate(&synth).unwrap();
    let (base, rest) = all.split_at(512);
    let dict = build_dictionary(base).unwrap();
    let fresh: Vec<Document> = rest.iter().filter(|d| d.distinct_terms().all(|t| dict.position(t).is_some())).take(100).cloned().collect();
    let s = 4;
    let mut engine = Engine::from_pipeline(
        build_pipeline(base, &EngineConfig { s: Some(s), seed: 8, ..EngineConfig::default() }).unwrap(),
        OwnerRegistry::from_documents(base).unwrap(),
    );
    let limit = 2.0 * (((base.len() / s) as f64).log2() + 2.0);
    let mut rows = Vec::new();
    let mut worst = 0;
    let mut multi_tree = 0;
    for d in &fresh {
        let before = engine.server.forest.trees.clone();
        let o = engine.insert_document(d.clone()).unwrap();
        let changed = before.iter().zip(&engine.server.forest.trees).filter(|(a, b)| a != b).count();
        if changed != 1 {
            multi_tree += 1;
        }
        worst = worst.max(o.touched);
        rows.push(InsertRow { doc_id: d.doc_id.0, partition: o.partition.0, touched: o.touched, trees_changed: changed, rebuilt: o.rebuilt });
    }
    write_csv(&out_dir().join("update_cost.csv"), &rows).unwrap();
    let rebuilt = engine.proxy.rebuilt_server().unwrap();
    let queries = random_queries(&all, 100, 8);
    let mut mismatches = 0;
    for q in &queries {
        let req = SearchRequest::new(q, 10);
        let plan = engine.proxy.plan(&req).unwrap();
        let t = engine.proxy.trapdoors(&plan).unwrap();
        let live = engine.server.search(&t, req.k, req.quota).unwrap();
        let fresh = rebuilt.search(&t, req.k, req.quota).unwrap();
        let (a, b): (BTreeSet<DocId>, BTreeSet<DocId>) =
            (live.hits.iter().map(|h| h.doc_id).collect(), fresh.hits.iter().map(|h| h.doc_id).collect());
        if a != b {
            mismatches += 1;
        }
    }
    outcome(
        fresh.len() == 100 && multi_tree == 0 && worst as f64 <= limit && mismatches == 0,
        format!(
            "{} inserts, {multi_tree} touching more than one tree, max touched {worst} (limit {limit:.0}), \
             {mismatches}/{} queries differ from a rebuilt forest",
            fresh.len(),
            queries.len()
        ),
    )
}

fn criterion_9() -> Outcome {
    let docs = generate(&SynthConfig::new(300, 800, 9)).unwrap();
    let s = 2;
    let mut engine = Engine::build(&docs, &plain_config(s, 9)).unwrap();
    let grant = UserGrant::all(0, s);
    let queries = random_queries(&docs, 100, 9);
    let mut bad = 0;
    for q in &queries {
        let req = SearchRequest::new(q, 10).select(Selection::All).quota(Quota::Full);
        let exact = engine.proxy.exact_top_k(&req).unwrap();
        let got = engine.query(&req, &grant).unwrap();
        let m = mrsm_core::engine::evaluate(&got, &exact);
        if m.precision != 1.0 || m.rank_privacy != 0.0 {
            bad += 1;
        }
    }
    outcome(bad == 0, format!("{} queries with sigma = 0, U = 0: {bad} with P != 1 or P' != 0", queries.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("ASPE correctness", criterion_1),
        ("oracle top-k equivalence", criterion_2),
        ("pruning soundness", criterion_3),
        ("equilibrium reproduction", criterion_4),
        ("MLSB ordering benefit", criterion_5),
        ("forest speedup", criterion_6),
        ("formula checks", criterion_7),
        ("dynamic maintenance", criterion_8),
        ("padding identity", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!("criterion {} ({name}): {}: {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} of {} passed; csv in {}", criteria.len() - failed, criteria.len(), out_dir().display());
    if failed > 0 && std::env::var("MRSM_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}

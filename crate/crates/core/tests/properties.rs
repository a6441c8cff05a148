use std::collections::BTreeSet;

use mrsm_core::aspe::{decrypt, encrypt_vector, keygen_partition, make_trapdoor, score};
use mrsm_core::corpus::{build_binary_indexes, build_dictionary, Document};
use mrsm_core::eval::{precision, rank_privacy};
use mrsm_core::forest::{
    depth_bound, search_tree, snap, top_k, Hit, MlsbTree, PlainQuery, ProbeSet, Tree,
};
use mrsm_core::padding::{pad_index, NoiseDistribution, PartitionNoise};
use mrsm_core::partitioning::partition_corpus;
use mrsm_core::rng::stream;
use mrsm_core::weighting::{compute_weights, weight_indexes, CorrelativityMatrix};
use mrsm_core::{DocId, OwnerId, PartitionId};
use proptest::prelude::*;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn leaves(dim: usize, max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.0f64..1.0, dim), 1..=max)
}

fn tree_of(vectors: &[Vec<f64>]) -> Tree<Vec<f64>> {
    let leaves = vectors.iter().enumerate().map(|(i, v)| (DocId(i as u64 + 1), v.clone())).collect();
    Tree::build(PartitionId(0), leaves).unwrap()
}

/// Leaf slots below `slot`, found by walking children.
fn descendant_leaves(tree: &Tree<Vec<f64>>, slot: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut stack = vec![slot];
    while let Some(s) = stack.pop() {
        let node = tree.node(s);
        if node.doc.is_some() {
            out.push(s);
        }
        stack.extend(&node.children);
    }
    out
}

/// Small corpus: each doc draws terms from a shared pool of `vocab` words.
fn corpus() -> impl Strategy<Value = Vec<Document>> {
    prop::collection::vec((0u32..4, prop::collection::vec(0usize..12, 1..6)), 2..20).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (owner, terms))| {
                let words: Vec<String> = terms.iter().map(|t| format!("w{t}")).collect();
                Document::from_terms(DocId(i as u64 + 1), OwnerId(owner), words).unwrap()
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encrypted_score_is_inner_product(
        dim in 1usize..40,
        seed in any::<u64>(),
        raw in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 40),
    ) {
        let v: Vec<f64> = raw[..dim].iter().map(|p| p.0).collect();
        let q: Vec<f64> = raw[..dim].iter().map(|p| p.1).collect();
        let mut rng = stream(seed, &[1]);
        let key = keygen_partition(dim, &mut rng).unwrap();
        let e = encrypt_vector(&v, &key, &mut rng).unwrap();
        let t = make_trapdoor(PartitionId(0), &q, &key, &mut rng).unwrap();
        let exact = dot(&v, &q);
        prop_assert!((score(&e, &t).unwrap() - exact).abs() <= 1e-6 * (1.0 + exact.abs()));
        let back = decrypt(&e, &key).unwrap();
        for (a, b) in back.iter().zip(&v) {
            prop_assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn internal_bounds_cover_leaves(vectors in leaves(6, 64), q in prop::collection::vec(0.0f64..2.0, 6)) {
        let tree = tree_of(&vectors);
        for slot in tree.preorder() {
            let bound = dot(&tree.node(slot).payload, &q);
            for leaf in descendant_leaves(&tree, slot) {
                prop_assert!(bound >= dot(&tree.node(leaf).payload, &q) - 1e-12);
            }
        }
    }

    #[test]
    fn search_matches_brute_force_and_never_prunes_winners(
        vectors in leaves(5, 64),
        q in prop::collection::vec(0.0f64..1.0, 5),
        k in 1usize..12,
    ) {
        let tree = tree_of(&vectors);
        let found = search_tree(&tree, &PlainQuery(&q), k);
        let exact = top_k(vectors.iter().enumerate().map(|(i, v)| (DocId(i as u64 + 1), dot(v, &q))), k);
        prop_assert_eq!(&found.hits, &exact);
        let winners: BTreeSet<usize> = exact.iter().map(|h| tree.leaf(h.doc_id).unwrap()).collect();
        for &p in &found.pruned {
            prop_assert!(descendant_leaves(&tree, p).iter().all(|l| !winners.contains(l)));
        }
    }

    #[test]
    fn preorder_roundtrip_is_isomorphic(vectors in leaves(3, 40)) {
        let tree = tree_of(&vectors);
        let records: Vec<(Option<DocId>, Vec<f64>)> =
            tree.to_preorder().into_iter().map(|(d, p)| (d, p.clone())).collect();
        let back = Tree::from_preorder(PartitionId(0), records).unwrap();
        prop_assert_eq!(back.shape(), tree.shape());
        prop_assert_eq!(back.shape_hash(), tree.shape_hash());
    }

    #[test]
    fn updates_keep_balance_and_bounds(
        initial in leaves(4, 40),
        extra in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 4), 0..30),
        removals in prop::collection::vec(any::<prop::sample::Index>(), 0..30),
    ) {
        let probes = ProbeSet::zipf(4, &[4, 3, 2, 1], 50, 2, 1.0, 3).unwrap();
        let docs: Vec<(DocId, Vec<f64>)> =
            initial.iter().enumerate().map(|(i, v)| (DocId(i as u64 + 1), v.clone())).collect();
        let mut tree = MlsbTree::build(PartitionId(0), docs, probes).unwrap();
        let mut live: Vec<DocId> = tree.tree.docs().collect();
        for (j, v) in extra.iter().enumerate() {
            let id = DocId(1000 + j as u64);
            tree.insert(id, v.clone()).unwrap();
            live.push(id);
        }
        for r in &removals {
            if live.len() <= 1 {
                break;
            }
            let id = live.remove(r.index(live.len()));
            tree.delete(id).unwrap();
        }
        let t = &tree.tree;
        prop_assert_eq!(t.len(), live.len());
        prop_assert!(t.depth() <= depth_bound(t.len()));
        for slot in t.preorder() {
            let node = t.node(slot);
            if node.doc.is_none() {
                let mut max = vec![0.0f64; 4];
                for &c in &node.children {
                    for (m, x) in max.iter_mut().zip(&t.node(c).payload) {
                        *m = m.max(*x);
                    }
                }
                prop_assert_eq!(&max, &node.payload);
            }
        }
    }

    #[test]
    fn partitions_are_disjoint_and_weights_normalized(docs in corpus(), s in 1usize..4, seed in any::<u64>()) {
        let dict = build_dictionary(&docs).unwrap();
        let indexes = build_binary_indexes(&docs, &dict).unwrap();
        let Ok(set) = partition_corpus(&indexes, &dict, s, seed) else {
            return Ok(());
        };
        let mut seen_docs = BTreeSet::new();
        let mut seen_words = BTreeSet::new();
        for p in &set.partitions {
            for m in &p.members {
                prop_assert!(seen_docs.insert(m.doc_id));
            }
            for &w in &p.keywords {
                prop_assert!(seen_words.insert(w));
            }
            let corr = CorrelativityMatrix::identity(p.width());
            let weights = compute_weights(p, &corr).unwrap();
            for t in 0..p.width() {
                let column: Vec<f64> = weights.owners.values().map(|o| o.normalized[t]).collect();
                prop_assert!(column.iter().all(|w| (0.0..=1.0).contains(w)));
                if weights.max_raw[t] > 0.0 {
                    prop_assert_eq!(column.iter().cloned().fold(0.0, f64::max), 1.0);
                }
            }
            for w in weight_indexes(p, &weights).unwrap() {
                let noise = PartitionNoise::new(3, 2, NoiseDistribution::Normal { sigma: 0.0 }).unwrap();
                let padded = pad_index(&w, &noise, seed).unwrap();
                prop_assert_eq!(padded.real(), &w.values[..]);
                prop_assert!(padded.pseudo().iter().all(|&e| e == 0.0));
            }
        }
        prop_assert_eq!(seen_docs.len(), docs.len());
        prop_assert_eq!(seen_words.len(), dict.len());
    }

    #[test]
    fn metrics_are_bounded(ids in prop::collection::vec(0u64..30, 1..15), shift in 0u64..30) {
        let exact: Vec<DocId> = ids.iter().copied().collect::<BTreeSet<_>>().into_iter().map(DocId).collect();
        let retrieved: Vec<DocId> = exact.iter().map(|d| DocId((d.0 + shift) % 30)).collect();
        let p = precision(&retrieved, &exact);
        let r = rank_privacy(&retrieved, &exact);
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!((0.0..=1.0).contains(&r));
        let mut reversed = retrieved.clone();
        reversed.reverse();
        prop_assert_eq!(precision(&reversed, &exact), p);
        prop_assert_eq!(precision(&exact, &exact), 1.0);
        prop_assert_eq!(rank_privacy(&exact, &exact), 0.0);
    }

    #[test]
    fn snapping_is_idempotent_and_monotone(a in -1e3f64..1e3, b in -1e3f64..1e3) {
        prop_assert_eq!(snap(snap(a)).to_bits(), snap(a).to_bits());
        prop_assert!(!snap(a).is_sign_negative() || snap(a) < 0.0);
        if a <= b {
            prop_assert!(snap(a) <= snap(b));
        }
    }
}

#[test]
fn ranking_breaks_ties_by_doc_id() {
    let hits = top_k([(DocId(9), 1.0), (DocId(3), 1.0), (DocId(5), 2.0)], 2);
    assert_eq!(hits, vec![Hit { doc_id: DocId(5), score: 2.0 }, Hit { doc_id: DocId(3), score: 1.0 }]);
}

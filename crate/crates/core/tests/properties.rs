use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use proptest::prelude::*;

use skillforest::baselines::{Bm25Index, Bm25Params};
use skillforest::corpus::load_corpus;
use skillforest::embedding::{embed_corpus, hash_embed, EmbedMode, HashEmbedder};
use skillforest::evaluation::{bleu, compute_cost, rouge_n, token_f1, CostLedger, PriceTable};
use skillforest::hierarchy::{build_hierarchy, ClusterParams};
use skillforest::llm::StubLlm;
use skillforest::materialize::{navigation_files, parse_navigation_file, Contents};
use skillforest::navigator::{run_agent, scripted_navigate, AgentConfig, ScriptedModel, ToolRequest};
use skillforest::pipeline::{compile, CompileOptions, Compiled};
use skillforest::summarization::SummarizationConfig;
use skillforest::synthetic::{generate, generate_corpus, TaxonomySpec};
use skillforest::text::tokenize;

fn small_forest() -> (tempfile::TempDir, Compiled) {
    let tmp = tempfile::tempdir().unwrap();
    generate_corpus(&TaxonomySpec::balanced(&[3, 4], 6, 21), tmp.path()).unwrap();
    let out = tmp.path().join("out");
    compile(
        &tmp.path().join("corpus"),
        &out,
        &CompileOptions::default(),
        &StubLlm,
        &HashEmbedder::new(128),
    )
    .unwrap();
    let compiled = Compiled::open(&out).unwrap();
    (tmp, compiled)
}

fn leaf_listed_ids(dir: &Path) -> BTreeSet<String> {
    let mut ids = BTreeSet::new();
    for f in navigation_files(dir).unwrap() {
        let parsed = parse_navigation_file(&std::fs::read_to_string(f).unwrap()).unwrap();
        match parsed.contents {
            Contents::Documents(ds) => ids.extend(ds.into_iter().map(|d| d.doc_id)),
            Contents::Sections(ss) => ids.extend(ss.into_iter().flat_map(|s| s.documents).map(|d| d.doc_id)),
            Contents::Subgroups(_) => {}
        }
    }
    ids
}

#[test]
fn disjoint_topics_land_in_one_leaf_cluster() {
    for seed in [1, 2, 3] {
        let spec = TaxonomySpec::balanced(&[3, 4], 10, seed);
        let corpus = generate(&spec).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        generate_corpus(&spec, tmp.path()).unwrap();
        let manifest = load_corpus(&tmp.path().join("corpus"), 2000).unwrap().manifest;
        let embedder = HashEmbedder::new(256);
        let texts: Vec<String> = manifest.documents.iter().map(|d| d.text.clone()).collect();
        let vectors = embed_corpus(&texts, &embedder, EmbedMode::Document, 1).unwrap();
        let hier = build_hierarchy(
            &manifest,
            &vectors,
            &ClusterParams::default(),
            &SummarizationConfig::default(),
            &StubLlm,
            &embedder,
        )
        .unwrap();
        let leaf_of: BTreeMap<&str, &str> = hier
            .nodes
            .values()
            .filter(|n| n.level == 1)
            .flat_map(|n| n.member_doc_ids.iter().map(move |d| (d.as_str(), n.node_id.as_str())))
            .collect();
        let mut by_topic: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
        for d in &corpus.docs {
            let topic = d.topic_path.last().unwrap().as_str();
            *by_topic
                .entry(topic)
                .or_default()
                .entry(leaf_of[d.id.as_str()])
                .or_default() += 1;
        }
        for (topic, counts) in by_topic {
            let total: usize = counts.values().sum();
            let best = *counts.values().max().unwrap();
            assert!(
                best * 10 >= total * 9,
                "seed {seed} topic {topic}: {best}/{total} in one node"
            );
        }
    }
}

#[test]
fn identical_inputs_give_identical_hierarchies() {
    let tmp = tempfile::tempdir().unwrap();
    generate_corpus(&TaxonomySpec::balanced(&[2, 5], 7, 4), tmp.path()).unwrap();
    let build = || {
        let manifest = load_corpus(&tmp.path().join("corpus"), 2000).unwrap().manifest;
        let embedder = HashEmbedder::new(128);
        let texts: Vec<String> = manifest.documents.iter().map(|d| d.text.clone()).collect();
        let vectors = embed_corpus(&texts, &embedder, EmbedMode::Document, 1).unwrap();
        let cfg = SummarizationConfig::default();
        build_hierarchy(
            &manifest,
            &vectors,
            &ClusterParams::default(),
            &cfg,
            &StubLlm,
            &embedder,
        )
        .unwrap()
        .to_json(true)
    };
    assert_eq!(build(), build());
}

#[test]
fn scripted_retrievals_come_from_leaf_listings() {
    let (tmp, compiled) = small_forest();
    let listed = leaf_listed_ids(&tmp.path().join("out"));
    let queries = [
        "refund policy",
        "",
        "zzz qqq",
        "How does this work?",
        "menu kitchen dishes",
    ];
    let gold: Vec<String> = std::fs::read_to_string(tmp.path().join("gold.jsonl"))
        .unwrap()
        .lines()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["query"]
                .as_str()
                .unwrap()
                .to_string()
        })
        .collect();
    for q in queries.iter().map(|s| s.to_string()).chain(gold) {
        let t = scripted_navigate(&q, &compiled.forest, &compiled.store, 20);
        for id in &t.retrieved_doc_ids {
            assert!(listed.contains(id), "{id} not listed in any leaf file");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn agent_never_exceeds_turn_budget(
        max_turns in 1u32..12,
        plan in proptest::collection::vec((any::<bool>(), "[a-z0-9/.-]{0,24}"), 0..30),
    ) {
        let (_tmp, compiled) = small_forest();
        let plan: Vec<ToolRequest> = plan
            .into_iter()
            .map(|(view, arg)| if view { ToolRequest::View(arg) } else { ToolRequest::GetDocument(arg) })
            .collect();
        let cfg = AgentConfig { max_turns, ..AgentConfig::default() };
        let trace = run_agent("anything", &compiled.forest, &compiled.store, &ScriptedModel::new(plan), &cfg).unwrap();
        prop_assert!(trace.turns <= max_turns);
        prop_assert!(!trace.answer.is_empty());
    }
}

proptest! {
    #[test]
    fn manifest_ignores_write_order(
        bodies in proptest::collection::btree_set("[a-z]{3,12}( [a-z]{2,9}){2,20}", 2..12),
        order_seed in any::<u64>(),
    ) {
        let bodies: Vec<String> = bodies.into_iter().collect();
        let mut order: Vec<usize> = (0..bodies.len()).collect();
        let mut s = order_seed;
        for i in (1..order.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for (i, body) in bodies.iter().enumerate() {
            std::fs::write(a.path().join(format!("f{i:03}.md")), body).unwrap();
        }
        for &i in &order {
            std::fs::write(b.path().join(format!("f{i:03}.md")), &bodies[i]).unwrap();
        }
        let first = load_corpus(a.path(), 2000).unwrap().manifest.to_json();
        prop_assert_eq!(&first, &load_corpus(a.path(), 2000).unwrap().manifest.to_json());
        prop_assert_eq!(&first, &load_corpus(b.path(), 2000).unwrap().manifest.to_json());
    }

    #[test]
    fn hashed_cosine_is_bounded_and_symmetric(a in "[a-z ]{1,80}", b in "[a-z ]{1,80}") {
        prop_assume!(!tokenize(&a).is_empty() && !tokenize(&b).is_empty());
        let (x, y) = (hash_embed(&a, 64).unwrap(), hash_embed(&b, 64).unwrap());
        let c = x.cosine(&y);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&c));
        prop_assert_eq!(c, y.cosine(&x));
        prop_assert!((x.cosine(&x) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bm25_only_scores_documents_sharing_a_token(
        docs in proptest::collection::vec("[a-f]{1,3}( [a-f]{1,3}){0,12}", 1..20),
        query in "[a-h]{1,3}( [a-h]{1,3}){0,3}",
    ) {
        let ids: Vec<String> = (0..docs.len()).map(|i| format!("{i:016x}")).collect();
        let index = Bm25Index::build(ids.iter().map(String::as_str).zip(docs.iter().map(String::as_str)));
        let q: BTreeSet<String> = tokenize(&query).into_iter().collect();
        let ranked = index.search(&query, docs.len(), &Bm25Params::default()).unwrap();
        let returned: BTreeSet<&str> = ranked.entries.iter().map(|(id, _)| id.as_str()).collect();
        for (id, text) in ids.iter().zip(&docs) {
            let shares = tokenize(text).iter().any(|t| q.contains(t));
            prop_assert_eq!(shares, returned.contains(id.as_str()));
        }
        prop_assert!(ranked.entries.iter().all(|(_, s)| *s > 0.0));
    }

    #[test]
    fn metrics_ignore_surrounding_whitespace(a in "[a-c]( [a-c]){0,10}", b in "[a-c]( [a-c]){1,10}", pad in "[ \t\n]{0,4}") {
        let (pa, pb) = (format!("{pad}{a}{pad}"), format!("{pad}{b}\n"));
        prop_assert_eq!(token_f1(&a, &b).unwrap(), token_f1(&pa, &pb).unwrap());
        prop_assert_eq!(bleu(&a, &b, 4).unwrap(), bleu(&pa, &pb, 4).unwrap());
        prop_assert_eq!(rouge_n(&a, &b, 2).unwrap(), rouge_n(&pa, &pb, 2).unwrap());
        prop_assert_eq!(token_f1(&b, &b).unwrap(), 1.0);
    }

    #[test]
    fn cost_is_linear(
        a in (0u64..1_000_000, 0u64..1_000_000, 0u64..1_000_000, 0u64..1_000_000),
        b in (0u64..1_000_000, 0u64..1_000_000, 0u64..1_000_000, 0u64..1_000_000),
    ) {
        let ledger = |(i, o, r, w): (u64, u64, u64, u64)| CostLedger {
            input_tokens: i,
            output_tokens: o,
            cache_read_tokens: r,
            cache_write_tokens: w,
            turns: 0,
        };
        let p = PriceTable::default();
        let sum = (a.0 + b.0, a.1 + b.1, a.2 + b.2, a.3 + b.3);
        let lhs = compute_cost(&ledger(sum), &p);
        let rhs = compute_cost(&ledger(a), &p) + compute_cost(&ledger(b), &p);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.max(1.0));
    }
}

//! Bottom-up cluster hierarchy.
//!
//! Each round partitions the current items into `⌈n/p⌉` groups with seeded
//! k-means on unit vectors, folds undersized groups into their nearest
//! neighbours, summarizes every group and re-embeds the summaries as the next
//! round's items. Rounds continue while more than `K` groups remain.
//!
//! Assignment is hard: every document ends up in exactly one leaf.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusManifest, Document};
use crate::embedding::{dot, embed_corpus, normalize_l2, EmbedMode, Embedding, EmbeddingError, EmbeddingProvider};
use crate::llm::LlmProvider;
use crate::summarization::{
    make_label, map_bounded, summarize_internal, summarize_leaf_cluster, SummarizationConfig, SummarizeError,
};

#[derive(Debug, Error)]
pub enum HierarchyError {
    #[error("k = {k} exceeds the number of points n = {n}")]
    KExceedsN { k: usize, n: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("invalid cluster parameters: {0}")]
    InvalidParams(String),
    #[error("vectors have mixed dimensions ({expected} vs {got})")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{vectors} vectors for {documents} documents")]
    Misaligned { vectors: usize, documents: usize },
    #[error("nothing to cluster")]
    Empty,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Summarize(#[from] SummarizeError),
    #[error("malformed hierarchy checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterParams {
    /// Target children per cluster (`p`).
    pub branching: usize,
    /// Stop once at most this many clusters remain (`K`).
    pub max_roots: usize,
    pub min_size: usize,
    pub seed: u64,
    pub max_iters: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            branching: 10,
            max_roots: 7,
            min_size: 3,
            seed: 0,
            max_iters: 100,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<(), HierarchyError> {
        if self.branching < 2 {
            return Err(HierarchyError::InvalidParams("branching ratio must be >= 2".into()));
        }
        if self.max_roots < 1 {
            return Err(HierarchyError::InvalidParams("max roots must be >= 1".into()));
        }
        if self.min_size < 1 {
            return Err(HierarchyError::InvalidParams("min size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Smallest `L >= 1` with `⌈N / p^L⌉ <= K`.
pub fn depth_bound(n: usize, p: usize, k: usize) -> u32 {
    assert!(n >= 1 && p >= 2 && k >= 1, "depth_bound needs N >= 1, p >= 2, K >= 1");
    let mut remaining = n;
    let mut levels = 0;
    loop {
        remaining = remaining.div_ceil(p);
        levels += 1;
        if remaining <= k {
            return levels;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Embedding>,
    pub iterations: usize,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the highest dot product; ties go to the lowest index.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_dot = f64::NEG_INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = dot(point, c);
        if d > best_dot {
            best_dot = d;
            best = j;
        }
    }
    best
}

fn mean_direction(members: &[usize], points: &[&[f64]]) -> Option<Vec<f64>> {
    let dim = points.first()?.len();
    let mut sum = vec![0.0; dim];
    for &m in members {
        for (s, x) in sum.iter_mut().zip(points[m]) {
            *s += x;
        }
    }
    normalize_l2(&sum).ok().map(|e| e.values().to_vec())
}

/// Greedy k-means++ seeding: each new center is the best of a few D²-sampled candidates.
fn seed_centers(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = points.len();
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, points[chosen[0]])).collect();
    let trials = 2 + (k as f64).ln().floor() as usize;
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            // Every remaining point coincides with a center.
            let next = (0..n).find(|i| !chosen.contains(i)).expect("k <= n");
            chosen.push(next);
            continue;
        }
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for _ in 0..trials {
            let mut target = rng.gen::<f64>() * total;
            let mut cand = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    cand = i;
                    break;
                }
                target -= w;
            }
            while d2[cand] == 0.0 && cand > 0 {
                cand -= 1;
            }
            let updated: Vec<f64> = points
                .par_iter()
                .zip(d2.par_iter())
                .map(|(p, &old)| old.min(dist2(p, points[cand])))
                .collect();
            let potential: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|(_, pot, _)| potential < *pot) {
                best = Some((cand, potential, updated));
            }
        }
        let (cand, _, updated) = best.expect("at least two trials");
        chosen.push(cand);
        d2 = updated;
    }
    chosen
}

/// Seeded Lloyd's k-means on unit vectors.
///
/// Centroids stay on the unit sphere, so nearest-by-Euclidean and
/// highest-dot-product agree. The returned assignments are nearest-centroid
/// with respect to the returned centroids.
pub fn kmeans_partition(
    vectors: &[Embedding],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<KMeansResult, HierarchyError> {
    let n = vectors.len();
    if k == 0 {
        return Err(HierarchyError::ZeroK);
    }
    if k > n {
        return Err(HierarchyError::KExceedsN { k, n });
    }
    let dim = vectors[0].dim();
    if let Some(v) = vectors.iter().find(|v| v.dim() != dim) {
        return Err(HierarchyError::DimensionMismatch {
            expected: dim,
            got: v.dim(),
        });
    }
    let points: Vec<&[f64]> = vectors.iter().map(Embedding::values).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = seed_centers(&points, k, &mut rng)
        .into_iter()
        .map(|i| points[i].to_vec())
        .collect();

    let mut assignments = vec![usize::MAX; n];
    let mut iterations = 0;
    let max_iters = max_iters.max(1);
    loop {
        let fresh: Vec<usize> = points.par_iter().map(|p| nearest(p, &centroids)).collect();
        iterations += 1;
        let changed = fresh != assignments;
        assignments = fresh;
        if !changed || iterations >= max_iters {
            break;
        }
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, &a) in assignments.iter().enumerate() {
            members[a].push(i);
        }
        for (j, m) in members.iter().enumerate() {
            if let Some(c) = mean_direction(m, &points) {
                centroids[j] = c;
            }
        }
        // Re-seed empty clusters with the worst-served point of a multi-member cluster.
        for j in 0..k {
            if !members[j].is_empty() {
                continue;
            }
            let far = (0..n)
                .filter(|&i| members[assignments[i]].len() > 1)
                .map(|i| (i, dot(points[i], &centroids[assignments[i]])))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            if let Some((i, _)) = far {
                let from = assignments[i];
                members[from].retain(|&m| m != i);
                members[j].push(i);
                assignments[i] = j;
                centroids[j] = points[i].to_vec();
            }
        }
    }
    Ok(KMeansResult {
        assignments,
        centroids: centroids.into_iter().map(Embedding::from_unit).collect(),
        iterations,
    })
}

/// A group of item indices with its (unit) centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub members: Vec<usize>,
    pub centroid: Embedding,
}

/// Dissolves undersized clusters one at a time (smallest first) into the
/// nearest surviving centroids until none is undersized or one remains.
pub fn merge_small_clusters(mut clusters: Vec<Cluster>, vectors: &[Embedding], min_size: usize) -> Vec<Cluster> {
    let points: Vec<&[f64]> = vectors.iter().map(Embedding::values).collect();
    while clusters.len() > 1 {
        let victim = clusters
            .iter()
            .enumerate()
            .filter(|(_, c)| c.members.len() < min_size)
            .min_by_key(|(i, c)| (c.members.len(), *i))
            .map(|(i, _)| i);
        let Some(victim) = victim else { break };
        let dissolved = clusters.remove(victim);
        let centroids: Vec<Vec<f64>> = clusters.iter().map(|c| c.centroid.values().to_vec()).collect();
        let mut touched = vec![false; clusters.len()];
        for m in dissolved.members {
            let j = nearest(points[m], &centroids);
            clusters[j].members.push(m);
            touched[j] = true;
        }
        for (c, t) in clusters.iter_mut().zip(touched) {
            if t {
                c.members.sort_unstable();
                if let Some(mean) = mean_direction(&c.members, &points) {
                    c.centroid = Embedding::from_unit(mean);
                }
            }
        }
    }
    clusters
}

/// One round of clustering: how many groups were asked for and what came out.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelClustering {
    pub requested_k: usize,
    pub pre_merge: usize,
    pub clusters: Vec<Cluster>,
}

/// Partitions `items` into `⌈n/p⌉` groups and merges the undersized ones.
pub fn cluster_level(items: &[(String, Embedding)], params: &ClusterParams) -> Result<LevelClustering, HierarchyError> {
    params.validate()?;
    if items.is_empty() {
        return Err(HierarchyError::Empty);
    }
    let vectors: Vec<Embedding> = items.iter().map(|(_, v)| v.clone()).collect();
    let points: Vec<&[f64]> = vectors.iter().map(Embedding::values).collect();
    let k = items.len().div_ceil(params.branching).max(1);
    let km = kmeans_partition(&vectors, k, params.seed, params.max_iters)?;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &a) in km.assignments.iter().enumerate() {
        members[a].push(i);
    }
    let clusters: Vec<Cluster> = members
        .into_iter()
        .zip(km.centroids)
        .filter(|(m, _)| !m.is_empty())
        .map(|(m, seed_centroid)| {
            let centroid = mean_direction(&m, &points)
                .map(Embedding::from_unit)
                .unwrap_or(seed_centroid);
            Cluster { members: m, centroid }
        })
        .collect();
    let pre_merge = clusters.len();
    let clusters = merge_small_clusters(clusters, &vectors, params.min_size);
    Ok(LevelClustering {
        requested_k: k,
        pre_merge,
        clusters,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyNode {
    pub node_id: String,
    pub level: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub member_doc_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub child_node_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centroid: Option<Embedding>,
    pub summary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub num_documents: usize,
}

impl HierarchyNode {
    pub fn is_leaf(&self) -> bool {
        self.child_node_ids.is_empty()
    }
}

/// Per-round counts, kept for reports and funnel checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: u32,
    pub input_items: usize,
    pub requested_k: usize,
    pub pre_merge: usize,
    pub post_merge: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hierarchy {
    pub nodes: BTreeMap<String, HierarchyNode>,
    pub roots: Vec<String>,
    pub levels: u32,
    pub doc_ids: Vec<String>,
    pub level_stats: Vec<LevelStats>,
}

impl Hierarchy {
    pub fn node(&self, id: &str) -> Option<&HierarchyNode> {
        self.nodes.get(id)
    }

    pub fn root_nodes(&self) -> impl Iterator<Item = &HierarchyNode> {
        self.roots.iter().filter_map(|r| self.nodes.get(r))
    }

    pub fn children<'a>(&'a self, node: &'a HierarchyNode) -> impl Iterator<Item = &'a HierarchyNode> + 'a {
        node.child_node_ids.iter().filter_map(|c| self.nodes.get(c))
    }

    /// Every leaf member, in tree order (duplicates would show up twice).
    pub fn leaf_doc_ids(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut stack: Vec<&HierarchyNode> = self.root_nodes().collect();
        stack.reverse();
        while let Some(n) = stack.pop() {
            out.extend(n.member_doc_ids.iter().cloned());
            let mut kids: Vec<&HierarchyNode> = self.children(n).collect();
            kids.reverse();
            stack.extend(kids);
        }
        out
    }

    pub fn to_json(&self, with_centroids: bool) -> String {
        if with_centroids {
            serde_json::to_string_pretty(self).expect("hierarchy serializes")
        } else {
            let mut slim = self.clone();
            for n in slim.nodes.values_mut() {
                n.centroid = None;
            }
            serde_json::to_string_pretty(&slim).expect("hierarchy serializes")
        }
    }

    pub fn from_json(json: &str) -> Result<Self, HierarchyError> {
        serde_json::from_str(json).map_err(|e| HierarchyError::Checkpoint(e.to_string()))
    }
}

/// Members ordered by closeness to the centroid, ties by id.
fn representative_order<'a>(ids: &[&'a str], vectors: &[&Embedding], centroid: &Embedding) -> Vec<&'a str> {
    let mut scored: Vec<(f64, &str)> = ids.iter().zip(vectors).map(|(id, v)| (v.dot(centroid), *id)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    scored.into_iter().map(|(_, id)| id).collect()
}

/// Runs the embed → cluster → summarize loop until at most `max_roots` groups remain.
///
/// At least one round always runs. Node ids are `L{level}-C{index}`.
pub fn build_hierarchy(
    manifest: &CorpusManifest,
    doc_vectors: &[Embedding],
    params: &ClusterParams,
    cfg: &SummarizationConfig,
    llm: &dyn LlmProvider,
    embedder: &dyn EmbeddingProvider,
) -> Result<Hierarchy, HierarchyError> {
    params.validate()?;
    if manifest.documents.is_empty() {
        return Err(HierarchyError::Empty);
    }
    if doc_vectors.len() != manifest.documents.len() {
        return Err(HierarchyError::Misaligned {
            vectors: doc_vectors.len(),
            documents: manifest.documents.len(),
        });
    }
    let docs: BTreeMap<&str, &Document> = manifest.documents.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut nodes: BTreeMap<String, HierarchyNode> = BTreeMap::new();
    let mut stats = Vec::new();
    let mut items: Vec<(String, Embedding)> = manifest
        .documents
        .iter()
        .map(|d| d.id.clone())
        .zip(doc_vectors.iter().cloned())
        .collect();
    let mut level: u32 = 1;
    loop {
        let lc = cluster_level(&items, params)?;
        log::info!(
            "level {level}: {} items -> {} clusters ({} before merging)",
            items.len(),
            lc.clusters.len(),
            lc.pre_merge
        );
        stats.push(LevelStats {
            level,
            input_items: items.len(),
            requested_k: lc.requested_k,
            pre_merge: lc.pre_merge,
            post_merge: lc.clusters.len(),
        });

        let mut level_nodes = Vec::with_capacity(lc.clusters.len());
        for (i, cluster) in lc.clusters.iter().enumerate() {
            let ids: Vec<&str> = cluster.members.iter().map(|&m| items[m].0.as_str()).collect();
            let vecs: Vec<&Embedding> = cluster.members.iter().map(|&m| &items[m].1).collect();
            let ordered: Vec<String> = representative_order(&ids, &vecs, &cluster.centroid)
                .into_iter()
                .map(str::to_string)
                .collect();
            let mut member_ids: Vec<String> = ids.iter().map(|s| s.to_string()).collect();
            member_ids.sort();
            let (member_doc_ids, child_node_ids, num_documents) = if level == 1 {
                let n = member_ids.len();
                (member_ids, Vec::new(), n)
            } else {
                // keep child order by original cluster index for stable listings
                let mut kids: Vec<String> = cluster.members.iter().map(|&m| items[m].0.clone()).collect();
                kids.sort_by_key(|id| node_index(id));
                let n = kids.iter().map(|k| nodes[k].num_documents).sum();
                (Vec::new(), kids, n)
            };
            level_nodes.push((
                HierarchyNode {
                    node_id: format!("L{level}-C{i}"),
                    level,
                    member_doc_ids,
                    child_node_ids,
                    centroid: Some(cluster.centroid.clone()),
                    summary: String::new(),
                    label: None,
                    num_documents,
                },
                ordered,
            ));
        }

        let summaries: Vec<String> = map_bounded(&level_nodes, cfg.concurrency, |(_, ordered)| {
            if level == 1 {
                let ds: Vec<&Document> = ordered.iter().map(|id| docs[id.as_str()]).collect();
                summarize_leaf_cluster(&ds, cfg, llm)
            } else {
                let kids: Vec<&str> = ordered.iter().map(|id| nodes[id].summary.as_str()).collect();
                summarize_internal(&kids, level, cfg, llm)
            }
        })?;
        let mut next_items_ids = Vec::with_capacity(level_nodes.len());
        for ((mut node, _), summary) in level_nodes.into_iter().zip(summaries) {
            node.summary = summary;
            next_items_ids.push(node.node_id.clone());
            nodes.insert(node.node_id.clone(), node);
        }

        if next_items_ids.len() <= params.max_roots {
            let doc_ids = manifest.documents.iter().map(|d| d.id.clone()).collect();
            return Ok(Hierarchy {
                nodes,
                roots: next_items_ids,
                levels: level,
                doc_ids,
                level_stats: stats,
            });
        }
        let texts: Vec<String> = next_items_ids.iter().map(|id| nodes[id].summary.clone()).collect();
        let vectors = embed_corpus(&texts, embedder, EmbedMode::Document, cfg.concurrency)?;
        items = next_items_ids.into_iter().zip(vectors).collect();
        level += 1;
    }
}

/// Numeric cluster index of an `L{l}-C{i}` id, for ordering.
fn node_index(id: &str) -> usize {
    id.rsplit_once("-C")
        .and_then(|(_, i)| i.parse().ok())
        .unwrap_or(usize::MAX)
}

/// Labels every node above the leaves plus every root.
pub fn label_hierarchy(
    hierarchy: &mut Hierarchy,
    llm: &dyn LlmProvider,
    cfg: &SummarizationConfig,
) -> Result<(), HierarchyError> {
    let targets: Vec<(String, String)> = hierarchy
        .nodes
        .values()
        .filter(|n| n.level >= 2 || hierarchy.roots.contains(&n.node_id))
        .map(|n| (n.node_id.clone(), n.summary.clone()))
        .collect();
    let labels = map_bounded(&targets, cfg.concurrency, |(_, summary)| make_label(summary, llm, cfg))?;
    for ((id, _), label) in targets.into_iter().zip(labels) {
        if let Some(n) = hierarchy.nodes.get_mut(&id) {
            n.label = Some(label);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{hash_embed, HashEmbedder};
    use crate::llm::StubLlm;

    fn unit(v: &[f64]) -> Embedding {
        normalize_l2(v).unwrap()
    }

    #[test]
    fn depth_bound_examples() {
        assert_eq!(depth_bound(6221, 10, 7), 3);
        assert_eq!(depth_bound(100_000, 10, 7), 5);
        assert_eq!(depth_bound(1, 10, 7), 1);
        assert_eq!(depth_bound(500, 10, 7), 2);
        assert_eq!(depth_bound(5, 10, 7), 1);
    }

    #[test]
    fn kmeans_identical_points() {
        let v = vec![unit(&[1.0, 2.0, 3.0]); 10];
        let r = kmeans_partition(&v, 1, 42, 100).unwrap();
        assert!(r.assignments.iter().all(|&a| a == 0));
        for (a, b) in r.centroids[0].values().iter().zip(v[0].values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn kmeans_k_equals_n() {
        let v: Vec<Embedding> = (0..6)
            .map(|i| {
                let mut x = vec![0.0; 6];
                x[i] = 1.0;
                unit(&x)
            })
            .collect();
        let r = kmeans_partition(&v, 6, 3, 100).unwrap();
        let mut seen = r.assignments.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 6);
        for (i, &a) in r.assignments.iter().enumerate() {
            assert!(dist2(v[i].values(), r.centroids[a].values()) < 1e-12);
        }
    }

    #[test]
    fn kmeans_rejects_bad_k() {
        let v = vec![unit(&[1.0, 0.0]); 3];
        assert!(matches!(
            kmeans_partition(&v, 4, 0, 10),
            Err(HierarchyError::KExceedsN { k: 4, n: 3 })
        ));
        assert!(matches!(kmeans_partition(&v, 0, 0, 10), Err(HierarchyError::ZeroK)));
    }

    #[test]
    fn kmeans_recovers_orthogonal_groups() {
        // group A near e0, group B near e1
        let mut v = Vec::new();
        for i in 0..8 {
            let eps = 0.01 * i as f64;
            v.push(unit(&[1.0, eps, 0.0, 0.0]));
            v.push(unit(&[eps, 1.0, 0.0, 0.0]));
        }
        for seed in 0..5 {
            let r = kmeans_partition(&v, 2, seed, 100).unwrap();
            let a = r.assignments[0];
            let b = r.assignments[1];
            assert_ne!(a, b);
            for i in 0..8 {
                assert_eq!(r.assignments[2 * i], a);
                assert_eq!(r.assignments[2 * i + 1], b);
            }
            // brute-force nearest-centroid check
            for (i, p) in v.iter().enumerate() {
                let best = (0..2)
                    .min_by(|&x, &y| {
                        dist2(p.values(), r.centroids[x].values())
                            .total_cmp(&dist2(p.values(), r.centroids[y].values()))
                    })
                    .unwrap();
                assert_eq!(r.assignments[i], best);
            }
        }
    }

    #[test]
    fn kmeans_is_deterministic() {
        let v: Vec<Embedding> = (0..60)
            .map(|i| hash_embed(&format!("tok{} tok{} shared", i % 7, i % 5), 32).unwrap())
            .collect();
        let a = kmeans_partition(&v, 6, 11, 100).unwrap();
        let b = kmeans_partition(&v, 6, 11, 100).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn merge_absorbs_singleton_into_nearest() {
        // two 5-point groups around e0 / e1 and one stray point closer to e1
        let mut v = Vec::new();
        for i in 0..5 {
            v.push(unit(&[1.0, 0.02 * i as f64, 0.0]));
        }
        for i in 0..5 {
            v.push(unit(&[0.02 * i as f64, 1.0, 0.0]));
        }
        v.push(unit(&[0.3, 0.6, 0.7]));
        let c = |m: Vec<usize>| Cluster {
            centroid: Embedding::from_unit(
                mean_direction(&m, &v.iter().map(Embedding::values).collect::<Vec<_>>()).unwrap(),
            ),
            members: m,
        };
        let clusters = vec![c((0..5).collect()), c((5..10).collect()), c(vec![10])];
        // oracle: brute-force nearest of point 10 among the two surviving centroids
        let d0 = dist2(v[10].values(), clusters[0].centroid.values());
        let d1 = dist2(v[10].values(), clusters[1].centroid.values());
        let expected = if d0 <= d1 { 0 } else { 1 };
        assert_eq!(expected, 1);
        let merged = merge_small_clusters(clusters.clone(), &v, 3);
        assert_eq!(merged.len(), 2);
        assert_eq!(merged[expected].members, vec![5, 6, 7, 8, 9, 10]);
        assert_eq!(merged[0].members.len() + merged[1].members.len(), 11);

        let unchanged = merge_small_clusters(clusters[..2].to_vec(), &v, 3);
        assert_eq!(unchanged, clusters[..2].to_vec());

        let lone = merge_small_clusters(vec![clusters[2].clone()], &v, 3);
        assert_eq!(lone.len(), 1);
        assert_eq!(lone[0].members, vec![10]);
    }

    #[test]
    fn cluster_level_requests_ceiling() {
        let params = ClusterParams {
            min_size: 1,
            ..Default::default()
        };
        let items: Vec<(String, Embedding)> = (0..11)
            .map(|i| (format!("d{i}"), hash_embed(&format!("w{i} common"), 64).unwrap()))
            .collect();
        assert_eq!(cluster_level(&items, &params).unwrap().requested_k, 2);
        assert_eq!(cluster_level(&items[..10], &params).unwrap().requested_k, 1);
        let one = cluster_level(&items[..10], &params).unwrap();
        assert_eq!(one.clusters.len(), 1);
        assert_eq!(one.clusters[0].members.len(), 10);
        assert_eq!(6221usize.div_ceil(10), 623);
    }

    fn tiny_manifest(n: usize) -> CorpusManifest {
        let documents = (0..n)
            .map(|i| {
                let text = format!("topic{} alpha{} body text number {i}", i % 4, i % 4);
                Document {
                    id: crate::corpus::assign_id(&text).unwrap(),
                    title: format!("doc {i}"),
                    char_count: text.len(),
                    text,
                    source_path: format!("{i}.md"),
                }
            })
            .collect();
        CorpusManifest {
            documents,
            max_chars: 2000,
        }
    }

    fn build(n: usize, params: ClusterParams) -> Hierarchy {
        let m = tiny_manifest(n);
        let emb = HashEmbedder::new(64);
        let texts: Vec<String> = m.documents.iter().map(|d| d.text.clone()).collect();
        let vecs = embed_corpus(&texts, &emb, EmbedMode::Document, 1).unwrap();
        let cfg = SummarizationConfig::default();
        let mut h = build_hierarchy(&m, &vecs, &params, &cfg, &StubLlm, &emb).unwrap();
        label_hierarchy(&mut h, &StubLlm, &cfg).unwrap();
        h
    }

    #[test]
    fn five_docs_make_one_root() {
        let h = build(5, ClusterParams::default());
        assert_eq!(h.levels, 1);
        assert_eq!(h.roots.len(), 1);
        let root = h.node(&h.roots[0]).unwrap();
        assert_eq!(root.num_documents, 5);
        assert!(root.label.is_some());
        assert!(root.summary.starts_with("summary of 5 items"));
    }

    #[test]
    fn build_partitions_documents() {
        let params = ClusterParams {
            branching: 3,
            max_roots: 2,
            min_size: 2,
            ..Default::default()
        };
        let h = build(60, params);
        let mut leaves = h.leaf_doc_ids();
        leaves.sort();
        let mut all = h.doc_ids.clone();
        all.sort();
        assert_eq!(leaves, all);
        assert!(h.roots.len() <= 2);
        assert_eq!(h.levels, h.level_stats.len() as u32);
        for n in h.nodes.values() {
            assert!(n.member_doc_ids.is_empty() != n.child_node_ids.is_empty());
            if !n.is_leaf() {
                let s: usize = h.children(n).map(|c| c.num_documents).sum();
                assert_eq!(s, n.num_documents);
            }
        }
        let json = h.to_json(true);
        assert_eq!(Hierarchy::from_json(&json).unwrap(), h);
    }

    #[test]
    fn build_is_deterministic() {
        let params = ClusterParams {
            branching: 4,
            max_roots: 3,
            ..Default::default()
        };
        assert_eq!(build(40, params).to_json(true), build(40, params).to_json(true));
    }
}

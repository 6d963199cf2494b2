//! Per-shard hierarchical k-means trees searched best-first under a node
//! budget. Only centroids are stored; leaf points are never kept, since
//! the tree's job is to coarsen the shard, not to search it.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{distance_key, key_to_distance, Dataset, MetricTag};
use crate::partition::kmeans::lloyd;
use crate::partition::Partition;
use crate::rng::split;
use crate::routing::ProbeOrder;
use crate::{Error, Result};

const KMR_KMEANS_ROUNDS: usize = 10;

/// Training knobs. The index stores at most `m` centroids overall, split
/// across shards in proportion to their size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KmrParams {
    /// Centroids per tree node.
    pub l: usize,
    /// Clusters at or below this size are not refined further.
    pub lambda: usize,
    /// Total centroid budget across all shards.
    pub m: usize,
    pub seed: u64,
}

impl KmrParams {
    pub fn new(m: usize) -> Self {
        KmrParams {
            l: 64,
            lambda: 350,
            m,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct KmrNode {
    /// `count * d` centroid coordinates.
    centroids: Vec<f32>,
    /// Child node index per centroid; `-1` where the centroid is a leaf.
    children: Vec<i32>,
}

/// One root per shard; every node holds up to `l` centroids with optional
/// subtrees. The total centroid count never exceeds the budget `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmrTree {
    d: usize,
    metric: MetricTag,
    num_shards: u32,
    params: KmrParams,
    nodes: Vec<KmrNode>,
    roots: Vec<u32>,
    total_centroids: usize,
}

impl KmrTree {
    pub fn num_shards(&self) -> u32 {
        self.num_shards
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn metric(&self) -> MetricTag {
        self.metric
    }

    pub fn total_centroids(&self) -> usize {
        self.total_centroids
    }

    pub fn params(&self) -> &KmrParams {
        &self.params
    }

    /// All stored centroids of one shard, flattened (the "Exact NN"
    /// ablation scans these directly).
    pub fn shard_centroids(&self, shard: u32) -> Vec<f32> {
        let mut out = Vec::new();
        let mut stack = vec![self.roots[shard as usize]];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            out.extend_from_slice(&node.centroids);
            for &c in &node.children {
                if c >= 0 {
                    stack.push(c as u32);
                }
            }
        }
        out
    }
}

fn build_shard(
    data: &Dataset,
    members: &[u32],
    l: usize,
    budget: f64,
    lambda: usize,
    seed: u64,
    nodes: &mut Vec<KmrNode>,
) -> u32 {
    let root = nodes.len() as u32;
    nodes.push(KmrNode {
        centroids: Vec::new(),
        children: Vec::new(),
    });
    if budget > 1.0 && !members.is_empty() {
        build_node(data, members, l, budget, lambda, seed, root, nodes);
    }
    root
}

fn build_node(
    data: &Dataset,
    members: &[u32],
    l: usize,
    budget: f64,
    lambda: usize,
    seed: u64,
    node: u32,
    nodes: &mut Vec<KmrNode>,
) {
    let count = l.min(members.len()).min(budget.floor() as usize);
    if count == 0 {
        return;
    }
    let subset = data.gather(members);
    let (labels, centroids) = lloyd(&subset, count, KMR_KMEANS_ROUNDS, seed);
    nodes[node as usize].centroids = centroids.centers_flat().to_vec();
    nodes[node as usize].children = vec![-1; count];

    let mut clusters: Vec<Vec<u32>> = vec![Vec::new(); count];
    for (pos, &label) in labels.iter().enumerate() {
        clusters[label as usize].push(members[pos]);
    }
    for (ci, cluster) in clusters.into_iter().enumerate() {
        // the second condition guards degenerate splits (duplicate-heavy
        // data) that would otherwise recurse without shrinking
        if cluster.len() <= lambda || cluster.len() == members.len() {
            continue;
        }
        // one l is spent on this node's centroids before recursing
        let child_budget = (budget - l as f64) * cluster.len() as f64 / members.len() as f64;
        if child_budget <= 1.0 {
            continue;
        }
        let child = nodes.len() as u32;
        nodes.push(KmrNode {
            centroids: Vec::new(),
            children: Vec::new(),
        });
        nodes[node as usize].children[ci] = child as i32;
        build_node(
            data,
            &cluster,
            l,
            child_budget,
            lambda,
            split(seed, 0x720 + ci as u64),
            child,
            nodes,
        );
    }
}

/// Trains one k-means tree per shard. The budget `m - s` is divided among
/// shards in proportion to their size (relative to the total assignment
/// volume, so replicated points count everywhere they appear).
pub fn kmr_train(data: &Dataset, p: &Partition, params: &KmrParams) -> Result<KmrTree> {
    let s = p.num_shards();
    if params.m <= s as usize {
        return Err(Error::input(format!(
            "index budget m={} must exceed the shard count {s}",
            params.m
        )));
    }
    if params.lambda < 2 || params.l < 1 {
        return Err(Error::input("need lambda >= 2 and l >= 1"));
    }
    if p.len() != data.len() {
        return Err(Error::input("partition and dataset node counts differ"));
    }

    let members = p.shard_members();
    let volume = p.volume() as f64;
    let spare = (params.m - s as usize) as f64;

    let shard_arenas: Vec<Vec<KmrNode>> = members
        .par_iter()
        .enumerate()
        .map(|(i, shard_members)| {
            let mut nodes = Vec::new();
            let budget = shard_members.len() as f64 * spare / volume;
            build_shard(
                data,
                shard_members,
                params.l,
                budget,
                params.lambda,
                split(params.seed, 0x4B00 + i as u64),
                &mut nodes,
            );
            nodes
        })
        .collect();

    let mut nodes = Vec::new();
    let mut roots = Vec::with_capacity(s as usize);
    for arena in shard_arenas {
        let base = nodes.len() as i32;
        roots.push(base as u32);
        for mut node in arena {
            for c in node.children.iter_mut() {
                if *c >= 0 {
                    *c += base;
                }
            }
            nodes.push(node);
        }
    }
    let d = data.dim();
    let total_centroids: usize = nodes.iter().map(|n| n.centroids.len() / d).sum();
    debug_assert!(total_centroids <= params.m);
    Ok(KmrTree {
        d,
        metric: data.metric(),
        num_shards: s,
        params: *params,
        nodes,
        roots,
        total_centroids,
    })
}

/// Heap key with a total order over f32 distances.
#[derive(PartialEq)]
struct HeapEntry {
    dist: f32,
    shard: u32,
    node: u32,
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.shard.cmp(&other.shard))
            .then(self.node.cmp(&other.node))
    }
}

/// Best-first tree search: pop up to `budget` nodes from a min-heap seeded
/// with all roots, score their centroids, and push children keyed by their
/// centroid's distance. Shards rank by the minimum distance seen, with
/// never-touched shards last (ascending id).
pub fn kmr_route(tree: &KmrTree, q: &[f32], budget: usize) -> ProbeOrder {
    let s = tree.num_shards as usize;
    let mut min_dist = vec![f32::INFINITY; s];
    let mut heap: BinaryHeap<Reverse<HeapEntry>> = BinaryHeap::new();
    for (shard, &root) in tree.roots.iter().enumerate() {
        heap.push(Reverse(HeapEntry {
            dist: 0.0,
            shard: shard as u32,
            node: root,
        }));
    }
    let mut remaining = budget;
    while remaining > 0 {
        let Some(Reverse(entry)) = heap.pop() else {
            break;
        };
        remaining -= 1;
        let node = &tree.nodes[entry.node as usize];
        for (ci, centroid) in node.centroids.chunks_exact(tree.d).enumerate() {
            let dist = key_to_distance(tree.metric, distance_key(tree.metric, q, centroid));
            if dist < min_dist[entry.shard as usize] {
                min_dist[entry.shard as usize] = dist;
            }
            let child = node.children[ci];
            if child >= 0 {
                heap.push(Reverse(HeapEntry {
                    dist,
                    shard: entry.shard,
                    node: child as u32,
                }));
            }
        }
    }
    let mut order: Vec<u32> = (0..s as u32).collect();
    order.sort_by(|&a, &b| {
        min_dist[a as usize]
            .total_cmp(&min_dist[b as usize])
            .then(a.cmp(&b))
    });
    let scores = order.iter().map(|&sid| min_dist[sid as usize]).collect();
    ProbeOrder::new(order, scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng;
    use rand::Rng;

    fn random_data(n: usize, d: usize, seed: u64) -> Dataset {
        let mut r = rng(seed);
        let values: Vec<f32> = (0..n * d).map(|_| r.gen_range(-1.0..1.0f32)).collect();
        Dataset::new(values, d, MetricTag::L2).unwrap()
    }

    fn even_partition(n: usize, s: u32) -> Partition {
        let labels: Vec<u32> = (0..n).map(|i| (i as u32) % s).collect();
        Partition::disjoint(labels, s, 0.05).unwrap()
    }

    #[test]
    fn budget_below_two_leaves_empty_roots() {
        let data = random_data(40, 3, 1);
        let p = even_partition(40, 4);
        // m - s = 1 spread over 4 shards: every root budget is 0.25
        let tree = kmr_train(&data, &p, &KmrParams::new(5)).unwrap();
        assert_eq!(tree.total_centroids(), 0);
        let po = kmr_route(&tree, data.row(0), 100);
        assert!(po.is_permutation());
        assert_eq!(po.order(), &[0, 1, 2, 3]);
    }

    #[test]
    fn identical_points_build_one_degenerate_node() {
        let data = Dataset::new(vec![2.0f32; 10 * 3], 3, MetricTag::L2).unwrap();
        let p = even_partition(10, 1);
        let params = KmrParams {
            l: 2,
            lambda: 2,
            m: 100,
            seed: 0,
        };
        let tree = kmr_train(&data, &p, &params).unwrap();
        assert!(tree.total_centroids() <= 2);
        // all ten duplicates collapse into clusters no deeper than the root
        assert_eq!(tree.nodes.len(), 1);
    }

    #[test]
    fn budget_is_never_exceeded() {
        let data = random_data(5000, 8, 2);
        let p = even_partition(5000, 8);
        for m in [100, 1000] {
            let params = KmrParams {
                l: 16,
                lambda: 20,
                m,
                seed: 3,
            };
            let tree = kmr_train(&data, &p, &params).unwrap();
            assert!(tree.total_centroids() <= m, "m={m}");
            // independent recount through the per-shard walk
            let walked: usize = (0..8u32)
                .map(|sidx| tree.shard_centroids(sidx).len() / 8)
                .sum();
            assert_eq!(walked, tree.total_centroids());
        }
    }

    #[test]
    fn exact_centroid_match_ranks_its_shard_first() {
        let data = random_data(400, 4, 4);
        let p = even_partition(400, 4);
        let params = KmrParams {
            l: 8,
            lambda: 10,
            m: 200,
            seed: 5,
        };
        let tree = kmr_train(&data, &p, &params).unwrap();
        let c = tree.shard_centroids(2);
        let q: Vec<f32> = c[..4].to_vec();
        let po = kmr_route(&tree, &q, 10_000);
        assert_eq!(po.order()[0], 2);
        assert_eq!(po.scores()[0], 0.0);
    }

    #[test]
    fn budget_s_pops_only_roots() {
        let data = random_data(600, 4, 6);
        let p = even_partition(600, 3);
        let params = KmrParams {
            l: 4,
            lambda: 5,
            m: 300,
            seed: 7,
        };
        let tree = kmr_train(&data, &p, &params).unwrap();
        let q = data.row(0);
        let po_roots = kmr_route(&tree, q, 3);
        // equivalent to scoring only the root centroids of each shard
        let mut expected: Vec<(f32, u32)> = (0..3u32)
            .map(|sidx| {
                let root = &tree.nodes[tree.roots[sidx as usize] as usize];
                let best = root
                    .centroids
                    .chunks_exact(4)
                    .map(|c| key_to_distance(MetricTag::L2, distance_key(MetricTag::L2, q, c)))
                    .fold(f32::INFINITY, f32::min);
                (best, sidx)
            })
            .collect();
        expected.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let expected_order: Vec<u32> = expected.iter().map(|&(_, sidx)| sidx).collect();
        assert_eq!(po_roots.order(), expected_order.as_slice());
    }

    #[test]
    fn two_blob_queries_route_home() {
        let mut r = rng(8);
        let mut values = Vec::new();
        for i in 0..1000 {
            let offset = if i < 500 { 0.0f32 } else { 200.0 };
            for _ in 0..4 {
                values.push(offset + r.gen_range(-1.0..1.0f32));
            }
        }
        let data = Dataset::new(values, 4, MetricTag::L2).unwrap();
        let labels: Vec<u32> = (0..1000).map(|i| if i < 500 { 0 } else { 1 }).collect();
        let p = Partition::disjoint(labels, 2, 0.05).unwrap();
        let tree = kmr_train(
            &data,
            &p,
            &KmrParams {
                l: 8,
                lambda: 20,
                m: 100,
                seed: 9,
            },
        )
        .unwrap();
        let mut hits = 0;
        for t in 0..100 {
            let q = vec![
                r.gen_range(-1.0..1.0f32),
                r.gen_range(-1.0..1.0f32),
                r.gen_range(-1.0..1.0f32),
                r.gen_range(-1.0..1.0f32),
            ];
            let po = kmr_route(&tree, &q, 1000);
            hits += (po.order()[0] == 0) as usize;
            let _ = t;
        }
        assert!(hits >= 99, "only {hits}/100 queries routed to the home shard");
    }

    #[test]
    fn routing_is_deterministic() {
        let data = random_data(800, 6, 10);
        let p = even_partition(800, 5);
        let tree = kmr_train(
            &data,
            &p,
            &KmrParams {
                l: 8,
                lambda: 10,
                m: 400,
                seed: 11,
            },
        )
        .unwrap();
        let q = data.row(42);
        assert_eq!(kmr_route(&tree, q, 50), kmr_route(&tree, q, 50));
    }
}

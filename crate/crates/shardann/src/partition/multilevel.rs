//! Built-in multilevel balanced graph partitioner.
//!
//! Three stages: size-constrained label-propagation coarsening down to a
//! few super-nodes per shard, greedy region growing on the coarsest graph,
//! then uncoarsening with boundary FM-style local search. Refinement moves
//! are accepted only when the cut does not increase (or stays equal while
//! balance strictly improves), so the cut is monotone through refinement.
//! Single-threaded and deterministic for a fixed seed.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::graph::KnnGraph;
use crate::partition::{check_feasible, Partition};
use crate::rng::{rng, split};
use crate::{Error, Result};

/// Undirected weighted graph in CSR form; edge weights count the k-NN arcs
/// between the endpoints, so the weighted cut equals the directed arc cut.
struct Level {
    offsets: Vec<usize>,
    targets: Vec<u32>,
    weights: Vec<u64>,
    node_weight: Vec<u64>,
}

impl Level {
    fn len(&self) -> usize {
        self.node_weight.len()
    }

    fn edges(&self, u: usize) -> impl Iterator<Item = (u32, u64)> + '_ {
        self.targets[self.offsets[u]..self.offsets[u + 1]]
            .iter()
            .copied()
            .zip(self.weights[self.offsets[u]..self.offsets[u + 1]].iter().copied())
    }

    fn from_knn(graph: &KnnGraph) -> Level {
        let n = graph.len();
        let mut pairs: Vec<Vec<u32>> = vec![Vec::new(); n];
        for u in 0..n {
            for &v in graph.neighbors(u) {
                pairs[u].push(v);
                pairs[v as usize].push(u as u32);
            }
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for list in pairs.iter_mut() {
            list.sort_unstable();
            let mut i = 0;
            while i < list.len() {
                let v = list[i];
                let mut w = 0u64;
                while i < list.len() && list[i] == v {
                    w += 1;
                    i += 1;
                }
                targets.push(v);
                weights.push(w);
            }
            offsets.push(targets.len());
        }
        Level {
            offsets,
            targets,
            weights,
            node_weight: vec![1; n],
        }
    }

    fn contract(&self, mapping: &[u32], num_clusters: usize) -> Level {
        let mut node_weight = vec![0u64; num_clusters];
        for (u, &c) in mapping.iter().enumerate() {
            node_weight[c as usize] += self.node_weight[u];
        }
        let mut coarse: Vec<Vec<(u32, u64)>> = vec![Vec::new(); num_clusters];
        for u in 0..self.len() {
            let cu = mapping[u];
            for (v, w) in self.edges(u) {
                let cv = mapping[v as usize];
                if cu != cv {
                    coarse[cu as usize].push((cv, w));
                }
            }
        }
        let mut offsets = Vec::with_capacity(num_clusters + 1);
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for list in coarse.iter_mut() {
            list.sort_unstable_by_key(|&(v, _)| v);
            let mut i = 0;
            while i < list.len() {
                let v = list[i].0;
                let mut w = 0u64;
                while i < list.len() && list[i].0 == v {
                    w += list[i].1;
                    i += 1;
                }
                targets.push(v);
                weights.push(w);
            }
            offsets.push(targets.len());
        }
        Level {
            offsets,
            targets,
            weights,
            node_weight,
        }
    }

    /// Directed-arc cut of a labeling: each undirected edge counted once
    /// with its weight.
    fn cut(&self, labels: &[u32]) -> u64 {
        let mut twice = 0u64;
        for u in 0..self.len() {
            for (v, w) in self.edges(u) {
                if labels[u] != labels[v as usize] {
                    twice += w;
                }
            }
        }
        twice / 2
    }
}

/// Scratch map for connectivity sums keyed by cluster/part id.
struct ConnScratch {
    conn: Vec<u64>,
    touched: Vec<u32>,
}

impl ConnScratch {
    fn new(size: usize) -> Self {
        ConnScratch {
            conn: vec![0; size],
            touched: Vec::new(),
        }
    }

    #[inline]
    fn add(&mut self, key: u32, w: u64) {
        if self.conn[key as usize] == 0 {
            self.touched.push(key);
        }
        self.conn[key as usize] += w;
    }

    #[inline]
    fn get(&self, key: u32) -> u64 {
        self.conn[key as usize]
    }

    fn clear(&mut self) {
        for &t in &self.touched {
            self.conn[t as usize] = 0;
        }
        self.touched.clear();
    }
}

const LP_ROUNDS: usize = 5;
const FM_PASSES: usize = 8;
const COARSE_NODES_PER_SHARD: usize = 20;

/// One label-propagation coarsening step under a cluster weight cap.
/// Returns the contracted graph and the node-to-cluster mapping, or `None`
/// if no nodes merged.
fn coarsen(level: &Level, cap: u64, seed: u64) -> Option<(Level, Vec<u32>)> {
    let n = level.len();
    let mut cluster: Vec<u32> = (0..n as u32).collect();
    let mut cluster_weight = level.node_weight.clone();
    let mut scratch = ConnScratch::new(n);
    let mut order: Vec<u32> = (0..n as u32).collect();

    for round in 0..LP_ROUNDS {
        let mut r = rng(split(seed, 0x1A00 + round as u64));
        order.shuffle(&mut r);
        let mut moves = 0usize;
        for &u in &order {
            let u = u as usize;
            let cur = cluster[u];
            scratch.clear();
            for (v, w) in level.edges(u) {
                scratch.add(cluster[v as usize], w);
            }
            let mut best: Option<(u64, u32)> = None;
            for &c in &scratch.touched {
                if c == cur || cluster_weight[c as usize] + level.node_weight[u] > cap {
                    continue;
                }
                let w = scratch.get(c);
                let better = best.map_or(true, |(bw, bc)| w > bw || (w == bw && c < bc));
                if better {
                    best = Some((w, c));
                }
            }
            if let Some((w, c)) = best {
                // move only towards strictly stronger connectivity
                if w > scratch.get(cur) {
                    cluster_weight[cur as usize] -= level.node_weight[u];
                    cluster_weight[c as usize] += level.node_weight[u];
                    cluster[u] = c;
                    moves += 1;
                }
            }
        }
        if moves == 0 {
            break;
        }
    }

    // compact ids in order of first appearance
    let mut remap = vec![u32::MAX; n];
    let mut next = 0u32;
    let mut mapping = vec![0u32; n];
    for u in 0..n {
        let c = cluster[u] as usize;
        if remap[c] == u32::MAX {
            remap[c] = next;
            next += 1;
        }
        mapping[u] = remap[c];
    }
    if next as usize == n {
        return None;
    }
    let coarse = level.contract(&mapping, next as usize);
    Some((coarse, mapping))
}

/// Greedy region growing: grow each part around a random seed node,
/// preferring the unassigned node best connected to the region.
fn initial_partition(level: &Level, s: u32, cap: u64, seed: u64) -> Vec<u32> {
    let n = level.len();
    let total: u64 = level.node_weight.iter().sum();
    let mut labels = vec![u32::MAX; n];
    let mut part_weight = vec![0u64; s as usize];
    let mut r = rng(seed);
    let mut assigned_weight = 0u64;

    // connectivity of each unassigned node to the region being grown
    let mut conn = vec![0u64; n];

    for part in 0..s {
        let remaining = total - assigned_weight;
        if remaining == 0 {
            break;
        }
        let target = remaining as f64 / (s - part) as f64;
        for c in conn.iter_mut() {
            *c = 0;
        }

        let unassigned: Vec<u32> = (0..n as u32).filter(|&u| labels[u as usize] == u32::MAX).collect();
        if unassigned.is_empty() {
            break;
        }
        let start = unassigned[r.gen_range(0..unassigned.len())];
        let mut pending: Option<u32> = Some(start);

        loop {
            let Some(u) = pending else { break };
            let u = u as usize;
            labels[u] = part;
            part_weight[part as usize] += level.node_weight[u];
            assigned_weight += level.node_weight[u];
            for (v, w) in level.edges(u) {
                if labels[v as usize] == u32::MAX {
                    conn[v as usize] += w;
                }
            }
            if part_weight[part as usize] as f64 >= target {
                break;
            }
            // best-connected unassigned node that still fits the cap
            let mut best: Option<(u64, u32)> = None;
            for v in 0..n as u32 {
                if labels[v as usize] != u32::MAX || conn[v as usize] == 0 {
                    continue;
                }
                if part_weight[part as usize] + level.node_weight[v as usize] > cap {
                    continue;
                }
                if best.map_or(true, |(bw, bv)| conn[v as usize] > bw || (conn[v as usize] == bw && v < bv)) {
                    best = Some((conn[v as usize], v));
                }
            }
            pending = match best {
                Some((_, v)) => Some(v),
                None => {
                    // disconnected frontier: jump to a random unassigned node
                    let fits: Vec<u32> = (0..n as u32)
                        .filter(|&v| {
                            labels[v as usize] == u32::MAX
                                && part_weight[part as usize] + level.node_weight[v as usize] <= cap
                        })
                        .collect();
                    if fits.is_empty() {
                        None
                    } else {
                        Some(fits[r.gen_range(0..fits.len())])
                    }
                }
            };
        }
    }

    // leftovers go to the lightest part that fits (or the lightest overall)
    for u in 0..n {
        if labels[u] != u32::MAX {
            continue;
        }
        let w = level.node_weight[u];
        let mut best: Option<u32> = None;
        for p in 0..s {
            let fits = part_weight[p as usize] + w <= cap;
            let lighter = best.map_or(true, |b| part_weight[p as usize] < part_weight[b as usize]);
            if fits && lighter {
                best = Some(p);
            }
        }
        let p = best.unwrap_or_else(|| {
            (0..s).min_by_key(|&p| part_weight[p as usize]).unwrap()
        });
        labels[u] = p;
        part_weight[p as usize] += w;
    }
    labels
}

/// Moves nodes out of parts over the cap, one at a time, choosing the move
/// that damages the cut the least. At unit node weights this always
/// succeeds; at coarse granularity it may leave residual overload for the
/// finer levels to fix.
fn repair_balance(level: &Level, labels: &mut [u32], s: u32, cap: u64) {
    let n = level.len();
    let mut part_weight = vec![0u64; s as usize];
    for u in 0..n {
        part_weight[labels[u] as usize] += level.node_weight[u];
    }
    let mut scratch = ConnScratch::new(s as usize);
    loop {
        let Some(over) = (0..s)
            .filter(|&p| part_weight[p as usize] > cap)
            .max_by_key(|&p| part_weight[p as usize])
        else {
            break;
        };
        // least-damage move of any member of the overloaded part
        let mut best: Option<(i64, u32, u32)> = None; // (damage, node, target)
        for u in 0..n {
            if labels[u] != over {
                continue;
            }
            scratch.clear();
            for (v, w) in level.edges(u) {
                scratch.add(labels[v as usize], w);
            }
            let own = scratch.get(over);
            for p in 0..s {
                if p == over || part_weight[p as usize] + level.node_weight[u] > cap {
                    continue;
                }
                let damage = own as i64 - scratch.get(p) as i64;
                let better = match best {
                    None => true,
                    Some((bd, bu, bp)) => {
                        damage < bd || (damage == bd && (u as u32, p) < (bu, bp))
                    }
                };
                if better {
                    best = Some((damage, u as u32, p));
                }
            }
        }
        let Some((_, u, p)) = best else { break };
        let u = u as usize;
        part_weight[over as usize] -= level.node_weight[u];
        part_weight[p as usize] += level.node_weight[u];
        labels[u] = p;
    }
}

/// Boundary local search. A move is accepted when it reduces the cut, or
/// keeps it equal while strictly lightening the donor part relative to the
/// receiver. Returns the cut after refinement.
fn fm_refine(level: &Level, labels: &mut [u32], s: u32, cap: u64) -> u64 {
    let n = level.len();
    let mut part_weight = vec![0u64; s as usize];
    for u in 0..n {
        part_weight[labels[u] as usize] += level.node_weight[u];
    }
    let mut cut = level.cut(labels);
    let mut scratch = ConnScratch::new(s as usize);

    for _pass in 0..FM_PASSES {
        let mut moved = false;
        for u in 0..n {
            let cur = labels[u];
            let mut boundary = false;
            for (v, _) in level.edges(u) {
                if labels[v as usize] != cur {
                    boundary = true;
                    break;
                }
            }
            if !boundary {
                continue;
            }
            scratch.clear();
            for (v, w) in level.edges(u) {
                scratch.add(labels[v as usize], w);
            }
            let own = scratch.get(cur);
            let mut best: Option<(i64, u32)> = None;
            for &p in &scratch.touched {
                if p == cur || part_weight[p as usize] + level.node_weight[u] > cap {
                    continue;
                }
                let gain = scratch.get(p) as i64 - own as i64;
                let better = best.map_or(true, |(bg, bp)| gain > bg || (gain == bg && p < bp));
                if better {
                    best = Some((gain, p));
                }
            }
            let Some((gain, p)) = best else { continue };
            let improves_balance =
                part_weight[p as usize] + level.node_weight[u] < part_weight[cur as usize];
            if gain > 0 || (gain == 0 && improves_balance) {
                part_weight[cur as usize] -= level.node_weight[u];
                part_weight[p as usize] += level.node_weight[u];
                labels[u] = p;
                let new_cut = (cut as i64 - gain) as u64;
                debug_assert!(new_cut <= cut, "refinement must never increase the cut");
                cut = new_cut;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    debug_assert_eq!(cut, level.cut(labels));
    cut
}

/// Cut bookkeeping of one refinement pass, per level (coarsest first).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FmLevelStats {
    pub nodes: usize,
    pub cut_before: u64,
    pub cut_after: u64,
}

/// Partitions the nodes of a k-NN graph into `s` shards of size at most
/// `floor((1+epsilon) * n / s)` while heuristically minimizing the number
/// of cut arcs. Deterministic for a fixed seed.
pub fn partition_graph(graph: &KnnGraph, s: u32, epsilon: f64, seed: u64) -> Result<Partition> {
    Ok(partition_graph_traced(graph, s, epsilon, seed)?.0)
}

/// [`partition_graph`] plus per-level refinement cut statistics.
pub fn partition_graph_traced(
    graph: &KnnGraph,
    s: u32,
    epsilon: f64,
    seed: u64,
) -> Result<(Partition, Vec<FmLevelStats>)> {
    let n = graph.len();
    if n == 0 {
        return Err(Error::input("graph is empty"));
    }
    if s < 2 {
        return Err(Error::input("need at least two shards"));
    }
    if s as usize > n {
        return Err(Error::input(format!("s={s} exceeds node count {n}")));
    }
    let cap = check_feasible(n, s, epsilon)? as u64;

    let mut levels: Vec<Level> = vec![Level::from_knn(graph)];
    let mut mappings: Vec<Vec<u32>> = Vec::new();
    let coarse_target = COARSE_NODES_PER_SHARD * s as usize;
    let lp_cap = std::cmp::max(1, (n / coarse_target) as u64);

    while levels.last().unwrap().len() > coarse_target {
        let current = levels.last().unwrap();
        let before = current.len();
        let Some((coarse, mapping)) = coarsen(current, lp_cap, split(seed, 0xC0A0 + levels.len() as u64))
        else {
            break;
        };
        if coarse.len() as f64 > 0.95 * before as f64 {
            break;
        }
        levels.push(coarse);
        mappings.push(mapping);
    }

    let mut stats = Vec::new();
    let coarsest = levels.last().unwrap();
    let mut labels = initial_partition(coarsest, s, cap, split(seed, 0xACE));
    repair_balance(coarsest, &mut labels, s, cap);
    let before = coarsest.cut(&labels);
    let after = fm_refine(coarsest, &mut labels, s, cap);
    stats.push(FmLevelStats {
        nodes: coarsest.len(),
        cut_before: before,
        cut_after: after,
    });

    for li in (0..mappings.len()).rev() {
        let fine = &levels[li];
        let mapping = &mappings[li];
        let mut fine_labels = vec![0u32; fine.len()];
        for u in 0..fine.len() {
            fine_labels[u] = labels[mapping[u] as usize];
        }
        labels = fine_labels;
        repair_balance(fine, &mut labels, s, cap);
        let before = fine.cut(&labels);
        let after = fm_refine(fine, &mut labels, s, cap);
        stats.push(FmLevelStats {
            nodes: fine.len(),
            cut_before: before,
            cut_after: after,
        });
    }

    let p = Partition::disjoint(labels, s, epsilon)?;
    debug_assert!(p.shard_sizes().into_iter().all(|sz| sz <= cap as usize));
    Ok((p, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Dataset, MetricTag};
    use crate::graph::build_exact_knn;
    use crate::partition::{cut_edges, l_max};
    use rand::Rng;

    fn two_far_clusters(per: usize, seed: u64) -> Dataset {
        let mut r = rng(seed);
        let mut values = Vec::new();
        for i in 0..2 * per {
            let offset = if i < per { 0.0f32 } else { 1000.0 };
            values.push(offset + r.gen_range(-1.0..1.0f32));
            values.push(offset + r.gen_range(-1.0..1.0f32));
        }
        Dataset::new(values, 2, MetricTag::L2).unwrap()
    }

    #[test]
    fn disconnected_halves_get_cut_zero() {
        let data = two_far_clusters(50, 3);
        let g = build_exact_knn(&data, 5).unwrap();
        let p = partition_graph(&g, 2, 0.05, 42).unwrap();
        assert_eq!(cut_edges(&g, &p).unwrap(), 0);
        let cap = l_max(100, 2, 0.05);
        assert!(p.shard_sizes().into_iter().all(|sz| sz <= cap));
    }

    #[test]
    fn shard_sizes_respect_the_limit() {
        let mut r = rng(11);
        let values: Vec<f32> = (0..100 * 4).map(|_| r.gen_range(-1.0..1.0f32)).collect();
        let data = Dataset::new(values, 4, MetricTag::L2).unwrap();
        let g = build_exact_knn(&data, 6).unwrap();
        let p = partition_graph(&g, 4, 0.05, 7).unwrap();
        assert!(p.shard_sizes().into_iter().all(|sz| sz <= 26));
    }

    #[test]
    fn deterministic_per_seed() {
        let mut r = rng(12);
        let values: Vec<f32> = (0..500 * 4).map(|_| r.gen_range(-1.0..1.0f32)).collect();
        let data = Dataset::new(values, 4, MetricTag::L2).unwrap();
        let g = build_exact_knn(&data, 8).unwrap();
        let a = partition_graph(&g, 5, 0.05, 99).unwrap();
        let b = partition_graph(&g, 5, 0.05, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn refinement_never_worsens_the_initial_cut() {
        let mut r = rng(13);
        let values: Vec<f32> = (0..800 * 4).map(|_| r.gen_range(-1.0..1.0f32)).collect();
        let data = Dataset::new(values, 4, MetricTag::L2).unwrap();
        let g = build_exact_knn(&data, 8).unwrap();
        let level = Level::from_knn(&g);
        let cap = l_max(800, 4, 0.05) as u64;
        let mut labels = initial_partition(&level, 4, cap, 5);
        repair_balance(&level, &mut labels, 4, cap);
        let before = level.cut(&labels);
        let after = fm_refine(&level, &mut labels, 4, cap);
        assert!(after <= before);
        assert_eq!(after, level.cut(&labels));
    }

    #[test]
    fn rejects_bad_shapes() {
        let data = two_far_clusters(10, 4);
        let g = build_exact_knn(&data, 3).unwrap();
        assert!(partition_graph(&g, 1, 0.05, 0).is_err());
        assert!(partition_graph(&g, 21, 0.05, 0).is_err());
    }
}

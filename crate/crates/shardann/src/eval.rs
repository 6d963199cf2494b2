//! Quality harness: the routing oracle, recall-vs-probes curves under
//! exhaustive in-shard search, graph-quality sweeps, and the routing-loss
//! ablation.
//!
//! Exhaustive in-shard search is computed as ground-truth coverage (which
//! true neighbors fall inside the probed shards); this matches a literal
//! vector scan up to distance ties, which the global id tie rule resolves.
//! A literal scan exists in [`literal_scan_recall`] for spot validation.

use rayon::prelude::*;

use crate::dataset::{distance_key, Dataset};
use crate::graph::{build_approx_knn, build_exact_knn, graph_recall, BallCarvingParams};
use crate::partition::{partition_graph, Partition};
use crate::routing::{kmr_route, kmr_train, KmrParams, KmrTree, ProbeOrder};
use crate::topk::TopK;
use crate::truth::GroundTruth;
use crate::{Error, Result};

/// Mean recall@k per probe count (index 0 holds eta = 1).
#[derive(Debug, Clone, PartialEq)]
pub struct RecallCurve {
    pub label: String,
    pub k: usize,
    pub values: Vec<f64>,
}

impl RecallCurve {
    /// Mean recall when probing the first `eta` shards.
    pub fn at(&self, eta: usize) -> f64 {
        self.values[eta - 1]
    }

    pub fn num_shards(&self) -> usize {
        self.values.len()
    }

    pub fn is_monotone(&self) -> bool {
        self.values.windows(2).all(|w| w[0] <= w[1] + 1e-12)
    }
}

/// The hypothetical optimal prober. For disjoint partitions, shards sorted
/// by how many of the query's true top-k they hold (optimal at every prefix
/// length). For overlapping partitions, greedy maximum marginal coverage.
pub fn oracle_probe_order(gt: &GroundTruth, p: &Partition) -> Vec<ProbeOrder> {
    let s = p.num_shards() as usize;
    (0..gt.num_queries())
        .into_par_iter()
        .map(|q| {
            let truth = gt.ids(q);
            if p.is_disjoint() {
                let mut counts = vec![0u32; s];
                for &t in truth {
                    counts[p.shards_of(t as usize)[0] as usize] += 1;
                }
                let mut order: Vec<u32> = (0..s as u32).collect();
                order.sort_by(|&a, &b| {
                    counts[b as usize]
                        .cmp(&counts[a as usize])
                        .then(a.cmp(&b))
                });
                let scores = order.iter().map(|&sid| counts[sid as usize] as f32).collect();
                ProbeOrder::new(order, scores)
            } else {
                // greedy max marginal coverage
                let mut covered = vec![false; truth.len()];
                let mut picked = vec![false; s];
                let mut order = Vec::with_capacity(s);
                let mut scores = Vec::with_capacity(s);
                for _ in 0..s {
                    let mut best: Option<(u32, u32)> = None; // (marginal, shard)
                    for sid in 0..s as u32 {
                        if picked[sid as usize] {
                            continue;
                        }
                        let marginal = truth
                            .iter()
                            .enumerate()
                            .filter(|&(ti, &t)| {
                                !covered[ti]
                                    && p.shards_of(t as usize).binary_search(&sid).is_ok()
                            })
                            .count() as u32;
                        let better = best.map_or(true, |(bm, _)| marginal > bm);
                        if better {
                            best = Some((marginal, sid));
                        }
                    }
                    let (marginal, sid) = best.unwrap();
                    picked[sid as usize] = true;
                    order.push(sid);
                    scores.push(marginal as f32);
                    for (ti, &t) in truth.iter().enumerate() {
                        if p.shards_of(t as usize).binary_search(&sid).is_ok() {
                            covered[ti] = true;
                        }
                    }
                }
                ProbeOrder::new(order, scores)
            }
        })
        .collect()
}

/// Recall-vs-probes under exhaustive in-shard search: for each eta, the
/// mean over queries of recall@k restricted to the first eta probed shards.
pub fn recall_vs_probes(
    orders: &[ProbeOrder],
    p: &Partition,
    gt: &GroundTruth,
    k: usize,
    label: impl Into<String>,
) -> Result<RecallCurve> {
    if orders.len() != gt.num_queries() {
        return Err(Error::input("one probe order per query required"));
    }
    if k > gt.k() {
        return Err(Error::input("ground truth is too shallow for this k"));
    }
    let s = p.num_shards() as usize;
    let per_query: Vec<Vec<u32>> = orders
        .par_iter()
        .enumerate()
        .map(|(q, order)| {
            debug_assert!(order.is_permutation());
            let mut rank = vec![u32::MAX; s];
            for (pos, &sid) in order.order().iter().enumerate() {
                rank[sid as usize] = pos as u32;
            }
            // hits[eta-1] = number of true top-k covered by the first eta shards
            let mut hits = vec![0u32; s];
            for &t in &gt.ids(q)[..k] {
                let first = p
                    .shards_of(t as usize)
                    .iter()
                    .map(|&sid| rank[sid as usize])
                    .min()
                    .unwrap();
                if first != u32::MAX {
                    hits[first as usize] += 1;
                }
            }
            for i in 1..s {
                hits[i] += hits[i - 1];
            }
            hits
        })
        .collect();

    let nq = orders.len() as f64;
    let mut values = vec![0.0f64; s];
    for hits in &per_query {
        for (eta, &h) in hits.iter().enumerate() {
            values[eta] += h as f64 / k as f64;
        }
    }
    for v in values.iter_mut() {
        *v /= nq;
    }
    Ok(RecallCurve {
        label: label.into(),
        k,
        values,
    })
}

/// Literal exhaustive scan of the first `eta` probed shards, the slow
/// validation path for the coverage-based curve.
pub fn literal_scan_recall(
    data: &Dataset,
    queries: &Dataset,
    p: &Partition,
    orders: &[ProbeOrder],
    gt: &GroundTruth,
    k: usize,
    eta: usize,
) -> f64 {
    let members = p.shard_members();
    let metric = data.metric();
    let total: f64 = (0..queries.len())
        .into_par_iter()
        .map(|qi| {
            let q = queries.row(qi);
            let mut top = TopK::new(k);
            for &sid in orders[qi].prefix(eta) {
                for &id in &members[sid as usize] {
                    top.push(distance_key(metric, q, data.row(id as usize)), id);
                }
            }
            let retrieved: Vec<u32> = top.into_sorted().into_iter().map(|(_, id)| id).collect();
            crate::truth::recall_at_k(&retrieved, gt.ids(qi), k)
        })
        .sum();
    total / queries.len() as f64
}

/// One grid point of the sweep: graph degree plus carving knobs. Building
/// with a degree below the evaluation k is the cheapest way to produce the
/// low-graph-recall regime (a perfect degree-3 graph holds at most 3 of
/// the exact 10 edges per node).
#[derive(Debug, Clone, Copy)]
pub struct SweepPoint {
    pub degree: usize,
    pub params: BallCarvingParams,
}

/// One row of the graph-quality sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    /// `None` marks the exact-graph reference row.
    pub point: Option<SweepPoint>,
    pub graph_recall: f64,
    pub query_recall_eta1: f64,
}

/// Pipeline settings shared by the sweep rows.
#[derive(Debug, Clone, Copy)]
pub struct SweepConfig {
    pub k: usize,
    pub s: u32,
    pub epsilon: f64,
    pub kmr: KmrParams,
    pub budget: usize,
    pub seed: u64,
}

/// For each grid point: build the approximate graph, measure its recall
/// against the exact k-NN graph at the evaluation k, partition it, train
/// the k-means-tree router, and record the eta = 1 query recall. The exact
/// graph itself is the reference row.
pub fn graph_quality_sweep(
    data: &Dataset,
    queries: &Dataset,
    gt: &GroundTruth,
    grid: &[SweepPoint],
    config: &SweepConfig,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::input("sweep grid is empty"));
    }
    let exact = build_exact_knn(data, config.k)?;
    let mut rows = Vec::with_capacity(grid.len() + 1);

    let eta1 = |graph: &crate::graph::KnnGraph| -> Result<f64> {
        let p = partition_graph(graph, config.s, config.epsilon, config.seed)?;
        let tree = kmr_train(data, &p, &config.kmr)?;
        let orders: Vec<ProbeOrder> = (0..queries.len())
            .into_par_iter()
            .map(|qi| kmr_route(&tree, queries.row(qi), config.budget))
            .collect();
        let curve = recall_vs_probes(&orders, &p, gt, config.k, "sweep")?;
        Ok(curve.at(1))
    };

    rows.push(SweepRow {
        point: None,
        graph_recall: 1.0,
        query_recall_eta1: eta1(&exact)?,
    });
    for point in grid {
        let approx = build_approx_knn(data, point.degree, &point.params)?;
        rows.push(SweepRow {
            point: Some(*point),
            graph_recall: graph_recall(&approx, &exact)?,
            query_recall_eta1: eta1(&approx)?,
        });
    }
    Ok(rows)
}

/// Spearman rank correlation of two equally long samples.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    let rank = |vals: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        let mut out = vec![0.0; n];
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && vals[idx[j + 1]] == vals[idx[i]] {
                j += 1;
            }
            let mean_rank = (i + j) as f64 / 2.0;
            for &slot in &idx[i..=j] {
                out[slot] = mean_rank;
            }
            i = j + 1;
        }
        out
    };
    let rx = rank(xs);
    let ry = rank(ys);
    let mean = (n as f64 - 1.0) / 2.0;
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for i in 0..n {
        num += (rx[i] - mean) * (ry[i] - mean);
        dx += (rx[i] - mean).powi(2);
        dy += (ry[i] - mean).powi(2);
    }
    if dx == 0.0 || dy == 0.0 {
        return 0.0;
    }
    num / (dx * dy).sqrt()
}

/// One curve of the loss ablation.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: String,
    /// Router budget this row used; zero for the router-free variants.
    pub m: usize,
    pub curve: RecallCurve,
}

/// Decomposes routing losses: the oracle, distance ranking over all points
/// (no coarsening), brute force over the stored centroids (exact retrieval
/// over R), and the budgeted tree search (the production path).
pub fn loss_ablation(
    data: &Dataset,
    queries: &Dataset,
    p: &Partition,
    gt: &GroundTruth,
    m_grid: &[usize],
    kmr_base: &KmrParams,
    budget: usize,
    k: usize,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();

    let oracle = oracle_probe_order(gt, p);
    rows.push(AblationRow {
        variant: "oracle".into(),
        m: 0,
        curve: recall_vs_probes(&oracle, p, gt, k, "oracle")?,
    });

    let nc_orders = no_coarsening_orders(data, queries, p);
    rows.push(AblationRow {
        variant: "no-coarsening".into(),
        m: 0,
        curve: recall_vs_probes(&nc_orders, p, gt, k, "no-coarsening")?,
    });

    for &m in m_grid {
        let params = KmrParams { m, ..*kmr_base };
        let tree = kmr_train(data, p, &params)?;

        let exact_orders = exact_centroid_orders(&tree, queries);
        rows.push(AblationRow {
            variant: "exact-nn".into(),
            m,
            curve: recall_vs_probes(&exact_orders, p, gt, k, "exact-nn")?,
        });

        let approx_orders: Vec<ProbeOrder> = (0..queries.len())
            .into_par_iter()
            .map(|qi| kmr_route(&tree, queries.row(qi), budget))
            .collect();
        rows.push(AblationRow {
            variant: "approx-nn".into(),
            m,
            curve: recall_vs_probes(&approx_orders, p, gt, k, "approx-nn")?,
        });
    }
    Ok(rows)
}

/// Probe orders by true nearest member distance over all points.
fn no_coarsening_orders(data: &Dataset, queries: &Dataset, p: &Partition) -> Vec<ProbeOrder> {
    let s = p.num_shards() as usize;
    let metric = data.metric();
    (0..queries.len())
        .into_par_iter()
        .map(|qi| {
            let q = queries.row(qi);
            let mut best = vec![f32::INFINITY; s];
            for (i, row) in data.rows().enumerate() {
                let d = crate::dataset::key_to_distance(metric, distance_key(metric, q, row));
                for &sid in p.shards_of(i) {
                    if d < best[sid as usize] {
                        best[sid as usize] = d;
                    }
                }
            }
            let mut order: Vec<u32> = (0..s as u32).collect();
            order.sort_by(|&a, &b| best[a as usize].total_cmp(&best[b as usize]).then(a.cmp(&b)));
            let scores = order.iter().map(|&sid| best[sid as usize]).collect();
            ProbeOrder::new(order, scores)
        })
        .collect()
}

/// Probe orders by brute-force scan of every centroid the tree stores.
fn exact_centroid_orders(tree: &KmrTree, queries: &Dataset) -> Vec<ProbeOrder> {
    let s = tree.num_shards() as usize;
    let d = tree.dim();
    let metric = tree.metric();
    let per_shard: Vec<Vec<f32>> = (0..s as u32).map(|sid| tree.shard_centroids(sid)).collect();
    (0..queries.len())
        .into_par_iter()
        .map(|qi| {
            let q = queries.row(qi);
            let mut best = vec![f32::INFINITY; s];
            for (sid, centroids) in per_shard.iter().enumerate() {
                for c in centroids.chunks_exact(d) {
                    let dist =
                        crate::dataset::key_to_distance(metric, distance_key(metric, q, c));
                    if dist < best[sid] {
                        best[sid] = dist;
                    }
                }
            }
            let mut order: Vec<u32> = (0..s as u32).collect();
            order.sort_by(|&a, &b| best[a as usize].total_cmp(&best[b as usize]).then(a.cmp(&b)));
            let scores = order.iter().map(|&sid| best[sid as usize]).collect();
            ProbeOrder::new(order, scores)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::MetricTag;
    use crate::rng::rng;
    use crate::truth::compute_ground_truth;
    use rand::Rng;

    fn random_data(n: usize, d: usize, seed: u64) -> Dataset {
        let mut r = rng(seed);
        let values: Vec<f32> = (0..n * d).map(|_| r.gen_range(-1.0..1.0f32)).collect();
        Dataset::new(values, d, MetricTag::L2).unwrap()
    }

    #[test]
    fn oracle_orders_by_neighbor_counts() {
        // 10 points: 7 true neighbors in shard 2, 3 in shard 0
        let labels = vec![0, 0, 0, 2, 2, 2, 2, 2, 2, 2];
        let p = Partition::disjoint(labels, 3, 1.0).unwrap();
        let ids: Vec<u32> = (0..10).collect();
        let gt = GroundTruth::from_parts(10, ids, vec![0.0; 10]).unwrap();
        let orders = oracle_probe_order(&gt, &p);
        assert_eq!(&orders[0].order()[..2], &[2, 0]);
        let curve = recall_vs_probes(&orders, &p, &gt, 10, "oracle").unwrap();
        assert!((curve.at(1) - 0.7).abs() < 1e-9);
        assert_eq!(curve.at(3), 1.0);
    }

    #[test]
    fn single_shard_truth_reaches_recall_one_immediately() {
        let labels = vec![1, 1, 1, 0, 0, 0];
        let p = Partition::disjoint(labels, 2, 1.0).unwrap();
        let gt = GroundTruth::from_parts(3, vec![0, 1, 2], vec![0.0; 3]).unwrap();
        let orders = oracle_probe_order(&gt, &p);
        let curve = recall_vs_probes(&orders, &p, &gt, 3, "oracle").unwrap();
        assert_eq!(curve.at(1), 1.0);
    }

    #[test]
    fn greedy_oracle_handles_dominated_overlap() {
        // shard 1 holds the same 7 neighbors as shard 0 plus one more
        let mut lists: Vec<Vec<u32>> = Vec::new();
        for i in 0..8 {
            if i < 7 {
                lists.push(vec![0, 1]);
            } else {
                lists.push(vec![1]);
            }
        }
        let p = Partition::overlapping(lists, 2, 2, 1.0, 1.9).unwrap();
        let gt = GroundTruth::from_parts(8, (0..8).collect(), vec![0.0; 8]).unwrap();
        let orders = oracle_probe_order(&gt, &p);
        assert_eq!(orders[0].order(), &[1, 0]);
        assert_eq!(orders[0].scores(), &[8.0, 0.0]);
    }

    #[test]
    fn full_probe_reaches_one_and_curves_are_monotone() {
        let data = random_data(400, 6, 1);
        let queries = random_data(30, 6, 2);
        let gt = compute_ground_truth(&data, &queries, 10).unwrap();
        let g = build_exact_knn(&data, 8).unwrap();
        let p = partition_graph(&g, 5, 0.05, 3).unwrap();
        let oracle = oracle_probe_order(&gt, &p);
        let curve = recall_vs_probes(&oracle, &p, &gt, 10, "oracle").unwrap();
        assert!(curve.is_monotone());
        assert_eq!(curve.at(5), 1.0);
    }

    #[test]
    fn oracle_dominates_any_router_on_disjoint_partitions() {
        let data = random_data(500, 6, 4);
        let queries = random_data(40, 6, 5);
        let gt = compute_ground_truth(&data, &queries, 10).unwrap();
        let g = build_exact_knn(&data, 8).unwrap();
        let p = partition_graph(&g, 5, 0.05, 6).unwrap();
        let tree = kmr_train(&data, &p, &KmrParams { l: 8, lambda: 10, m: 200, seed: 7 }).unwrap();

        let oracle = recall_vs_probes(&oracle_probe_order(&gt, &p), &p, &gt, 10, "o").unwrap();
        let orders: Vec<ProbeOrder> = (0..queries.len())
            .map(|qi| kmr_route(&tree, queries.row(qi), 100))
            .collect();
        let routed = recall_vs_probes(&orders, &p, &gt, 10, "kmr").unwrap();
        for eta in 1..=5 {
            assert!(
                oracle.at(eta) >= routed.at(eta) - 1e-12,
                "oracle must dominate at eta={eta}"
            );
        }
    }

    #[test]
    fn literal_scan_agrees_with_coverage() {
        let data = random_data(300, 5, 8);
        let queries = random_data(25, 5, 9);
        let gt = compute_ground_truth(&data, &queries, 5).unwrap();
        let g = build_exact_knn(&data, 6).unwrap();
        let p = partition_graph(&g, 4, 0.05, 10).unwrap();
        let orders = oracle_probe_order(&gt, &p);
        let curve = recall_vs_probes(&orders, &p, &gt, 5, "oracle").unwrap();
        for eta in [1, 2, 4] {
            let literal = literal_scan_recall(&data, &queries, &p, &orders, &gt, 5, eta);
            assert!(
                (literal - curve.at(eta)).abs() < 1e-9,
                "literal {literal} vs coverage {} at eta={eta}",
                curve.at(eta)
            );
        }
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[30.0, 20.0, 10.0]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn ablation_rows_cover_all_variants() {
        let data = random_data(600, 6, 11);
        let queries = random_data(30, 6, 12);
        let gt = compute_ground_truth(&data, &queries, 5).unwrap();
        let g = build_exact_knn(&data, 6).unwrap();
        let p = partition_graph(&g, 4, 0.05, 13).unwrap();
        let rows = loss_ablation(
            &data,
            &queries,
            &p,
            &gt,
            &[100],
            &KmrParams { l: 8, lambda: 10, m: 100, seed: 14 },
            200,
            5,
        )
        .unwrap();
        assert_eq!(rows.len(), 4);
        for row in &rows {
            assert!(row.curve.is_monotone());
            assert!((row.curve.at(4) - 1.0).abs() < 1e-9);
        }
        assert_eq!(rows[1].variant, "no-coarsening");
        // no-coarsening at eta = 1 routes every query to its true nearest
        // neighbor's shard (the distance minimum is attained at the NN)
        let orders = no_coarsening_orders(&data, &queries, &p);
        for qi in 0..queries.len() {
            let nn_shards = p.shards_of(gt.ids(qi)[0] as usize);
            assert!(nn_shards.contains(&orders[qi].order()[0]));
        }
    }
}

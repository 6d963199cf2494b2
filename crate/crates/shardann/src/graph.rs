//! Exact and approximate k-NN graph construction, plus graph recall.
//!
//! The approximate builder recursively carves the pointset into dense balls
//! around sampled pivots and runs all-pairs comparisons inside small
//! clusters. Independent repetitions and multi-pivot assignment at the top
//! split improve quality; candidates from all repetitions merge into one
//! best-k adjacency per node.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;

use crate::dataset::{distance_key, Dataset};
use crate::rng::{rng, sample_without_replacement, split};
use crate::topk::TopK;
use crate::{Error, Result};

/// Directed k-NN adjacency in CSR form. Each node stores up to `k`
/// out-neighbors, id-sorted, without self-loops or duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraph {
    n: usize,
    k: usize,
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
}

impl KnnGraph {
    pub fn from_adjacency(lists: Vec<Vec<u32>>, k: usize) -> Result<Self> {
        let n = lists.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for (u, mut list) in lists.into_iter().enumerate() {
            list.sort_unstable();
            if list.len() > k {
                return Err(Error::input(format!("node {u} exceeds degree bound {k}")));
            }
            if list.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::input(format!("node {u} has duplicate neighbors")));
            }
            for &v in &list {
                if v as usize >= n {
                    return Err(Error::input(format!("node {u} has neighbor {v} >= n")));
                }
                if v as usize == u {
                    return Err(Error::input(format!("node {u} has a self-loop")));
                }
            }
            neighbors.extend_from_slice(&list);
            offsets.push(neighbors.len());
        }
        Ok(KnnGraph {
            n,
            k,
            offsets,
            neighbors,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn degree_bound(&self) -> usize {
        self.k
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, u: usize) -> &[u32] {
        &self.neighbors[self.offsets[u]..self.offsets[u + 1]]
    }

    /// Writes the CSR layout: two u64 little-endian words (n, edge count),
    /// n+1 u64 offsets, then one u32 per neighbor id.
    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        w.write_all(&(self.n as u64).to_le_bytes())?;
        w.write_all(&(self.neighbors.len() as u64).to_le_bytes())?;
        for &off in &self.offsets {
            w.write_all(&(off as u64).to_le_bytes())?;
        }
        for &v in &self.neighbors {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf)
            .map_err(|_| Error::format(0, "truncated graph header"))?;
        let n = u64::from_le_bytes(u64buf) as usize;
        r.read_exact(&mut u64buf)
            .map_err(|_| Error::format(8, "truncated graph header"))?;
        let edges = u64::from_le_bytes(u64buf) as usize;

        let mut offsets = Vec::with_capacity(n + 1);
        for i in 0..=n {
            r.read_exact(&mut u64buf)
                .map_err(|_| Error::format(16 + 8 * i as u64, "truncated offset table"))?;
            offsets.push(u64::from_le_bytes(u64buf) as usize);
        }
        if offsets[0] != 0 || offsets[n] != edges || offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::format(16, "offset table is not monotone CSR"));
        }
        let mut neighbors = Vec::with_capacity(edges);
        let mut u32buf = [0u8; 4];
        let base = 16 + 8 * (n as u64 + 1);
        let mut k = 0usize;
        for i in 0..edges {
            r.read_exact(&mut u32buf)
                .map_err(|_| Error::format(base + 4 * i as u64, "truncated neighbor list"))?;
            let v = u32::from_le_bytes(u32buf);
            if v as usize >= n {
                return Err(Error::format(
                    base + 4 * i as u64,
                    format!("neighbor id {v} out of range"),
                ));
            }
            neighbors.push(v);
        }
        for u in 0..n {
            k = k.max(offsets[u + 1] - offsets[u]);
        }
        Ok(KnnGraph {
            n,
            k,
            offsets,
            neighbors,
        })
    }
}

/// Knobs for the recursive ball-carving graph builder.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BallCarvingParams {
    /// Independent repetitions whose candidates merge.
    pub repetitions: usize,
    /// How many closest pivots each point follows at the first split.
    pub fanout: usize,
    /// Clusters at most this large are resolved by all-pairs comparison.
    pub max_cluster_size: usize,
    /// Fixed pivot count at the first split.
    pub top_level_pivots: usize,
    /// Pivot count on deeper levels, as a fraction of the points in the call.
    pub pivot_fraction: f64,
    pub seed: u64,
}

impl Default for BallCarvingParams {
    fn default() -> Self {
        BallCarvingParams {
            repetitions: 3,
            fanout: 3,
            max_cluster_size: 2500,
            top_level_pivots: 950,
            pivot_fraction: 0.005,
            seed: 0,
        }
    }
}

impl BallCarvingParams {
    fn validate(&self) -> Result<()> {
        if self.repetitions < 1
            || self.fanout < 1
            || self.max_cluster_size < 2
            || self.top_level_pivots < 1
            || self.pivot_fraction <= 0.0
            || self.pivot_fraction >= 1.0
        {
            return Err(Error::input("ball carving parameters out of range"));
        }
        Ok(())
    }
}

/// Builds the exact k-NN graph by all-pairs comparison. Node `u`'s
/// neighbors are exactly its `k` nearest other points, ties by smaller id.
pub fn build_exact_knn(data: &Dataset, k: usize) -> Result<KnnGraph> {
    let n = data.len();
    if k >= n {
        return Err(Error::input(format!("k={k} must be below n={n}")));
    }
    let metric = data.metric();
    const BLOCK: usize = 128;
    let blocks: Vec<Vec<Vec<u32>>> = (0..n)
        .into_par_iter()
        .chunks(BLOCK)
        .map(|us| {
            let mut tops: Vec<TopK> = us.iter().map(|_| TopK::new(k)).collect();
            for (v, row) in data.rows().enumerate() {
                for (slot, &u) in us.iter().enumerate() {
                    if u == v {
                        continue;
                    }
                    let key = distance_key(metric, data.row(u), row);
                    tops[slot].push(key, v as u32);
                }
            }
            tops.into_iter()
                .map(|t| t.into_sorted().into_iter().map(|(_, id)| id).collect())
                .collect()
        })
        .collect();
    let lists: Vec<Vec<u32>> = blocks.into_iter().flatten().collect();
    KnnGraph::from_adjacency(lists, k)
}

/// Builds an approximate k-NN graph via recursive ball carving.
/// Deterministic for a fixed seed, independent of worker count.
pub fn build_approx_knn(data: &Dataset, k: usize, params: &BallCarvingParams) -> Result<KnnGraph> {
    let n = data.len();
    if k >= n {
        return Err(Error::input(format!("k={k} must be below n={n}")));
    }
    params.validate()?;

    let accumulators: Vec<Mutex<TopK>> = (0..n).map(|_| Mutex::new(TopK::new(k))).collect();
    (0..params.repetitions).into_par_iter().for_each(|rep| {
        let rep_seed = split(params.seed, 0x5EED_0000 + rep as u64);
        let ids: Vec<u32> = (0..n as u32).collect();
        carve(data, &ids, rep_seed, true, params, &accumulators);
    });

    let lists: Vec<Vec<u32>> = accumulators
        .into_iter()
        .map(|m| {
            m.into_inner()
                .unwrap()
                .into_sorted()
                .into_iter()
                .map(|(_, id)| id)
                .collect()
        })
        .collect();
    KnnGraph::from_adjacency(lists, k)
}

fn carve(
    data: &Dataset,
    ids: &[u32],
    seed: u64,
    top_level: bool,
    params: &BallCarvingParams,
    acc: &[Mutex<TopK>],
) {
    if ids.len() <= params.max_cluster_size {
        all_pairs(data, ids, acc);
        return;
    }
    let want = if top_level {
        params.top_level_pivots
    } else {
        (params.pivot_fraction * ids.len() as f64).ceil() as usize
    };
    let num_pivots = want.clamp(1, ids.len());
    let mut r = rng(seed);
    let pivot_pos = sample_without_replacement(&mut r, ids.len(), num_pivots);
    let pivots: Vec<u32> = pivot_pos.iter().map(|&p| ids[p as usize]).collect();
    let fanout = if top_level {
        params.fanout.min(num_pivots)
    } else {
        1
    };

    let metric = data.metric();
    let assignment: Vec<Vec<u32>> = ids
        .par_iter()
        .map(|&id| {
            let row = data.row(id as usize);
            let mut best = TopK::new(fanout);
            for (pi, &pivot) in pivots.iter().enumerate() {
                let key = distance_key(metric, row, data.row(pivot as usize));
                best.push(key, pi as u32);
            }
            best.into_sorted().into_iter().map(|(_, pi)| pi).collect()
        })
        .collect();

    let mut clusters: Vec<Vec<u32>> = vec![Vec::new(); num_pivots];
    for (pos, picks) in assignment.iter().enumerate() {
        for &pi in picks {
            clusters[pi as usize].push(ids[pos]);
        }
    }

    clusters
        .into_par_iter()
        .enumerate()
        .for_each(|(ci, cluster)| {
            if cluster.is_empty() {
                return;
            }
            if cluster.len() == ids.len() {
                // The split made no progress (duplicate-heavy data); resolve
                // exhaustively rather than recursing forever.
                all_pairs(data, &cluster, acc);
            } else {
                carve(
                    data,
                    &cluster,
                    split(seed, 0xC1u64 + ci as u64),
                    false,
                    params,
                    acc,
                );
            }
        });
}

fn all_pairs(data: &Dataset, ids: &[u32], acc: &[Mutex<TopK>]) {
    let metric = data.metric();
    let k = acc[0].lock().unwrap().k_limit();
    let mut local: Vec<TopK> = ids.iter().map(|_| TopK::new(k)).collect();
    for i in 0..ids.len() {
        for j in (i + 1)..ids.len() {
            let key = distance_key(metric, data.row(ids[i] as usize), data.row(ids[j] as usize));
            local[i].push(key, ids[j]);
            local[j].push(key, ids[i]);
        }
    }
    for (i, top) in local.into_iter().enumerate() {
        acc[ids[i] as usize].lock().unwrap().merge_from(&top);
    }
}

/// Fraction of exact k-NN edges present in the approximate graph:
/// sum of per-node intersections over the exact edge count.
pub fn graph_recall(approx: &KnnGraph, exact: &KnnGraph) -> Result<f64> {
    if approx.len() != exact.len() {
        return Err(Error::input("graphs have different node counts"));
    }
    let mut hit = 0usize;
    let mut total = 0usize;
    for u in 0..exact.len() {
        let a = approx.neighbors(u);
        let e = exact.neighbors(u);
        total += e.len();
        // both id-sorted
        let mut i = 0;
        let mut j = 0;
        while i < a.len() && j < e.len() {
            match a[i].cmp(&e[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    hit += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(hit as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::MetricTag;
    use rand::Rng;

    fn random_dataset(n: usize, d: usize, seed: u64) -> Dataset {
        let mut r = rng(seed);
        let values: Vec<f32> = (0..n * d).map(|_| r.gen_range(-1.0..1.0f32)).collect();
        Dataset::new(values, d, MetricTag::L2).unwrap()
    }

    #[test]
    fn exact_line_applies_tie_rule() {
        let data = Dataset::new(vec![0.0, 1.0, 2.0], 1, MetricTag::L2).unwrap();
        let g = build_exact_knn(&data, 1).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
        // node 1 ties between 0 and 2 at distance 1; smaller id wins
        assert_eq!(g.neighbors(1), &[0]);
        assert_eq!(g.neighbors(2), &[1]);
    }

    #[test]
    fn exact_with_k_n_minus_one_is_complete() {
        let data = random_dataset(6, 3, 1);
        let g = build_exact_knn(&data, 5).unwrap();
        for u in 0..6 {
            let mut expected: Vec<u32> = (0..6u32).filter(|&v| v as usize != u).collect();
            expected.sort_unstable();
            assert_eq!(g.neighbors(u), expected.as_slice());
        }
    }

    #[test]
    fn exact_matches_quadratic_oracle() {
        let data = random_dataset(200, 8, 2);
        let g = build_exact_knn(&data, 10).unwrap();
        for u in 0..200 {
            let mut all: Vec<(f32, u32)> = (0..200u32)
                .filter(|&v| v as usize != u)
                .map(|v| {
                    let a = data.row(u);
                    let b = data.row(v as usize);
                    let mut acc = 0.0f32;
                    for i in 0..8 {
                        let diff = a[i] - b[i];
                        acc += diff * diff;
                    }
                    (acc, v)
                })
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut expected: Vec<u32> = all[..10].iter().map(|&(_, v)| v).collect();
            expected.sort_unstable();
            assert_eq!(g.neighbors(u), expected.as_slice());
        }
    }

    #[test]
    fn small_inputs_fall_through_to_all_pairs() {
        let data = random_dataset(120, 4, 3);
        let params = BallCarvingParams {
            max_cluster_size: 200,
            seed: 9,
            ..Default::default()
        };
        let approx = build_approx_knn(&data, 8, &params).unwrap();
        let exact = build_exact_knn(&data, 8).unwrap();
        assert_eq!(approx, exact);
    }

    #[test]
    fn degree_bound_and_validity_hold_under_odd_parameters() {
        let data = random_dataset(300, 4, 4);
        let params = BallCarvingParams {
            repetitions: 1,
            fanout: 1,
            max_cluster_size: 2,
            top_level_pivots: 400,
            pivot_fraction: 0.5,
            seed: 5,
        };
        let g = build_approx_knn(&data, 6, &params).unwrap();
        for u in 0..300 {
            let nb = g.neighbors(u);
            assert!(nb.len() <= 6);
            assert!(nb.iter().all(|&v| v as usize != u && (v as usize) < 300));
            assert!(nb.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn approx_is_deterministic_per_seed() {
        let data = random_dataset(2000, 6, 6);
        let params = BallCarvingParams {
            repetitions: 2,
            fanout: 2,
            max_cluster_size: 100,
            top_level_pivots: 40,
            pivot_fraction: 0.05,
            seed: 123,
        };
        let a = build_approx_knn(&data, 5, &params).unwrap();
        let b = build_approx_knn(&data, 5, &params).unwrap();
        assert_eq!(a, b);
        let c = build_approx_knn(
            &data,
            5,
            &BallCarvingParams {
                seed: 124,
                ..params
            },
        )
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn recall_of_exact_vs_itself_is_one() {
        let data = random_dataset(100, 4, 7);
        let g = build_exact_knn(&data, 5).unwrap();
        assert_eq!(graph_recall(&g, &g).unwrap(), 1.0);
    }

    #[test]
    fn recall_of_empty_graph_is_zero() {
        let data = random_dataset(50, 4, 8);
        let g = build_exact_knn(&data, 5).unwrap();
        let empty = KnnGraph::from_adjacency(vec![vec![]; 50], 5).unwrap();
        assert_eq!(graph_recall(&empty, &g).unwrap(), 0.0);
    }

    #[test]
    fn recall_of_half_lists_is_half() {
        let data = random_dataset(80, 4, 9);
        let g = build_exact_knn(&data, 4).unwrap();
        let halves: Vec<Vec<u32>> = (0..80)
            .map(|u| g.neighbors(u)[..2].to_vec())
            .collect();
        let h = KnnGraph::from_adjacency(halves, 4).unwrap();
        assert_eq!(graph_recall(&h, &g).unwrap(), 0.5);
    }

    #[test]
    fn more_repetitions_do_not_hurt_mean_recall() {
        let data = random_dataset(10_000, 8, 10);
        let exact = build_exact_knn(&data, 8).unwrap();
        let mean = |reps: usize| -> f64 {
            (0..10u64)
                .map(|s| {
                    let params = BallCarvingParams {
                        repetitions: reps,
                        fanout: 1,
                        max_cluster_size: 150,
                        top_level_pivots: 120,
                        pivot_fraction: 0.02,
                        seed: 1000 + s,
                    };
                    let g = build_approx_knn(&data, 8, &params).unwrap();
                    graph_recall(&g, &exact).unwrap()
                })
                .sum::<f64>()
                / 10.0
        };
        assert!(mean(3) >= mean(1));
    }

    #[test]
    fn file_round_trip_and_bad_ids() {
        let data = random_dataset(64, 4, 11);
        let g = build_exact_knn(&data, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.knn");
        g.write_to(&path).unwrap();
        let back = KnnGraph::read_from(&path).unwrap();
        assert_eq!(g, back);

        // corrupt a neighbor id beyond n
        let mut bytes = std::fs::read(&path).unwrap();
        let lastid = bytes.len() - 4;
        bytes[lastid..].copy_from_slice(&1000u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            KnnGraph::read_from(&path),
            Err(Error::Format { .. })
        ));
    }
}

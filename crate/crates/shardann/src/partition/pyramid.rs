//! Pyramid-style partitioning: subsample, aggregate to a small meta
//! pointset by flat k-means, graph-partition the meta points, and extend
//! the partition to the full dataset through nearest-center assignment.
//! Balance is enforced by reassigning overflow points to the closest
//! center whose shard still has room.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{distance_key, Dataset, MetricTag};
use crate::graph::build_exact_knn;
use crate::partition::{check_feasible, kmeans::lloyd, partition_graph, Partition};
use crate::rng::{rng, sample_without_replacement, split};
use crate::routing::{aggregate_probe_order, Candidate, ProbeOrder, RoutingMode};
use crate::{Error, Result};

/// Degree of the k-NN graph built on the meta pointset.
const META_GRAPH_DEGREE: usize = 10;
/// Lloyd rounds of the aggregation step (cheap smoothing of the subsample).
const AGGREGATION_ROUNDS: usize = 5;

/// Route-time companion of a pyramid partition: the meta points with their
/// shard labels. Queries rank shards by the nearest meta point, scanned
/// exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PyramidRouter {
    d: usize,
    metric: MetricTag,
    centers: Vec<f32>,
    shard_of_center: Vec<u32>,
    num_shards: u32,
}

impl PyramidRouter {
    pub fn num_centers(&self) -> usize {
        self.shard_of_center.len()
    }

    pub fn num_shards(&self) -> u32 {
        self.num_shards
    }

    pub fn center(&self, i: usize) -> &[f32] {
        &self.centers[i * self.d..(i + 1) * self.d]
    }

    /// Probe order by ascending distance to the nearest meta point of each
    /// shard; probing the first T shards matches "all shards among the T
    /// nearest centers".
    pub fn route(&self, q: &[f32]) -> Result<ProbeOrder> {
        if q.len() != self.d {
            return Err(Error::input("query dimension mismatch"));
        }
        let candidates: Vec<Candidate> = (0..self.num_centers())
            .map(|i| Candidate {
                id: i as u32,
                shard: self.shard_of_center[i],
                distance: crate::dataset::key_to_distance(
                    self.metric,
                    distance_key(self.metric, q, self.center(i)),
                ),
            })
            .collect();
        Ok(aggregate_probe_order(
            &candidates,
            RoutingMode::Ranking,
            self.num_shards,
        ))
    }
}

/// Builds the pyramid partition and its router.
///
/// When the sample covers the whole dataset the aggregation is the
/// identity and this degenerates to graph partitioning of the exact k-NN
/// graph of the pointset itself.
pub fn pyramid_partition(
    data: &Dataset,
    s: u32,
    epsilon: f64,
    sample_size: usize,
    seed: u64,
) -> Result<(Partition, PyramidRouter)> {
    let n = data.len();
    if sample_size == 0 || sample_size > n {
        return Err(Error::input(format!(
            "sample size {sample_size} out of range for n={n}"
        )));
    }
    let cap = check_feasible(n, s, epsilon)?;

    // Subsample, then aggregate down to `sample_size` meta points.
    let subsample_size = (2 * sample_size).min(n);
    let mut r = rng(split(seed, 0x9AF1));
    let subsample_ids = sample_without_replacement(&mut r, n, subsample_size);
    let subsample = data.gather(&subsample_ids);

    let meta: Dataset = if sample_size >= subsample.len() {
        subsample
    } else {
        let (_, centroids) = lloyd(&subsample, sample_size, AGGREGATION_ROUNDS, split(seed, 0x9AF2));
        Dataset::new(centroids.centers_flat().to_vec(), data.dim(), data.metric())?
    };

    let degree = META_GRAPH_DEGREE.min(meta.len() - 1);
    if degree == 0 {
        return Err(Error::input("meta pointset too small to build a graph"));
    }
    let meta_graph = build_exact_knn(&meta, degree)?;
    let meta_partition = partition_graph(&meta_graph, s, epsilon, split(seed, 0x9AF3))?;
    let shard_of_center: Vec<u32> = (0..meta.len())
        .map(|i| meta_partition.shards_of(i)[0])
        .collect();

    // Extend to the full pointset: every point follows its nearest center.
    let metric = data.metric();
    let nearest: Vec<(u32, f32)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = data.row(i);
            let mut best = (f32::INFINITY, 0u32);
            for c in 0..meta.len() {
                let key = distance_key(metric, row, meta.row(c));
                if key < best.0 {
                    best = (key, c as u32);
                }
            }
            (best.1, best.0)
        })
        .collect();
    let mut labels: Vec<u32> = nearest.iter().map(|&(c, _)| shard_of_center[c as usize]).collect();

    // Balance: push overflow points to the closest center in a shard with room.
    let mut sizes = vec![0usize; s as usize];
    for &l in &labels {
        sizes[l as usize] += 1;
    }
    for shard in 0..s as usize {
        if sizes[shard] <= cap {
            continue;
        }
        let mut members: Vec<(f32, u32)> = labels
            .iter()
            .enumerate()
            .filter(|&(_, &l)| l as usize == shard)
            .map(|(i, _)| (nearest[i].1, i as u32))
            .collect();
        members.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut cursor = 0;
        while sizes[shard] > cap {
            let (_, id) = members[cursor];
            cursor += 1;
            let row = data.row(id as usize);
            let mut best: Option<(f32, u32)> = None;
            for c in 0..meta.len() {
                let target = shard_of_center[c] as usize;
                if target == shard || sizes[target] >= cap {
                    continue;
                }
                let key = distance_key(metric, row, meta.row(c));
                if best.map_or(true, |(bk, _)| key < bk) {
                    best = Some((key, c as u32));
                }
            }
            let (_, center) = best.expect("feasible capacity leaves a shard with room");
            let target = shard_of_center[center as usize];
            labels[id as usize] = target;
            sizes[shard] -= 1;
            sizes[target as usize] += 1;
        }
    }

    let router = PyramidRouter {
        d: data.dim(),
        metric,
        centers: meta.values().to_vec(),
        shard_of_center,
        num_shards: s,
    };
    Ok((Partition::disjoint(labels, s, epsilon)?, router))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::l_max;
    use rand::Rng;

    fn random_data(n: usize, d: usize, seed: u64) -> Dataset {
        let mut r = rng(seed);
        let values: Vec<f32> = (0..n * d).map(|_| r.gen_range(-1.0..1.0f32)).collect();
        Dataset::new(values, d, MetricTag::L2).unwrap()
    }

    #[test]
    fn respects_the_size_limit() {
        let data = random_data(600, 4, 3);
        let (p, router) = pyramid_partition(&data, 4, 0.05, 100, 7).unwrap();
        let cap = l_max(600, 4, 0.05);
        assert!(p.shard_sizes().into_iter().all(|sz| sz <= cap));
        assert_eq!(router.num_centers(), 100);
    }

    #[test]
    fn full_sample_degenerates_to_graph_partitioning() {
        let data = random_data(300, 4, 5);
        let (p, _) = pyramid_partition(&data, 3, 0.05, 300, 11).unwrap();
        let g = build_exact_knn(&data, META_GRAPH_DEGREE).unwrap();
        let expected = partition_graph(&g, 3, 0.05, split(11, 0x9AF3)).unwrap();
        assert_eq!(p, expected);
    }

    #[test]
    fn router_prefers_the_local_shard() {
        // two far blobs; queries near blob 0 must rank its shard first
        let mut r = rng(9);
        let mut values = Vec::new();
        for i in 0..400 {
            let offset = if i < 200 { 0.0f32 } else { 500.0 };
            values.push(offset + r.gen_range(-1.0..1.0f32));
            values.push(offset + r.gen_range(-1.0..1.0f32));
        }
        let data = Dataset::new(values, 2, MetricTag::L2).unwrap();
        let (p, router) = pyramid_partition(&data, 2, 0.05, 80, 13).unwrap();
        let blob0_shard = p.shards_of(0)[0];
        let order = router.route(&[0.5, -0.5]).unwrap();
        assert_eq!(order.order()[0], blob0_shard);
    }

    #[test]
    fn oversized_sample_is_rejected() {
        let data = random_data(50, 2, 1);
        assert!(pyramid_partition(&data, 2, 0.05, 51, 0).is_err());
    }
}

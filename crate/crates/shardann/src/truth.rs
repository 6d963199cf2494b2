//! Exhaustive ground truth and recall accounting.

use rayon::prelude::*;

use crate::dataset::{distance_key, key_to_distance, Dataset};
use crate::topk::TopK;
use crate::{Error, Result};

/// For each query, the ids of its `k` nearest points (ascending by distance,
/// ties towards the smaller id) and the corresponding distances.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    k: usize,
    ids: Vec<u32>,
    distances: Vec<f32>,
}

impl GroundTruth {
    pub fn from_parts(k: usize, ids: Vec<u32>, distances: Vec<f32>) -> Result<Self> {
        if k == 0 || ids.len() != distances.len() || ids.len() % k != 0 {
            return Err(Error::input("ground truth buffers disagree with k"));
        }
        Ok(GroundTruth { k, ids, distances })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_queries(&self) -> usize {
        self.ids.len() / self.k
    }

    /// Neighbor ids of query `q`, nearest first.
    pub fn ids(&self, q: usize) -> &[u32] {
        &self.ids[q * self.k..(q + 1) * self.k]
    }

    pub fn distances(&self, q: usize) -> &[f32] {
        &self.distances[q * self.k..(q + 1) * self.k]
    }

    pub fn flat_ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn flat_distances(&self) -> &[f32] {
        &self.distances
    }
}

/// A retrieved point together with the shard it came from and its distance
/// to the query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub id: u32,
    pub shard: u32,
    pub distance: f32,
}

/// Exhaustively computes the `k` nearest dataset points of every query
/// under the dataset's metric. Ties break towards the smaller id.
pub fn compute_ground_truth(data: &Dataset, queries: &Dataset, k: usize) -> Result<GroundTruth> {
    if queries.dim() != data.dim() {
        return Err(Error::input(format!(
            "query dim {} does not match data dim {}",
            queries.dim(),
            data.dim()
        )));
    }
    if k == 0 || k > data.len() {
        return Err(Error::input(format!(
            "k={k} out of range for {} points",
            data.len()
        )));
    }
    let metric = data.metric();
    let per_query: Vec<Vec<(f32, u32)>> = (0..queries.len())
        .into_par_iter()
        .map(|qi| {
            let q = queries.row(qi);
            let mut top = TopK::new(k);
            for (i, row) in data.rows().enumerate() {
                let key = distance_key(metric, q, row);
                top.push(key, i as u32);
            }
            top.into_sorted()
        })
        .collect();

    let mut ids = Vec::with_capacity(queries.len() * k);
    let mut distances = Vec::with_capacity(queries.len() * k);
    for entries in per_query {
        for (key, id) in entries {
            ids.push(id);
            distances.push(key_to_distance(metric, key));
        }
    }
    GroundTruth::from_parts(k, ids, distances)
}

/// Fraction of the true top-`k` ids present in `retrieved`, in `[0, 1]`.
pub fn recall_at_k(retrieved: &[u32], truth: &[u32], k: usize) -> f64 {
    assert!(truth.len() >= k, "truth has fewer than k entries");
    let top: &[u32] = &truth[..k];
    let mut hits = 0usize;
    let mut seen = std::collections::HashSet::with_capacity(retrieved.len());
    for &id in retrieved {
        if seen.insert(id) && top.contains(&id) {
            hits += 1;
        }
    }
    hits as f64 / k as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::MetricTag;
    use rand::Rng;

    fn one_dim(points: &[f32]) -> Dataset {
        Dataset::new(points.to_vec(), 1, MetricTag::L2).unwrap()
    }

    #[test]
    fn tiny_line_instance() {
        let data = one_dim(&[0.0, 1.0, 5.0]);
        let queries = one_dim(&[0.4]);
        let gt = compute_ground_truth(&data, &queries, 2).unwrap();
        assert_eq!(gt.ids(0), &[0, 1]);
        let d = gt.distances(0);
        assert!((d[0] - 0.4).abs() < 1e-6);
        assert!((d[1] - 0.6).abs() < 1e-6);
    }

    #[test]
    fn k_equals_n_returns_everything_sorted() {
        let data = one_dim(&[3.0, 0.0, 2.0]);
        let queries = one_dim(&[0.0]);
        let gt = compute_ground_truth(&data, &queries, 3).unwrap();
        assert_eq!(gt.ids(0), &[1, 2, 0]);
        let d = gt.distances(0);
        assert!(d.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn k_larger_than_n_is_an_input_error() {
        let data = one_dim(&[0.0, 1.0]);
        let queries = one_dim(&[0.5]);
        assert!(compute_ground_truth(&data, &queries, 3).is_err());
    }

    /// Independent quadratic oracle: its own distance loop, full sort.
    fn brute_force_oracle(data: &Dataset, queries: &Dataset, k: usize) -> (Vec<u32>, Vec<f32>) {
        let mut ids = Vec::new();
        let mut dists = Vec::new();
        for q in queries.rows() {
            let mut all: Vec<(f32, u32)> = data
                .rows()
                .enumerate()
                .map(|(i, row)| {
                    let mut acc = 0.0f64;
                    for j in 0..row.len() {
                        let diff = (q[j] - row[j]) as f64;
                        acc += diff * diff;
                    }
                    (acc.sqrt() as f32, i as u32)
                })
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for &(d, i) in &all[..k] {
                ids.push(i);
                dists.push(d);
            }
        }
        (ids, dists)
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = crate::rng::rng(11);
        let n = 100;
        let d = 8;
        let data: Vec<f32> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let queries: Vec<f32> = (0..20 * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let data = Dataset::new(data, d, MetricTag::L2).unwrap();
        let queries = Dataset::new(queries, d, MetricTag::L2).unwrap();

        let gt = compute_ground_truth(&data, &queries, 10).unwrap();
        let (oracle_ids, oracle_dists) = brute_force_oracle(&data, &queries, 10);
        assert_eq!(gt.flat_ids(), oracle_ids.as_slice());
        for (a, b) in gt.flat_distances().iter().zip(oracle_dists.iter()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn recall_examples() {
        assert_eq!(recall_at_k(&[1, 2, 3], &[1, 2, 3], 3), 1.0);
        assert_eq!(recall_at_k(&[7, 8, 9], &[1, 2, 3], 3), 0.0);
        assert!((recall_at_k(&[1, 4, 5], &[1, 2, 3], 3) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn recall_is_monotone_in_retrieved_set() {
        let truth = [4, 9, 2, 7];
        let mut retrieved: Vec<u32> = vec![];
        let mut last = 0.0;
        for id in [1, 4, 6, 2, 9, 11, 7] {
            retrieved.push(id);
            let r = recall_at_k(&retrieved, &truth, 4);
            assert!(r >= last);
            last = r;
        }
    }
}

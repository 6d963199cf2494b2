//! Sorted-LSH routing index: per-shard uniform samples keyed by compound
//! LSH tokens and sorted lexicographically, once per repetition. A query
//! binary-searches each repetition for its own key and inspects a window
//! of entries on both sides.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{distance_key, key_to_distance, Dataset, MetricTag};
use crate::partition::Partition;
use crate::rng::{rng, sample_without_replacement, split};
use crate::routing::lsh::{default_projection_width, HashFunc, LshFamilyTag};
use crate::truth::Candidate;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Repetition {
    hashes: Vec<HashFunc>,
    /// Sample entry indices in lexicographic key order (point-id ties
    /// resolved ascending).
    order: Vec<u32>,
    /// Keys of the sorted entries, flattened `order.len() * t` tokens.
    keys: Vec<i64>,
}

impl Repetition {
    fn key_of(&self, pos: usize, t: usize) -> &[i64] {
        &self.keys[pos * t..(pos + 1) * t]
    }
}

/// The trained index: sampled points (ids, shards, vectors) plus `r`
/// independently hashed and sorted repetitions over them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HrtIndex {
    d: usize,
    metric: MetricTag,
    num_shards: u32,
    family: LshFamilyTag,
    t: usize,
    sample_ids: Vec<u32>,
    sample_shards: Vec<u32>,
    sample_vectors: Vec<f32>,
    reps: Vec<Repetition>,
}

impl HrtIndex {
    pub fn num_shards(&self) -> u32 {
        self.num_shards
    }

    pub fn metric(&self) -> MetricTag {
        self.metric
    }

    pub fn sample_len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn repetitions(&self) -> usize {
        self.reps.len()
    }

    pub fn sampled_ids(&self) -> &[u32] {
        &self.sample_ids
    }

    fn sample_row(&self, entry: usize) -> &[f32] {
        &self.sample_vectors[entry * self.d..(entry + 1) * self.d]
    }

    /// True when every repetition's keys are lexicographically
    /// non-decreasing (a structural check used by tests).
    pub fn keys_sorted(&self) -> bool {
        self.reps.iter().all(|rep| {
            (1..rep.order.len())
                .all(|i| rep.key_of(i - 1, self.t) <= rep.key_of(i, self.t))
        })
    }
}

/// Retrieval output plus the number of distance evaluations it spent
/// (bounded by `r * (2W + 1)`).
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
    pub distance_evals: usize,
}

/// Samples `floor(m * |S_i| / n)` points per shard without replacement and
/// builds `r` sorted repetitions of `t` compound hash tokens each.
pub fn hrt_train(
    data: &Dataset,
    p: &Partition,
    m: usize,
    r: usize,
    t: usize,
    family: LshFamilyTag,
    seed: u64,
) -> Result<HrtIndex> {
    let n = data.len();
    if p.len() != n {
        return Err(Error::input("partition and dataset node counts differ"));
    }
    if m > n {
        return Err(Error::input(format!("sample budget m={m} exceeds n={n}")));
    }
    if r < 1 || t < 1 || m == 0 {
        return Err(Error::input("need m >= 1, r >= 1 and t >= 1"));
    }
    if !family.compatible_with(data.metric()) {
        return Err(Error::input(format!(
            "family {family} is incompatible with metric {}",
            data.metric()
        )));
    }

    let mut sample_ids = Vec::new();
    let mut sample_shards = Vec::new();
    for (shard, members) in p.shard_members().into_iter().enumerate() {
        let take = m * members.len() / n;
        if take == 0 {
            continue;
        }
        let mut shard_rng = rng(split(seed, 0x5A00 + shard as u64));
        for pos in sample_without_replacement(&mut shard_rng, members.len(), take) {
            sample_ids.push(members[pos as usize]);
            sample_shards.push(shard as u32);
        }
    }
    if sample_ids.is_empty() {
        return Err(Error::input("sample budget too small: no points sampled"));
    }
    let mut sample_vectors = Vec::with_capacity(sample_ids.len() * data.dim());
    for &id in &sample_ids {
        sample_vectors.extend_from_slice(data.row(id as usize));
    }

    let width = if family == LshFamilyTag::StableProjection {
        default_projection_width(data, seed)
    } else {
        1.0
    };

    let d = data.dim();
    let reps: Vec<Repetition> = (0..r)
        .into_par_iter()
        .map(|j| {
            let mut rep_rng = rng(split(seed, 0xA000 + j as u64));
            let hashes: Vec<HashFunc> = (0..t)
                .map(|_| HashFunc::draw(family, d, width, &mut rep_rng))
                .collect();
            let keys_by_entry: Vec<i64> = (0..sample_ids.len())
                .flat_map(|e| {
                    let row = &sample_vectors[e * d..(e + 1) * d];
                    hashes.iter().map(|h| h.token(row)).collect::<Vec<_>>()
                })
                .collect();
            let mut order: Vec<u32> = (0..sample_ids.len() as u32).collect();
            order.sort_by(|&a, &b| {
                let ka = &keys_by_entry[a as usize * t..(a as usize + 1) * t];
                let kb = &keys_by_entry[b as usize * t..(b as usize + 1) * t];
                ka.cmp(kb).then(sample_ids[a as usize].cmp(&sample_ids[b as usize]))
            });
            let mut keys = Vec::with_capacity(order.len() * t);
            for &e in &order {
                keys.extend_from_slice(&keys_by_entry[e as usize * t..(e as usize + 1) * t]);
            }
            Repetition { hashes, order, keys }
        })
        .collect();

    Ok(HrtIndex {
        d,
        metric: data.metric(),
        num_shards: p.num_shards(),
        family,
        t,
        sample_ids,
        sample_shards,
        sample_vectors,
        reps,
    })
}

/// Per repetition, finds the first position whose key is lexicographically
/// at or above the query's key (clamped into range) and collects the
/// entries within `window` positions on both sides. Candidates carry true
/// distances and are deduplicated by point id across repetitions.
pub fn hrt_route(index: &HrtIndex, q: &[f32], window: usize) -> Result<CandidateSet> {
    if q.len() != index.d {
        return Err(Error::input("query dimension mismatch"));
    }
    if window == 0 {
        return Err(Error::input("window must be at least 1"));
    }
    let m = index.sample_len();
    let t = index.t;
    let mut by_id: std::collections::HashMap<u32, (u32, f32)> = std::collections::HashMap::new();
    let mut evals = 0usize;

    for rep in &index.reps {
        let qkey: Vec<i64> = rep.hashes.iter().map(|h| h.token(q)).collect();
        // lower bound: first position with key >= qkey, clamped into range
        let tau = rep_lower_bound(rep, &qkey, t).min(m - 1);
        let lo = tau.saturating_sub(window);
        let hi = (tau + window).min(m - 1);
        for pos in lo..=hi {
            let entry = rep.order[pos] as usize;
            let id = index.sample_ids[entry];
            let shard = index.sample_shards[entry];
            match by_id.entry(id) {
                std::collections::hash_map::Entry::Occupied(mut o) => {
                    // replicated points keep the smallest shard id
                    if shard < o.get().0 {
                        o.get_mut().0 = shard;
                    }
                }
                std::collections::hash_map::Entry::Vacant(v) => {
                    let dist = key_to_distance(
                        index.metric,
                        distance_key(index.metric, q, index.sample_row(entry)),
                    );
                    evals += 1;
                    v.insert((shard, dist));
                }
            }
        }
    }

    let mut candidates: Vec<Candidate> = by_id
        .into_iter()
        .map(|(id, (shard, distance))| Candidate {
            id,
            shard,
            distance,
        })
        .collect();
    candidates.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id)));
    Ok(CandidateSet {
        candidates,
        distance_evals: evals,
    })
}

fn rep_lower_bound(rep: &Repetition, qkey: &[i64], t: usize) -> usize {
    let mut lo = 0usize;
    let mut hi = rep.order.len();
    while lo < hi {
        let mid = (lo + hi) / 2;
        if rep.key_of(mid, t) < qkey {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn hypercube(n: usize, d: usize, seed: u64) -> Dataset {
        let mut r = rng(seed);
        let values: Vec<f32> = (0..n * d)
            .map(|_| if r.gen::<bool>() { 1.0 } else { 0.0 })
            .collect();
        Dataset::new(values, d, MetricTag::Hamming).unwrap()
    }

    fn even_partition(n: usize, s: u32) -> Partition {
        let labels: Vec<u32> = (0..n).map(|i| (i as u32) % s).collect();
        Partition::disjoint(labels, s, 0.05).unwrap()
    }

    #[test]
    fn full_budget_samples_every_point() {
        let data = hypercube(64, 16, 1);
        let p = even_partition(64, 4);
        let idx = hrt_train(&data, &p, 64, 2, 4, LshFamilyTag::BitSampling, 7).unwrap();
        let mut ids = idx.sampled_ids().to_vec();
        ids.sort_unstable();
        assert_eq!(ids, (0..64u32).collect::<Vec<_>>());
        assert!(idx.keys_sorted());
    }

    #[test]
    fn constant_keys_sort_by_point_id() {
        // a zero column: every bit-sample of it yields the same token
        let values: Vec<f32> = vec![0.0; 20];
        let data = Dataset::new(values, 1, MetricTag::Hamming).unwrap();
        let p = even_partition(20, 2);
        let idx = hrt_train(&data, &p, 20, 1, 1, LshFamilyTag::BitSampling, 3).unwrap();
        let rep = &idx.reps[0];
        let ids_in_order: Vec<u32> = rep
            .order
            .iter()
            .map(|&e| idx.sample_ids[e as usize])
            .collect();
        let mut sorted = ids_in_order.clone();
        sorted.sort_unstable();
        assert_eq!(ids_in_order, sorted);
    }

    #[test]
    fn sampled_query_retrieves_itself() {
        let data = hypercube(128, 32, 2);
        let p = even_partition(128, 4);
        let idx = hrt_train(&data, &p, 128, 4, 8, LshFamilyTag::BitSampling, 9).unwrap();
        let q = data.row(17);
        let out = hrt_route(&idx, q, 2).unwrap();
        let me = out.candidates.iter().find(|c| c.id == 17);
        let me = me.expect("query point itself should fall inside some window");
        assert_eq!(me.distance, 0.0);
    }

    #[test]
    fn huge_window_returns_the_whole_sample() {
        let data = hypercube(40, 8, 3);
        let p = even_partition(40, 2);
        let idx = hrt_train(&data, &p, 40, 3, 4, LshFamilyTag::BitSampling, 11).unwrap();
        let out = hrt_route(&idx, data.row(0), 40).unwrap();
        assert_eq!(out.candidates.len(), 40);
    }

    #[test]
    fn distance_evals_respect_the_bound() {
        let data = hypercube(200, 16, 4);
        let p = even_partition(200, 4);
        let r = 5;
        let w = 3;
        let idx = hrt_train(&data, &p, 100, r, 6, LshFamilyTag::BitSampling, 13).unwrap();
        let mut rr = rng(5);
        for _ in 0..50 {
            let q: Vec<f32> = (0..16)
                .map(|_| if rr.gen::<bool>() { 1.0 } else { 0.0 })
                .collect();
            let out = hrt_route(&idx, &q, w).unwrap();
            assert!(out.distance_evals <= r * (2 * w + 1));
        }
    }

    #[test]
    fn incompatible_family_is_rejected() {
        let data = hypercube(32, 8, 5);
        let p = even_partition(32, 2);
        assert!(hrt_train(&data, &p, 32, 1, 2, LshFamilyTag::Hyperplane, 0).is_err());
    }
}

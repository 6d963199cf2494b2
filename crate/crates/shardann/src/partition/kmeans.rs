//! Lloyd's k-means partitioning with remigration rebalancing, and the
//! penalized balanced variant that trades a little cluster quality for a
//! hard size guarantee.

use rayon::prelude::*;

use crate::dataset::{distance_key, key_to_distance, norm, Dataset, MetricTag};
use crate::partition::{check_feasible, Partition};
use crate::rng::{rng, sample_without_replacement, split};
use crate::{Error, Result};

pub(crate) const LLOYD_ROUNDS: usize = 20;
const BKM_SUB_ROUNDS: usize = 1000;
const BKM_MAX_ROUNDS: usize = 200;

/// Cluster centers with the bookkeeping the overlap and routing stages need.
#[derive(Debug, Clone, PartialEq)]
pub struct Centroids {
    d: usize,
    metric: MetricTag,
    centers: Vec<f32>,
    counts: Vec<usize>,
    mean_norms: Vec<f32>,
}

impl Centroids {
    /// Rebuilds centroids from persisted center vectors. Mean norms are
    /// taken from the centers themselves (only meaningful for routing and
    /// overlap, which never rescale).
    pub fn from_centers(centers: Vec<f32>, d: usize, metric: MetricTag, counts: Vec<usize>) -> Self {
        let mean_norms = centers.chunks_exact(d).map(norm).collect();
        Centroids {
            d,
            metric,
            centers,
            counts,
            mean_norms,
        }
    }

    pub fn num(&self) -> usize {
        self.counts.len()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn metric(&self) -> MetricTag {
        self.metric
    }

    pub fn center(&self, i: usize) -> &[f32] {
        &self.centers[i * self.d..(i + 1) * self.d]
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn mean_norms(&self) -> &[f32] {
        &self.mean_norms
    }

    pub fn centers_flat(&self) -> &[f32] {
        &self.centers
    }

    /// Index of the nearest center, ties towards the smaller index.
    pub fn nearest(&self, x: &[f32]) -> (u32, f32) {
        let mut best = (f32::INFINITY, 0u32);
        for c in 0..self.num() {
            let key = distance_key(self.metric, x, self.center(c));
            if key < best.0 {
                best = (key, c as u32);
            }
        }
        (best.1, key_to_distance(self.metric, best.0))
    }

    /// Sum over points of the comparison key to their assigned center
    /// (squared distance for L2): the quantity Lloyd's algorithm shrinks.
    pub fn objective(&self, data: &Dataset, labels: &[u32]) -> f64 {
        labels
            .par_iter()
            .enumerate()
            .map(|(i, &l)| distance_key(self.metric, data.row(i), self.center(l as usize)) as f64)
            .sum()
    }
}

/// Shared Lloyd state: assignment keys plus incremental per-cluster sums.
struct ClusterState {
    d: usize,
    sums: Vec<f64>,
    counts: Vec<usize>,
    norm_sums: Vec<f64>,
}

impl ClusterState {
    fn from_labels(data: &Dataset, labels: &[u32], k: usize) -> Self {
        let d = data.dim();
        let mut state = ClusterState {
            d,
            sums: vec![0.0; k * d],
            counts: vec![0; k],
            norm_sums: vec![0.0; k],
        };
        for (i, &l) in labels.iter().enumerate() {
            state.add(data.row(i), l as usize);
        }
        state
    }

    fn add(&mut self, row: &[f32], c: usize) {
        let sum = &mut self.sums[c * self.d..(c + 1) * self.d];
        for (s, &v) in sum.iter_mut().zip(row) {
            *s += v as f64;
        }
        self.counts[c] += 1;
        self.norm_sums[c] += norm(row) as f64;
    }

    fn remove(&mut self, row: &[f32], c: usize) {
        let sum = &mut self.sums[c * self.d..(c + 1) * self.d];
        for (s, &v) in sum.iter_mut().zip(row) {
            *s -= v as f64;
        }
        self.counts[c] -= 1;
        self.norm_sums[c] -= norm(row) as f64;
    }

    /// Recomputes centers as cluster means; under spherical updates each
    /// center is rescaled to the mean norm of its cluster.
    fn centers(&self, spherical: bool, previous: &[f32]) -> (Vec<f32>, Vec<f32>) {
        let k = self.counts.len();
        let mut centers = vec![0.0f32; k * self.d];
        let mut mean_norms = vec![0.0f32; k];
        for c in 0..k {
            let out = &mut centers[c * self.d..(c + 1) * self.d];
            if self.counts[c] == 0 {
                out.copy_from_slice(&previous[c * self.d..(c + 1) * self.d]);
                continue;
            }
            let inv = 1.0 / self.counts[c] as f64;
            for (o, &s) in out.iter_mut().zip(&self.sums[c * self.d..(c + 1) * self.d]) {
                *o = (s * inv) as f32;
            }
            mean_norms[c] = (self.norm_sums[c] * inv) as f32;
            if spherical {
                let len = norm(out);
                if len > 0.0 {
                    let scale = mean_norms[c] / len;
                    for o in out.iter_mut() {
                        *o *= scale;
                    }
                }
            }
        }
        (centers, mean_norms)
    }
}

fn assign_all(data: &Dataset, centers: &[f32], k: usize) -> (Vec<u32>, Vec<f32>) {
    let d = data.dim();
    let metric = data.metric();
    let pairs: Vec<(u32, f32)> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let row = data.row(i);
            let mut best = (f32::INFINITY, 0u32);
            for c in 0..k {
                let key = distance_key(metric, row, &centers[c * d..(c + 1) * d]);
                if key < best.0 {
                    best = (key, c as u32);
                }
            }
            (best.1, best.0)
        })
        .collect();
    let labels = pairs.iter().map(|p| p.0).collect();
    let keys = pairs.iter().map(|p| p.1).collect();
    (labels, keys)
}

/// Plain Lloyd's algorithm. Initial centers are points sampled uniformly
/// from the data; empty clusters are reseeded with the point farthest from
/// its current center.
pub(crate) fn lloyd(data: &Dataset, k: usize, rounds: usize, seed: u64) -> (Vec<u32>, Centroids) {
    let n = data.len();
    let d = data.dim();
    let metric = data.metric();
    let spherical = matches!(metric, MetricTag::InnerProduct | MetricTag::Angular);

    let mut r = rng(split(seed, 0x4B4D));
    let init = sample_without_replacement(&mut r, n, k);
    let mut centers = Vec::with_capacity(k * d);
    for &i in &init {
        centers.extend_from_slice(data.row(i as usize));
    }

    let mut labels = vec![0u32; n];
    let mut mean_norms = vec![0.0f32; k];
    let mut counts = vec![0usize; k];
    for _ in 0..rounds {
        let (new_labels, keys) = assign_all(data, &centers, k);
        labels = new_labels;
        let mut state = ClusterState::from_labels(data, &labels, k);

        // Reseed empty clusters from the point farthest from its center.
        loop {
            let Some(empty) = state.counts.iter().position(|&c| c == 0) else {
                break;
            };
            let mut far: Option<(f32, u32)> = None;
            for (i, &key) in keys.iter().enumerate() {
                if state.counts[labels[i] as usize] <= 1 {
                    continue;
                }
                let better = match far {
                    None => true,
                    Some((fk, fid)) => key > fk || (key == fk && (i as u32) < fid),
                };
                if better {
                    far = Some((key, i as u32));
                }
            }
            let Some((_, pick)) = far else { break };
            let pick = pick as usize;
            state.remove(data.row(pick), labels[pick] as usize);
            state.add(data.row(pick), empty);
            labels[pick] = empty as u32;
            centers[empty * d..(empty + 1) * d].copy_from_slice(data.row(pick));
        }

        let (new_centers, new_norms) = state.centers(spherical, &centers);
        centers = new_centers;
        mean_norms = new_norms;
        counts = state.counts;
    }

    // Final assignment against the last centers so labels and centers agree.
    let (final_labels, _) = assign_all(data, &centers, k);
    let state = ClusterState::from_labels(data, &final_labels, k);
    counts.copy_from_slice(&state.counts);
    for c in 0..k {
        mean_norms[c] = if state.counts[c] > 0 {
            (state.norm_sums[c] / state.counts[c] as f64) as f32
        } else {
            0.0
        };
    }
    (
        final_labels,
        Centroids {
            d,
            metric,
            centers,
            counts,
            mean_norms,
        },
    )
}

/// Moves points out of overloaded clusters, farthest from their center
/// first, each to the nearest center whose cluster still has spare
/// capacity. Leaves centers untouched.
fn remigrate(
    data: &Dataset,
    labels: &mut [u32],
    centroids: &Centroids,
    cap: usize,
) {
    let k = centroids.num();
    let metric = centroids.metric();
    let mut sizes = vec![0usize; k];
    for &l in labels.iter() {
        sizes[l as usize] += 1;
    }
    for c in 0..k {
        if sizes[c] <= cap {
            continue;
        }
        let mut members: Vec<(f32, u32)> = labels
            .iter()
            .enumerate()
            .filter(|&(_, &l)| l as usize == c)
            .map(|(i, _)| {
                (
                    distance_key(metric, data.row(i), centroids.center(c)),
                    i as u32,
                )
            })
            .collect();
        // farthest first, ties towards the smaller id
        members.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut cursor = 0;
        while sizes[c] > cap {
            let (_, id) = members[cursor];
            cursor += 1;
            let row = data.row(id as usize);
            let mut best: Option<(f32, usize)> = None;
            for t in 0..k {
                if t == c || sizes[t] >= cap {
                    continue;
                }
                let key = distance_key(metric, row, centroids.center(t));
                if best.map_or(true, |(bk, _)| key < bk) {
                    best = Some((key, t));
                }
            }
            let (_, target) = best.expect("feasible capacity must leave a non-full cluster");
            labels[id as usize] = target as u32;
            sizes[c] -= 1;
            sizes[target] += 1;
        }
    }
}

/// Lloyd's algorithm (20 rounds, random point initialization) followed by
/// remigration of overflow points until every cluster fits the size limit.
pub fn kmeans_partition(
    data: &Dataset,
    s: u32,
    epsilon: f64,
    seed: u64,
) -> Result<(Partition, Centroids)> {
    let n = data.len();
    if s == 0 || s as usize > n {
        return Err(Error::input(format!("s={s} out of range for n={n}")));
    }
    let cap = check_feasible(n, s, epsilon)?;
    let (mut labels, mut centroids) = lloyd(data, s as usize, LLOYD_ROUNDS, seed);
    remigrate(data, &mut labels, &centroids, cap);
    for (c, count) in centroids.counts.iter_mut().enumerate() {
        *count = labels.iter().filter(|&&l| l as usize == c).count();
    }
    Ok((Partition::disjoint(labels, s, epsilon)?, centroids))
}

/// Execution facts of the balanced run, mostly for tests and logs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BkmStats {
    /// Penalized assignment rounds that actually ran (0 if Lloyd's result
    /// was already balanced).
    pub penalized_rounds: usize,
    /// True if the round cap was hit and remigration had to finish the job.
    pub forced_finish: bool,
}

/// Balanced k-means: Lloyd's initialization, then penalized assignment
/// rounds where the cost of joining a cluster grows with its overload. The
/// penalty factor doubles when too few points migrate and halves when too
/// many do, until every cluster fits the size limit.
pub fn balanced_kmeans_partition(
    data: &Dataset,
    s: u32,
    epsilon: f64,
    seed: u64,
) -> Result<(Partition, Centroids, BkmStats)> {
    let n = data.len();
    if s == 0 || s as usize > n {
        return Err(Error::input(format!("s={s} out of range for n={n}")));
    }
    let cap = check_feasible(n, s, epsilon)?;
    let k = s as usize;
    let d = data.dim();
    let metric = data.metric();
    let spherical = matches!(metric, MetricTag::InnerProduct | MetricTag::Angular);

    let (mut labels, centroids) = lloyd(data, k, LLOYD_ROUNDS, seed);
    let mut centers = centroids.centers.clone();
    let mut state = ClusterState::from_labels(data, &labels, k);
    let mut stats = BkmStats {
        penalized_rounds: 0,
        forced_finish: false,
    };

    let balanced = |counts: &[usize]| counts.iter().all(|&c| c <= cap);
    if !balanced(&state.counts) {
        // Penalty scale: one mean assignment distance per n/s points of
        // overload. Doubling and halving adapt it from there.
        let mean_dist: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                key_to_distance(metric, distance_key(metric, data.row(i), &centers[l as usize * d..(l as usize + 1) * d])) as f64
            })
            .sum::<f64>()
            / n as f64;
        let ideal = n as f64 / k as f64;
        let mut mu = (mean_dist / ideal).max(f64::MIN_POSITIVE);

        let chunk = n.div_ceil(BKM_SUB_ROUNDS);
        for _round in 0..BKM_MAX_ROUNDS {
            stats.penalized_rounds += 1;
            let mut moved = 0usize;
            for start in (0..n).step_by(chunk) {
                let end = (start + chunk).min(n);
                let sizes = state.counts.clone();
                let picks: Vec<u32> = (start..end)
                    .into_par_iter()
                    .map(|i| {
                        let row = data.row(i);
                        let mut best = (f64::INFINITY, 0u32);
                        for c in 0..k {
                            let dist = key_to_distance(
                                metric,
                                distance_key(metric, row, &centers[c * d..(c + 1) * d]),
                            ) as f64;
                            let excess = (sizes[c] as f64 - ideal).max(0.0);
                            let cost = dist + mu * excess;
                            if cost < best.0 {
                                best = (cost, c as u32);
                            }
                        }
                        best.1
                    })
                    .collect();
                for (i, &new_label) in (start..end).zip(&picks) {
                    let old = labels[i];
                    if old != new_label {
                        state.remove(data.row(i), old as usize);
                        state.add(data.row(i), new_label as usize);
                        labels[i] = new_label;
                        moved += 1;
                    }
                }
                let (new_centers, _) = state.centers(spherical, &centers);
                centers = new_centers;
            }
            if balanced(&state.counts) {
                break;
            }
            if moved < n / 1000 {
                mu *= 2.0;
            } else if moved > n / 20 {
                mu /= 2.0;
            }
        }

        if !balanced(&state.counts) {
            stats.forced_finish = true;
        }
    }

    let (final_centers, mean_norms) = state.centers(spherical, &centers);
    let mut centroids = Centroids {
        d,
        metric,
        centers: final_centers,
        counts: state.counts.clone(),
        mean_norms,
    };
    if stats.forced_finish {
        remigrate(data, &mut labels, &centroids, cap);
        for (c, count) in centroids.counts.iter_mut().enumerate() {
            *count = labels.iter().filter(|&&l| l as usize == c).count();
        }
    }
    Ok((Partition::disjoint(labels, s, epsilon)?, centroids, stats))
}

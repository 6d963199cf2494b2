//! Balanced sharding of a pointset.
//!
//! The built-in partitioner cuts the k-NN graph directly (multilevel label
//! propagation with FM-style refinement). The k-means family (`km`, `bkm`,
//! `pyramid`) provides the standard geometric baselines. All of them emit
//! [`Partition`]s that respect the shard size limit
//! `L_max = floor((1+eps) * n / s)`.

pub(crate) mod kmeans;
mod multilevel;
mod pyramid;

pub use kmeans::{balanced_kmeans_partition, kmeans_partition, BkmStats, Centroids};
pub use multilevel::{partition_graph, partition_graph_traced, FmLevelStats};
pub use pyramid::{pyramid_partition, PyramidRouter};

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::graph::KnnGraph;
use crate::{Error, Result};

/// Maximum shard size for `n` points in `s` shards at imbalance `epsilon`.
pub fn l_max(n: usize, s: u32, epsilon: f64) -> usize {
    // nudge before flooring so that exact integers survive float rounding
    ((1.0 + epsilon) * n as f64 / s as f64 + 1e-7).floor() as usize
}

pub(crate) fn check_feasible(n: usize, s: u32, epsilon: f64) -> Result<usize> {
    let cap = l_max(n, s, epsilon);
    if (s as usize) * cap < n {
        return Err(Error::input(format!(
            "balance constraint infeasible: {s} shards of at most {cap} cannot hold {n} points"
        )));
    }
    Ok(cap)
}

/// A node-to-shards assignment. Disjoint partitions map every node to
/// exactly one shard; overlapping partitions may replicate nodes.
///
/// `s_effective` records the divisor of the size limit the partition was
/// built against: the shard count itself for disjoint partitions, and the
/// pre-overlap target for overlapping ones (which have `round(o * s)`
/// shards grown to the limit of `s`).
#[derive(Debug, Clone)]
pub struct Partition {
    num_shards: u32,
    epsilon: f64,
    s_effective: u32,
    overlap_factor: f64,
    offsets: Vec<usize>,
    shard_ids: Vec<u32>,
}

// Equality is over the clustering content only; epsilon and the overlap
// factor are construction metadata that the file format does not carry.
impl PartialEq for Partition {
    fn eq(&self, other: &Self) -> bool {
        self.num_shards == other.num_shards
            && self.offsets == other.offsets
            && self.shard_ids == other.shard_ids
    }
}

impl Partition {
    /// One shard per node. `labels[u]` must be below `s`.
    pub fn disjoint(labels: Vec<u32>, s: u32, epsilon: f64) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= s) {
            return Err(Error::input(format!("label {bad} out of range for s={s}")));
        }
        let n = labels.len();
        Ok(Partition {
            num_shards: s,
            epsilon,
            s_effective: s,
            overlap_factor: 1.0,
            offsets: (0..=n).collect(),
            shard_ids: labels,
        })
    }

    /// Per-node shard lists, each non-empty, sorted, duplicate-free.
    pub fn overlapping(
        lists: Vec<Vec<u32>>,
        num_shards: u32,
        s_effective: u32,
        epsilon: f64,
        overlap_factor: f64,
    ) -> Result<Self> {
        let n = lists.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut shard_ids = Vec::new();
        offsets.push(0);
        for (u, list) in lists.into_iter().enumerate() {
            if list.is_empty() {
                return Err(Error::input(format!("node {u} belongs to no shard")));
            }
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::input(format!(
                    "node {u} has an unsorted or duplicated shard list"
                )));
            }
            if *list.last().unwrap() >= num_shards {
                return Err(Error::input(format!(
                    "node {u} names a shard >= {num_shards}"
                )));
            }
            shard_ids.extend_from_slice(&list);
            offsets.push(shard_ids.len());
        }
        Ok(Partition {
            num_shards,
            epsilon,
            s_effective,
            overlap_factor,
            offsets,
            shard_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_shards(&self) -> u32 {
        self.num_shards
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn s_effective(&self) -> u32 {
        self.s_effective
    }

    pub fn overlap_factor(&self) -> f64 {
        self.overlap_factor
    }

    /// Sorted shard ids of node `u` (a single element when disjoint).
    pub fn shards_of(&self, u: usize) -> &[u32] {
        &self.shard_ids[self.offsets[u]..self.offsets[u + 1]]
    }

    pub fn is_disjoint(&self) -> bool {
        self.shard_ids.len() == self.len()
    }

    /// Total assignment volume: n for disjoint partitions, more with overlap.
    pub fn volume(&self) -> usize {
        self.shard_ids.len()
    }

    pub fn shard_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.num_shards as usize];
        for &sid in &self.shard_ids {
            sizes[sid as usize] += 1;
        }
        sizes
    }

    /// Members of every shard, by ascending node id.
    pub fn shard_members(&self) -> Vec<Vec<u32>> {
        let mut members = vec![Vec::new(); self.num_shards as usize];
        for u in 0..self.len() {
            for &sid in self.shards_of(u) {
                members[sid as usize].push(u as u32);
            }
        }
        members
    }

    /// The size limit this partition was built against.
    pub fn size_limit(&self) -> usize {
        l_max(self.len(), self.s_effective, self.epsilon)
    }

    /// True if some shard contains both `u` and `v`.
    #[inline]
    pub fn share_shard(&self, u: usize, v: usize) -> bool {
        let a = self.shards_of(u);
        let b = self.shards_of(v);
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => return true,
            }
        }
        false
    }
}

/// Number of directed k-NN arcs `(u, v)` such that no shard contains both
/// endpoints. For disjoint partitions this is the classic edge cut; the
/// coverage reading extends it to overlapping shards.
pub fn cut_edges(graph: &KnnGraph, p: &Partition) -> Result<u64> {
    if graph.len() != p.len() {
        return Err(Error::input("graph and partition node counts differ"));
    }
    use rayon::prelude::*;
    let total: u64 = (0..graph.len())
        .into_par_iter()
        .map(|u| {
            graph
                .neighbors(u)
                .iter()
                .filter(|&&v| !p.share_shard(u, v as usize))
                .count() as u64
        })
        .sum();
    Ok(total)
}

/// `(max shard size) * s_effective / n - 1`: zero when perfectly balanced.
pub fn max_imbalance(p: &Partition) -> f64 {
    let max = p.shard_sizes().into_iter().max().unwrap_or(0);
    max as f64 * p.s_effective as f64 / p.len() as f64 - 1.0
}

const PARTITION_MAGIC: u32 = u32::from_le_bytes(*b"SPRT");

/// Writes the partition file: four u32 little-endian words (magic, n, s,
/// flags with bit 0 = overlapping), then n shard ids for disjoint
/// partitions, or an n+1 u64 offset table followed by the shard ids (CSR)
/// for overlapping ones.
pub fn export_partition(p: &Partition, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    let flags: u32 = if p.is_disjoint() { 0 } else { 1 };
    w.write_all(&PARTITION_MAGIC.to_le_bytes())?;
    w.write_all(&(p.len() as u32).to_le_bytes())?;
    w.write_all(&p.num_shards.to_le_bytes())?;
    w.write_all(&flags.to_le_bytes())?;
    if p.is_disjoint() {
        for u in 0..p.len() {
            w.write_all(&p.shards_of(u)[0].to_le_bytes())?;
        }
    } else {
        for &off in &p.offsets {
            w.write_all(&(off as u64).to_le_bytes())?;
        }
        for &sid in &p.shard_ids {
            w.write_all(&sid.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a partition file. Epsilon and the overlap factor are not part of
/// the format; the imported partition carries `epsilon = 0`, `s_effective =
/// s`, and the overlap factor implied by the stored lists.
pub fn import_partition(path: &Path) -> Result<Partition> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    fn read_u32(r: &mut BufReader<std::fs::File>, off: u64) -> Result<u32> {
        let mut buf = [0u8; 4];
        r.read_exact(&mut buf)
            .map_err(|_| Error::format(off, "truncated header"))?;
        Ok(u32::from_le_bytes(buf))
    }
    let magic = read_u32(&mut r, 0)?;
    if magic != PARTITION_MAGIC {
        return Err(Error::format(0, "bad magic"));
    }
    let n = read_u32(&mut r, 4)? as usize;
    let s = read_u32(&mut r, 8)?;
    let flags = read_u32(&mut r, 12)?;
    if n == 0 || s == 0 {
        return Err(Error::format(4, "empty partition"));
    }
    let overlapping = flags & 1 != 0;

    let (offsets, shard_ids) = if overlapping {
        let mut u64buf = [0u8; 8];
        let mut offsets = Vec::with_capacity(n + 1);
        for i in 0..=n {
            r.read_exact(&mut u64buf)
                .map_err(|_| Error::format(16 + 8 * i as u64, "truncated offset table"))?;
            offsets.push(u64::from_le_bytes(u64buf) as usize);
        }
        if offsets[0] != 0 || offsets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::format(16, "offsets not strictly increasing from 0"));
        }
        let volume = offsets[n];
        let base = 16 + 8 * (n as u64 + 1);
        let mut shard_ids = Vec::with_capacity(volume);
        let mut b = [0u8; 4];
        for i in 0..volume {
            r.read_exact(&mut b)
                .map_err(|_| Error::format(base + 4 * i as u64, "truncated shard ids"))?;
            shard_ids.push(u32::from_le_bytes(b));
        }
        (offsets, shard_ids)
    } else {
        let mut shard_ids = Vec::with_capacity(n);
        let mut b = [0u8; 4];
        for i in 0..n {
            r.read_exact(&mut b)
                .map_err(|_| Error::format(16 + 4 * i as u64, "truncated shard ids"))?;
            shard_ids.push(u32::from_le_bytes(b));
        }
        ((0..=n).collect(), shard_ids)
    };

    for (i, &sid) in shard_ids.iter().enumerate() {
        if sid >= s {
            let base = if overlapping {
                16 + 8 * (n as u64 + 1)
            } else {
                16
            };
            return Err(Error::format(
                base + 4 * i as u64,
                format!("shard id {sid} >= s={s}"),
            ));
        }
    }
    for u in 0..n {
        let list = &shard_ids[offsets[u]..offsets[u + 1]];
        if list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::format(
                16,
                format!("node {u} list unsorted or duplicated"),
            ));
        }
    }

    let volume = shard_ids.len();
    Ok(Partition {
        num_shards: s,
        epsilon: 0.0,
        s_effective: s,
        overlap_factor: volume as f64 / n as f64,
        offsets,
        shard_ids,
    })
}

//! Overlapping shards by greedy node replication.
//!
//! Starting from a disjoint partition into `s' = round(o * s)` shards at
//! the tighter limit `floor((1+eps) * n / s')`, nodes are replicated into
//! shards where they eliminate cut k-NN arcs, until no placement into a
//! below-limit shard removes an edge. The shard count grows instead of the
//! shard size, so memory per shard stays fixed.

use rayon::prelude::*;

use crate::dataset::{distance_key, Dataset};
use crate::graph::KnnGraph;
use crate::partition::{l_max, Centroids, Partition};
use crate::{Error, Result};

/// Replication geometry: the final per-shard limit stays at the disjoint
/// `s`-shard limit while the shard count becomes `s' = round(o * s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapParams {
    /// Replication factor (total volume target, as a multiple of n).
    pub o: f64,
    /// Final shard size limit `floor((1+eps) * n / s)`.
    pub l_final: usize,
    /// Pre-overlap shard count.
    pub s_prime: u32,
    /// Post-overlap logical shard count (the size-limit divisor).
    pub s: u32,
    pub epsilon: f64,
}

impl OverlapParams {
    pub fn new(n: usize, s: u32, epsilon: f64, o: f64) -> Result<Self> {
        if o < 1.0 {
            return Err(Error::input("overlap factor must be at least 1"));
        }
        if s == 0 {
            return Err(Error::input("need at least one shard"));
        }
        let s_prime = (o * s as f64).round() as u32;
        let l_final = l_max(n, s, epsilon);
        if l_final * s_prime as usize == 0 || l_final < n.div_ceil(s_prime as usize) {
            return Err(Error::input(format!(
                "final limit {l_final} cannot hold {n} points in {s_prime} shards"
            )));
        }
        Ok(OverlapParams {
            o,
            l_final,
            s_prime,
            s,
            epsilon,
        })
    }
}

/// One applied replication, with the gain it was applied at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement {
    pub node: u32,
    pub shard: u32,
    pub gain: u64,
}

/// Symmetrized neighbor lists with arc multiplicities (1 or 2).
fn arc_neighbors(graph: &KnnGraph) -> Vec<Vec<(u32, u32)>> {
    let n = graph.len();
    let mut pairs: Vec<Vec<u32>> = vec![Vec::new(); n];
    for u in 0..n {
        for &v in graph.neighbors(u) {
            pairs[u].push(v);
            pairs[v as usize].push(u as u32);
        }
    }
    pairs
        .into_iter()
        .map(|mut list| {
            list.sort_unstable();
            let mut out = Vec::new();
            let mut i = 0;
            while i < list.len() {
                let v = list[i];
                let mut mult = 0u32;
                while i < list.len() && list[i] == v {
                    mult += 1;
                    i += 1;
                }
                out.push((v, mult));
            }
            out
        })
        .collect()
}

fn share(a: &[u32], b: &[u32]) -> bool {
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

/// Gain of replicating `u` into `shard`: the number of currently uncovered
/// arcs between `u` and members of that shard.
fn gain_of(
    u: usize,
    shard: u32,
    neighbors: &[Vec<(u32, u32)>],
    membership: &[Vec<u32>],
) -> u64 {
    let mut gain = 0u64;
    for &(v, mult) in &neighbors[u] {
        if membership[v as usize].binary_search(&shard).is_ok()
            && !share(&membership[u], &membership[v as usize])
        {
            gain += mult as u64;
        }
    }
    gain
}

/// Grows an overlapping partition out of a disjoint one by repeatedly
/// replicating the node whose placement eliminates the most cut arcs.
/// Placements of equal gain are grouped into bulk rounds; a placement whose
/// gain went stale inside a round is skipped and reconsidered in the next
/// round. Returns the partition and the trace of applied placements.
pub fn overlap_graph_partition_traced(
    graph: &KnnGraph,
    p: &Partition,
    params: &OverlapParams,
) -> Result<(Partition, Vec<Placement>)> {
    if !p.is_disjoint() {
        return Err(Error::input("overlap growth needs a disjoint input partition"));
    }
    if p.num_shards() != params.s_prime {
        return Err(Error::input(format!(
            "partition has {} shards, expected s'={}",
            p.num_shards(),
            params.s_prime
        )));
    }
    if graph.len() != p.len() {
        return Err(Error::input("graph and partition node counts differ"));
    }
    let n = p.len();
    let pre_cap = l_max(n, params.s_prime, params.epsilon);
    if p.shard_sizes().into_iter().any(|sz| sz > pre_cap) {
        return Err(Error::input(format!(
            "input shards must respect the pre-overlap limit {pre_cap}"
        )));
    }

    let neighbors = arc_neighbors(graph);
    let mut membership: Vec<Vec<u32>> = (0..n).map(|u| p.shards_of(u).to_vec()).collect();
    let mut sizes = p.shard_sizes();
    let mut trace = Vec::new();

    loop {
        // all positive-gain placements into shards with room
        let proposals: Vec<(u64, u32, u32)> = (0..n)
            .into_par_iter()
            .flat_map_iter(|u| {
                let mut local: Vec<(u64, u32, u32)> = Vec::new();
                let mut gains: std::collections::BTreeMap<u32, u64> = std::collections::BTreeMap::new();
                for &(v, mult) in &neighbors[u] {
                    if share(&membership[u], &membership[v as usize]) {
                        continue;
                    }
                    for &sid in &membership[v as usize] {
                        *gains.entry(sid).or_insert(0) += mult as u64;
                    }
                }
                for (sid, gain) in gains {
                    if gain > 0 && sizes[sid as usize] < params.l_final {
                        local.push((gain, u as u32, sid));
                    }
                }
                local.into_iter()
            })
            .collect();

        let Some(&(best_gain, _, _)) = proposals.iter().max_by_key(|&&(g, u, sid)| {
            (g, std::cmp::Reverse(u), std::cmp::Reverse(sid))
        }) else {
            break;
        };
        if best_gain == 0 {
            break;
        }

        // bulk round: everything at the current best gain, (node, shard) order
        let mut round: Vec<(u64, u32, u32)> = proposals
            .into_iter()
            .filter(|&(g, _, _)| g == best_gain)
            .collect();
        round.sort_by_key(|&(_, u, sid)| (u, sid));
        for (selected_gain, u, sid) in round {
            if sizes[sid as usize] >= params.l_final {
                continue;
            }
            let now = gain_of(u as usize, sid, &neighbors, &membership);
            if now != selected_gain {
                // stale: a neighbor's placement already covered some arcs
                continue;
            }
            let list = &mut membership[u as usize];
            let pos = list.binary_search(&sid).unwrap_err();
            list.insert(pos, sid);
            sizes[sid as usize] += 1;
            trace.push(Placement {
                node: u,
                shard: sid,
                gain: now,
            });
        }
    }

    let out = Partition::overlapping(
        membership,
        params.s_prime,
        params.s,
        params.epsilon,
        params.o,
    )?;
    Ok((out, trace))
}

/// [`overlap_graph_partition_traced`] without the trace.
pub fn overlap_graph_partition(
    graph: &KnnGraph,
    p: &Partition,
    params: &OverlapParams,
) -> Result<Partition> {
    Ok(overlap_graph_partition_traced(graph, p, params)?.0)
}

/// Center-based overlap for the k-means family: in rounds j = 2, 3, ...,
/// points are replicated into their j-th closest center's shard, cheapest
/// distance ratio first, until the replication budget `(o-1) * n` is spent
/// or no shard has room.
pub fn overlap_by_centers(
    data: &Dataset,
    p: &Partition,
    centers: &Centroids,
    params: &OverlapParams,
) -> Result<Partition> {
    if !p.is_disjoint() {
        return Err(Error::input("center overlap needs a disjoint input partition"));
    }
    if p.num_shards() != params.s_prime || centers.num() != params.s_prime as usize {
        return Err(Error::input("partition, centers, and s' disagree"));
    }
    if data.len() != p.len() || data.dim() != centers.dim() {
        return Err(Error::input("dataset does not match the partition/centers"));
    }
    let n = data.len();
    let s_prime = params.s_prime as usize;
    let metric = data.metric();

    let mut membership: Vec<Vec<u32>> = (0..n).map(|u| p.shards_of(u).to_vec()).collect();
    let mut sizes = p.shard_sizes();
    let budget = (((params.o - 1.0) * n as f64) + 1e-7).floor() as usize;
    let mut replicated = 0usize;

    if budget > 0 && s_prime > 1 {
        // per point: centers by ascending distance
        let ranked: Vec<Vec<(f32, u32)>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let row = data.row(i);
                let mut around: Vec<(f32, u32)> = (0..s_prime)
                    .map(|c| {
                        (
                            crate::dataset::key_to_distance(
                                metric,
                                distance_key(metric, row, centers.center(c)),
                            ),
                            c as u32,
                        )
                    })
                    .collect();
                around.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                around
            })
            .collect();
        // negated inner products can be negative; shift so ratios order
        // points by relative closeness for every metric
        let shift = ranked
            .iter()
            .flat_map(|r| r.iter().map(|&(d, _)| d))
            .fold(0.0f32, f32::min)
            .min(0.0);

        'rounds: for j in 1..s_prime {
            let mut order: Vec<(f64, u32)> = (0..n)
                .map(|i| {
                    let d1 = (ranked[i][0].0 - shift) as f64;
                    let dj = (ranked[i][j].0 - shift) as f64;
                    let ratio = if d1 > 0.0 { dj / d1 } else { f64::INFINITY };
                    (ratio, i as u32)
                })
                .collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut any_capacity = false;
            for &(_, i) in &order {
                let sid = ranked[i as usize][j].1;
                if sizes[sid as usize] >= params.l_final {
                    continue;
                }
                any_capacity = true;
                let list = &mut membership[i as usize];
                if let Err(pos) = list.binary_search(&sid) {
                    list.insert(pos, sid);
                    sizes[sid as usize] += 1;
                    replicated += 1;
                    if replicated >= budget {
                        break 'rounds;
                    }
                }
            }
            if !any_capacity {
                break;
            }
        }
    }

    Partition::overlapping(
        membership,
        params.s_prime,
        params.s,
        params.epsilon,
        params.o,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::MetricTag;
    use crate::graph::build_exact_knn;
    use crate::partition::{cut_edges, kmeans_partition};
    use crate::rng::rng;
    use rand::Rng;

    fn path_graph() -> KnnGraph {
        // path 0-1-2-3, both arc directions
        KnnGraph::from_adjacency(vec![vec![1], vec![0, 2], vec![1, 3], vec![2]], 2).unwrap()
    }

    #[test]
    fn zero_cut_input_is_returned_unchanged() {
        let g = KnnGraph::from_adjacency(vec![vec![1], vec![0], vec![3], vec![2]], 1).unwrap();
        let p = Partition::disjoint(vec![0, 0, 1, 1], 2, 0.5).unwrap();
        let params = OverlapParams::new(4, 1, 0.5, 2.0).unwrap();
        let (out, trace) = overlap_graph_partition_traced(&g, &p, &params).unwrap();
        assert!(trace.is_empty());
        for u in 0..4 {
            assert_eq!(out.shards_of(u), p.shards_of(u));
        }
    }

    #[test]
    fn path_trace_follows_the_tie_rule() {
        let g = path_graph();
        let p = Partition::disjoint(vec![0, 0, 1, 1], 2, 0.5).unwrap();
        // l_final = 3: replicating node 1 into shard 1 and node 2 into
        // shard 0 both have gain 2; the node-id tie rule picks node 1
        let params = OverlapParams {
            o: 1.0,
            l_final: 3,
            s_prime: 2,
            s: 2,
            epsilon: 0.5,
        };
        let (out, trace) = overlap_graph_partition_traced(&g, &p, &params).unwrap();
        assert_eq!(trace[0], Placement { node: 1, shard: 1, gain: 2 });
        assert_eq!(cut_edges(&g, &out).unwrap(), 0);
    }

    #[test]
    fn placements_reduce_cut_by_their_gain_exactly() {
        let mut r = rng(3);
        let values: Vec<f32> = (0..300 * 4).map(|_| r.gen_range(-1.0..1.0f32)).collect();
        let data = Dataset::new(values, 4, MetricTag::L2).unwrap();
        let g = build_exact_knn(&data, 5).unwrap();
        let p = crate::partition::partition_graph(&g, 6, 0.05, 1).unwrap();
        let params = OverlapParams::new(300, 5, 0.05, 1.2).unwrap();
        assert_eq!(params.s_prime, 6);
        let (_, trace) = overlap_graph_partition_traced(&g, &p, &params).unwrap();
        assert!(!trace.is_empty());

        // replay: apply placements one at a time and recount the cut
        let mut lists: Vec<Vec<u32>> = (0..300).map(|u| p.shards_of(u).to_vec()).collect();
        let mut cut = cut_edges(&g, &p).unwrap();
        for pl in &trace {
            let list = &mut lists[pl.node as usize];
            let pos = list.binary_search(&pl.shard).unwrap_err();
            list.insert(pos, pl.shard);
            let snapshot =
                Partition::overlapping(lists.clone(), 6, 5, 0.05, params.o).unwrap();
            let new_cut = cut_edges(&g, &snapshot).unwrap();
            assert_eq!(cut - new_cut, pl.gain, "placement {pl:?}");
            assert!(new_cut < cut);
            cut = new_cut;
        }
    }

    #[test]
    fn no_shard_exceeds_the_final_limit() {
        let mut r = rng(5);
        let values: Vec<f32> = (0..400 * 3).map(|_| r.gen_range(-1.0..1.0f32)).collect();
        let data = Dataset::new(values, 3, MetricTag::L2).unwrap();
        let g = build_exact_knn(&data, 6).unwrap();
        let p = crate::partition::partition_graph(&g, 6, 0.05, 2).unwrap();
        let params = OverlapParams::new(400, 5, 0.05, 1.2).unwrap();
        let (out, trace) = overlap_graph_partition_traced(&g, &p, &params).unwrap();
        assert!(out.shard_sizes().into_iter().all(|sz| sz <= params.l_final));
        // termination bound: one placement per removed arc at most
        let initial_cut = cut_edges(&g, &p).unwrap();
        assert!((trace.len() as u64) <= initial_cut);
    }

    #[test]
    fn center_overlap_keeps_o_one_unchanged() {
        let mut r = rng(7);
        let values: Vec<f32> = (0..200 * 3).map(|_| r.gen_range(-1.0..1.0f32)).collect();
        let data = Dataset::new(values, 3, MetricTag::L2).unwrap();
        let (p, centers) = kmeans_partition(&data, 4, 0.05, 9).unwrap();
        let params = OverlapParams::new(200, 4, 0.05, 1.0).unwrap();
        let out = overlap_by_centers(&data, &p, &centers, &params).unwrap();
        for u in 0..200 {
            assert_eq!(out.shards_of(u), p.shards_of(u));
        }
    }

    #[test]
    fn center_overlap_respects_capacity() {
        let mut r = rng(11);
        let values: Vec<f32> = (0..300 * 3).map(|_| r.gen_range(-1.0..1.0f32)).collect();
        let data = Dataset::new(values, 3, MetricTag::L2).unwrap();
        let (p, centers) = kmeans_partition(&data, 6, 0.05, 13).unwrap();
        let params = OverlapParams::new(300, 5, 0.05, 1.2).unwrap();
        let out = overlap_by_centers(&data, &p, &centers, &params).unwrap();
        let sizes = out.shard_sizes();
        assert!(sizes.iter().all(|&sz| sz <= params.l_final));
        assert!(sizes.iter().sum::<usize>() <= params.s_prime as usize * params.l_final);
    }

    #[test]
    fn midpoint_lands_in_both_blobs() {
        // two tight blobs plus one midpoint
        let mut values = Vec::new();
        let mut r = rng(13);
        for i in 0..41 {
            let offset = if i < 20 {
                -10.0f32
            } else if i < 40 {
                10.0
            } else {
                0.0 // the midpoint
            };
            values.push(offset + r.gen_range(-0.1..0.1f32));
        }
        let data = Dataset::new(values, 1, MetricTag::L2).unwrap();
        let (p, centers) = kmeans_partition(&data, 2, 0.6, 17).unwrap();
        let params = OverlapParams::new(41, 1, 0.6, 2.0).unwrap();
        // s = 1 keeps s' = 2 and gives every shard room for all points
        let out = overlap_by_centers(&data, &p, &centers, &params).unwrap();
        assert_eq!(out.shards_of(40).len(), 2, "midpoint should join both shards");
    }
}

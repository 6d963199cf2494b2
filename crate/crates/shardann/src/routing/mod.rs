//! Query routing: pick which shards to probe, and in what order.
//!
//! Two trainable indices live here. [`KmrTree`] sub-clusters every shard
//! with hierarchical k-means and searches the centroid trees best-first
//! under a node budget. [`HrtIndex`] samples points per shard, keys them
//! with compound LSH tokens, and scans a window around the query's position
//! in each sorted repetition. Both produce [`Candidate`]s that
//! [`aggregate_probe_order`] turns into a full shard ranking.

mod hrt;
mod kmr;
mod lsh;
mod serial;

pub use hrt::{hrt_route, hrt_train, CandidateSet, HrtIndex};
pub use kmr::{kmr_route, kmr_train, KmrParams, KmrTree};
pub use lsh::LshFamilyTag;
pub use serial::{load_router, save_router, Router};

pub use crate::truth::Candidate;

use serde::{Deserialize, Serialize};

/// How retrieved candidates are condensed into a shard ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoutingMode {
    /// Ascending minimum candidate distance per shard.
    Ranking,
    /// Descending voting power: near candidates vote with exponentially
    /// decaying strength, favoring many near neighbors over a single one.
    Voting,
}

impl RoutingMode {
    pub fn parse(s: &str) -> crate::Result<Self> {
        match s {
            "ranking" => Ok(RoutingMode::Ranking),
            "voting" => Ok(RoutingMode::Voting),
            other => Err(crate::Error::input(format!("unknown routing mode '{other}'"))),
        }
    }
}

/// A per-query permutation of all shard ids, best first, with the score
/// that put each shard in its place. Shards no candidate touched come
/// last, in ascending id order, carrying the sentinel-worst score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOrder {
    order: Vec<u32>,
    scores: Vec<f32>,
}

impl ProbeOrder {
    pub fn new(order: Vec<u32>, scores: Vec<f32>) -> Self {
        debug_assert_eq!(order.len(), scores.len());
        ProbeOrder { order, scores }
    }

    pub fn num_shards(&self) -> usize {
        self.order.len()
    }

    /// Shard ids, best first.
    pub fn order(&self) -> &[u32] {
        &self.order
    }

    /// Score of `order()[i]` at position `i`.
    pub fn scores(&self) -> &[f32] {
        &self.scores
    }

    /// The first `eta` shards to probe.
    pub fn prefix(&self, eta: usize) -> &[u32] {
        &self.order[..eta.min(self.order.len())]
    }

    pub fn is_permutation(&self) -> bool {
        let mut seen = vec![false; self.order.len()];
        for &sid in &self.order {
            if sid as usize >= seen.len() || seen[sid as usize] {
                return false;
            }
            seen[sid as usize] = true;
        }
        true
    }
}

/// Condenses candidates into a probe order over `s` shards.
///
/// Ranking scores a shard by its closest candidate. Voting scores it by
/// `sum(exp(-sigma * d^2))` over its candidates, with `sigma` chosen per
/// query so squared distances remap onto `[0, 12]`. Negative ordering keys
/// (negated inner products) are shifted to zero before squaring.
///
/// An empty candidate set yields the identity order with worst scores;
/// callers may treat that as a routing failure.
pub fn aggregate_probe_order(candidates: &[Candidate], mode: RoutingMode, s: u32) -> ProbeOrder {
    let s = s as usize;
    debug_assert!(candidates.iter().all(|c| (c.shard as usize) < s));
    match mode {
        RoutingMode::Ranking => {
            let mut score = vec![f32::INFINITY; s];
            for c in candidates {
                let slot = &mut score[c.shard as usize];
                if c.distance < *slot {
                    *slot = c.distance;
                }
            }
            let mut order: Vec<u32> = (0..s as u32).collect();
            order.sort_by(|&a, &b| {
                score[a as usize]
                    .total_cmp(&score[b as usize])
                    .then(a.cmp(&b))
            });
            let scores = order.iter().map(|&sid| score[sid as usize]).collect();
            ProbeOrder::new(order, scores)
        }
        RoutingMode::Voting => {
            let shift = candidates
                .iter()
                .map(|c| c.distance)
                .fold(0.0f32, f32::min);
            let max_sq = candidates
                .iter()
                .map(|c| {
                    let d = c.distance - shift;
                    d * d
                })
                .fold(0.0f32, f32::max);
            let sigma = if max_sq > 0.0 { 12.0 / max_sq as f64 } else { 0.0 };
            let mut power = vec![0.0f64; s];
            for c in candidates {
                let d = (c.distance - shift) as f64;
                power[c.shard as usize] += (-sigma * d * d).exp();
            }
            let mut order: Vec<u32> = (0..s as u32).collect();
            order.sort_by(|&a, &b| {
                power[b as usize]
                    .total_cmp(&power[a as usize])
                    .then(a.cmp(&b))
            });
            let scores = order.iter().map(|&sid| power[sid as usize] as f32).collect();
            ProbeOrder::new(order, scores)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(shard: u32, distance: f32) -> Candidate {
        Candidate {
            id: shard * 1000 + (distance * 100.0) as u32,
            shard,
            distance,
        }
    }

    #[test]
    fn both_modes_agree_on_a_singleton() {
        let c = [cand(3, 0.0)];
        for mode in [RoutingMode::Ranking, RoutingMode::Voting] {
            let po = aggregate_probe_order(&c, mode, 5);
            assert!(po.is_permutation());
            assert_eq!(po.order()[0], 3);
        }
    }

    #[test]
    fn ranking_uses_the_minimum_distance() {
        let c = [cand(1, 2.0), cand(2, 1.0), cand(1, 0.5)];
        let po = aggregate_probe_order(&c, RoutingMode::Ranking, 4);
        assert_eq!(&po.order()[..2], &[1, 2]);
        // untouched shards last, ascending
        assert_eq!(&po.order()[2..], &[0, 3]);
        assert!(po.scores()[2].is_infinite());
    }

    #[test]
    fn voting_prefers_many_near_candidates() {
        // 99 candidates at distance 1.0 in shard 0 vs one at 0.99 in shard 1
        let mut c: Vec<Candidate> = (0..99)
            .map(|i| Candidate {
                id: i,
                shard: 0,
                distance: 1.0,
            })
            .collect();
        c.push(Candidate {
            id: 1000,
            shard: 1,
            distance: 0.99,
        });
        let ranking = aggregate_probe_order(&c, RoutingMode::Ranking, 2);
        let voting = aggregate_probe_order(&c, RoutingMode::Voting, 2);
        assert_eq!(ranking.order()[0], 1);
        assert_eq!(voting.order()[0], 0);
    }

    #[test]
    fn empty_candidates_yield_identity_order() {
        for mode in [RoutingMode::Ranking, RoutingMode::Voting] {
            let po = aggregate_probe_order(&[], mode, 4);
            assert_eq!(po.order(), &[0, 1, 2, 3]);
        }
    }

    #[test]
    fn negative_distances_are_shifted_for_voting() {
        // negated inner products: all negative, nearest is most negative
        let c = [cand(0, -5.0), cand(1, -1.0)];
        let po = aggregate_probe_order(&c, RoutingMode::Voting, 2);
        assert_eq!(po.order()[0], 0);
        assert!(po.scores()[0] > po.scores()[1]);
    }
}

//! Hash families for the sorted-LSH router, one per metric: coordinate
//! sampling for Hamming data, hyperplane signs for angular and inner
//! product, and discretized stable projections for L2. Every hash emits an
//! integer token; compound keys compare tokens lexicographically.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{distance, dot, Dataset, MetricTag};
use crate::rng::{rng, sample_without_replacement, split};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LshFamilyTag {
    /// Token = one sampled coordinate of a 0/1 vector.
    BitSampling,
    /// Token = sign of a random-hyperplane projection.
    Hyperplane,
    /// Token = floor((a.x + b) / w) for a Gaussian direction `a`.
    StableProjection,
}

impl LshFamilyTag {
    /// The family matching a metric.
    pub fn for_metric(metric: MetricTag) -> LshFamilyTag {
        match metric {
            MetricTag::Hamming => LshFamilyTag::BitSampling,
            MetricTag::Angular | MetricTag::InnerProduct => LshFamilyTag::Hyperplane,
            MetricTag::L2 => LshFamilyTag::StableProjection,
        }
    }

    pub fn compatible_with(self, metric: MetricTag) -> bool {
        self == Self::for_metric(metric)
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bit-sampling" => Ok(LshFamilyTag::BitSampling),
            "hyperplane" => Ok(LshFamilyTag::Hyperplane),
            "stable-projection" => Ok(LshFamilyTag::StableProjection),
            other => Err(Error::input(format!("unknown LSH family '{other}'"))),
        }
    }
}

impl std::fmt::Display for LshFamilyTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            LshFamilyTag::BitSampling => "bit-sampling",
            LshFamilyTag::Hyperplane => "hyperplane",
            LshFamilyTag::StableProjection => "stable-projection",
        };
        f.write_str(s)
    }
}

/// One drawn hash function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) enum HashFunc {
    Bit { index: u32 },
    Hyperplane { normal: Vec<f32> },
    Stable { direction: Vec<f32>, offset: f32, width: f32 },
}

fn gaussian(r: &mut ChaCha8Rng) -> f32 {
    // Box-Muller
    let u1: f64 = r.gen_range(f64::EPSILON..1.0);
    let u2: f64 = r.gen();
    ((-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()) as f32
}

impl HashFunc {
    pub(crate) fn draw(family: LshFamilyTag, d: usize, width: f32, r: &mut ChaCha8Rng) -> HashFunc {
        match family {
            LshFamilyTag::BitSampling => HashFunc::Bit {
                index: r.gen_range(0..d as u32),
            },
            LshFamilyTag::Hyperplane => HashFunc::Hyperplane {
                normal: (0..d).map(|_| gaussian(r)).collect(),
            },
            LshFamilyTag::StableProjection => HashFunc::Stable {
                direction: (0..d).map(|_| gaussian(r)).collect(),
                offset: r.gen_range(0.0..width),
                width,
            },
        }
    }

    #[inline]
    pub(crate) fn token(&self, x: &[f32]) -> i64 {
        match self {
            HashFunc::Bit { index } => x[*index as usize] as i64,
            HashFunc::Hyperplane { normal } => (dot(normal, x) >= 0.0) as i64,
            HashFunc::Stable {
                direction,
                offset,
                width,
            } => ((dot(direction, x) + offset) / width).floor() as i64,
        }
    }
}

/// Median pairwise distance of a sample of at most 1000 points: the
/// default bucket width for stable projections.
pub(crate) fn default_projection_width(data: &Dataset, seed: u64) -> f32 {
    let count = data.len().min(1000);
    let mut r = rng(split(seed, 0x71D7));
    let ids = sample_without_replacement(&mut r, data.len(), count);
    let mut dists = Vec::with_capacity(count * (count - 1) / 2);
    for i in 0..ids.len() {
        for j in (i + 1)..ids.len() {
            let d = distance(
                data.metric(),
                data.row(ids[i] as usize),
                data.row(ids[j] as usize),
            )
            .unwrap();
            dists.push(d);
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(f32::total_cmp);
    let median = dists[dists.len() / 2];
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn families_map_to_their_metrics() {
        assert_eq!(
            LshFamilyTag::for_metric(MetricTag::Hamming),
            LshFamilyTag::BitSampling
        );
        assert!(LshFamilyTag::Hyperplane.compatible_with(MetricTag::Angular));
        assert!(LshFamilyTag::Hyperplane.compatible_with(MetricTag::InnerProduct));
        assert!(!LshFamilyTag::BitSampling.compatible_with(MetricTag::L2));
    }

    #[test]
    fn bit_tokens_echo_coordinates() {
        let h = HashFunc::Bit { index: 2 };
        assert_eq!(h.token(&[0.0, 1.0, 1.0, 0.0]), 1);
        assert_eq!(h.token(&[0.0, 1.0, 0.0, 0.0]), 0);
    }

    #[test]
    fn stable_tokens_bucket_the_line() {
        let h = HashFunc::Stable {
            direction: vec![1.0],
            offset: 0.0,
            width: 2.0,
        };
        assert_eq!(h.token(&[0.5]), 0);
        assert_eq!(h.token(&[2.5]), 1);
        assert_eq!(h.token(&[-0.5]), -1);
    }

    #[test]
    fn nearby_points_collide_more_often_under_hyperplanes() {
        let mut r = rng(3);
        let a = vec![1.0f32, 0.0, 0.0];
        let near = vec![0.96f32, 0.05, 0.0];
        let far = vec![-0.9f32, 0.4, 0.1];
        let mut near_hits = 0;
        let mut far_hits = 0;
        for _ in 0..400 {
            let h = HashFunc::draw(LshFamilyTag::Hyperplane, 3, 1.0, &mut r);
            near_hits += (h.token(&a) == h.token(&near)) as usize;
            far_hits += (h.token(&a) == h.token(&far)) as usize;
        }
        assert!(near_hits > far_hits);
    }
}

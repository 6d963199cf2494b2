//! Dense vector datasets and metric dispatch.
//!
//! All distances are *minimized* downstream. Inner product is negated at
//! this boundary so that "smaller is more similar" holds for every metric,
//! and ties anywhere in the crate break towards the smaller point id.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Selects the distance function of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricTag {
    /// Euclidean norm of the difference.
    L2,
    /// Negated inner product, so that larger similarity sorts first.
    InnerProduct,
    /// `1 - cos(x, y)`.
    Angular,
    /// Number of differing coordinates; inputs must be 0/1-valued.
    Hamming,
}

impl MetricTag {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(MetricTag::L2),
            "ip" | "inner-product" => Ok(MetricTag::InnerProduct),
            "angular" => Ok(MetricTag::Angular),
            "hamming" => Ok(MetricTag::Hamming),
            other => Err(Error::input(format!("unknown metric '{other}'"))),
        }
    }
}

impl std::fmt::Display for MetricTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            MetricTag::L2 => "l2",
            MetricTag::InnerProduct => "inner-product",
            MetricTag::Angular => "angular",
            MetricTag::Hamming => "hamming",
        };
        f.write_str(s)
    }
}

/// An immutable set of `n` dense `d`-dimensional vectors in row-major order,
/// tagged with the metric queries against it should use.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Vec<f32>,
    n: usize,
    d: usize,
    metric: MetricTag,
}

impl Dataset {
    /// Wraps a row-major buffer. Fails if the buffer is empty, ragged, or
    /// contains non-finite coordinates (or non-0/1 coordinates for Hamming).
    pub fn new(values: Vec<f32>, d: usize, metric: MetricTag) -> Result<Self> {
        if d == 0 {
            return Err(Error::input("dimension must be at least 1"));
        }
        if values.is_empty() || values.len() % d != 0 {
            return Err(Error::input(format!(
                "buffer of {} values is not a multiple of d={d}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!(
                "non-finite coordinate at flat index {pos}"
            )));
        }
        if metric == MetricTag::Hamming {
            if let Some(pos) = values.iter().position(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::input(format!(
                    "Hamming dataset has non-binary coordinate at flat index {pos}"
                )));
            }
        }
        let n = values.len() / d;
        Ok(Dataset {
            values,
            n,
            d,
            metric,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn metric(&self) -> MetricTag {
        self.metric
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.d)
    }

    /// Copies the given rows into a new dataset with the same metric.
    pub fn gather(&self, ids: &[u32]) -> Dataset {
        let mut values = Vec::with_capacity(ids.len() * self.d);
        for &id in ids {
            values.extend_from_slice(self.row(id as usize));
        }
        Dataset {
            values,
            n: ids.len(),
            d: self.d,
            metric: self.metric,
        }
    }
}

/// Distance between two vectors under `metric`. Smaller is always closer.
///
/// L2 returns the Euclidean norm of `x - y`, inner product the negated dot
/// product, angular `1 - cos(x, y)`, Hamming the count of differing
/// coordinates.
pub fn distance(metric: MetricTag, x: &[f32], y: &[f32]) -> Result<f32> {
    if x.len() != y.len() {
        return Err(Error::input(format!(
            "dimension mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    Ok(key_to_distance(metric, distance_key(metric, x, y)))
}

/// Monotone comparison key: identical ordering to [`distance`] but skips the
/// square root for L2. Hot paths compare keys and convert once at the end.
#[inline]
pub(crate) fn distance_key(metric: MetricTag, x: &[f32], y: &[f32]) -> f32 {
    debug_assert_eq!(x.len(), y.len());
    match metric {
        MetricTag::L2 => squared_l2(x, y),
        MetricTag::InnerProduct => -dot(x, y),
        MetricTag::Angular => angular(x, y),
        MetricTag::Hamming => hamming(x, y),
    }
}

#[inline]
pub(crate) fn key_to_distance(metric: MetricTag, key: f32) -> f32 {
    match metric {
        MetricTag::L2 => key.max(0.0).sqrt(),
        _ => key,
    }
}

// Both hot kernels keep eight independent accumulator lanes so the
// reduction vectorizes; a single running sum would serialize on the strict
// float semantics.

const LANES: usize = 8;

#[inline]
fn squared_l2(x: &[f32], y: &[f32]) -> f32 {
    let mut acc = [0.0f32; LANES];
    let mut xc = x.chunks_exact(LANES);
    let mut yc = y.chunks_exact(LANES);
    for (xs, ys) in (&mut xc).zip(&mut yc) {
        for lane in 0..LANES {
            let diff = xs[lane] - ys[lane];
            acc[lane] += diff * diff;
        }
    }
    let mut total = acc.iter().sum::<f32>();
    for (a, b) in xc.remainder().iter().zip(yc.remainder()) {
        let diff = a - b;
        total += diff * diff;
    }
    total
}

#[inline]
pub(crate) fn dot(x: &[f32], y: &[f32]) -> f32 {
    let mut acc = [0.0f32; LANES];
    let mut xc = x.chunks_exact(LANES);
    let mut yc = y.chunks_exact(LANES);
    for (xs, ys) in (&mut xc).zip(&mut yc) {
        for lane in 0..LANES {
            acc[lane] += xs[lane] * ys[lane];
        }
    }
    let mut total = acc.iter().sum::<f32>();
    for (a, b) in xc.remainder().iter().zip(yc.remainder()) {
        total += a * b;
    }
    total
}

#[inline]
pub(crate) fn norm(x: &[f32]) -> f32 {
    dot(x, x).max(0.0).sqrt()
}

#[inline]
fn angular(x: &[f32], y: &[f32]) -> f32 {
    let nx = norm(x);
    let ny = norm(y);
    if nx == 0.0 && ny == 0.0 {
        return 0.0;
    }
    if nx == 0.0 || ny == 0.0 {
        return 1.0;
    }
    1.0 - dot(x, y) / (nx * ny)
}

#[inline]
fn hamming(x: &[f32], y: &[f32]) -> f32 {
    let mut count = 0u32;
    for i in 0..x.len() {
        count += (x[i] != y[i]) as u32;
    }
    count as f32
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l2_is_the_345_triangle() {
        let d = distance(MetricTag::L2, &[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert_eq!(d, 5.0);
    }

    #[test]
    fn inner_product_is_negated() {
        let d = distance(MetricTag::InnerProduct, &[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(d, -11.0);
    }

    #[test]
    fn hamming_counts_flipped_bits() {
        let d = distance(
            MetricTag::Hamming,
            &[0.0, 1.0, 1.0, 0.0],
            &[0.0, 0.0, 1.0, 1.0],
        )
        .unwrap();
        assert_eq!(d, 2.0);
    }

    #[test]
    fn angular_of_parallel_vectors_is_zero() {
        let d = distance(MetricTag::Angular, &[1.0, 2.0], &[2.0, 4.0]).unwrap();
        assert!(d.abs() < 1e-6);
    }

    #[test]
    fn dimension_mismatch_is_an_input_error() {
        assert!(distance(MetricTag::L2, &[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn self_distance_zero_and_symmetry() {
        let xs = [
            vec![0.5, -1.25, 3.0],
            vec![2.0, 2.0, 2.0],
            vec![-7.0, 0.0, 1.5],
        ];
        for m in [MetricTag::L2, MetricTag::Angular] {
            for x in &xs {
                assert!(distance(m, x, x).unwrap().abs() < 1e-6);
                for y in &xs {
                    let a = distance(m, x, y).unwrap();
                    let b = distance(m, y, x).unwrap();
                    assert_eq!(a, b);
                }
            }
        }
        let bits: Vec<Vec<f32>> = vec![vec![0.0, 1.0, 1.0], vec![1.0, 1.0, 0.0]];
        for x in &bits {
            assert_eq!(distance(MetricTag::Hamming, x, x).unwrap(), 0.0);
        }
    }

    #[test]
    fn dataset_rejects_bad_buffers() {
        assert!(Dataset::new(vec![], 3, MetricTag::L2).is_err());
        assert!(Dataset::new(vec![1.0, 2.0], 3, MetricTag::L2).is_err());
        assert!(Dataset::new(vec![f32::NAN], 1, MetricTag::L2).is_err());
        assert!(Dataset::new(vec![0.5], 1, MetricTag::Hamming).is_err());
        assert!(Dataset::new(vec![0.0, 1.0], 1, MetricTag::Hamming).is_ok());
    }
}

//! Bounded best-k accumulator keyed by `(distance, id)`.
//!
//! The final contents depend only on the multiset of pushed candidates, not
//! on push order, which is what makes parallel candidate generation safe.

/// Keeps the `k` smallest `(key, id)` pairs seen so far, id-deduplicated.
/// Ties break towards the smaller id.
#[derive(Debug, Clone)]
pub(crate) struct TopK {
    k: usize,
    // sorted ascending by (key, id)
    entries: Vec<(f32, u32)>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        TopK {
            k,
            entries: Vec::with_capacity(k.min(1024) + 1),
        }
    }

    /// Current admission threshold: keys at or above this cannot enter a
    /// full accumulator (except to win an id tie, which never happens for
    /// distinct candidates).
    #[inline]
    pub fn threshold(&self) -> f32 {
        if self.entries.len() < self.k {
            f32::INFINITY
        } else {
            self.entries[self.k - 1].0
        }
    }

    #[inline]
    pub fn push(&mut self, key: f32, id: u32) {
        if self.entries.len() == self.k {
            let worst = self.entries[self.k - 1];
            if (key, id) >= worst && !self.contains(id) {
                return;
            }
        }
        self.push_slow(key, id);
    }

    fn push_slow(&mut self, key: f32, id: u32) {
        if self.contains(id) {
            return;
        }
        let pos = self
            .entries
            .partition_point(|&(ek, eid)| (ek, eid) < (key, id));
        self.entries.insert(pos, (key, id));
        if self.entries.len() > self.k {
            self.entries.pop();
        }
    }

    #[inline]
    fn contains(&self, id: u32) -> bool {
        self.entries.iter().any(|&(_, eid)| eid == id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn k_limit(&self) -> usize {
        self.k
    }

    /// Ascending by `(key, id)`.
    pub fn as_sorted(&self) -> &[(f32, u32)] {
        &self.entries
    }

    pub fn into_sorted(self) -> Vec<(f32, u32)> {
        self.entries
    }

    pub fn merge_from(&mut self, other: &TopK) {
        for &(key, id) in &other.entries {
            self.push(key, id);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_k_smallest_with_id_ties() {
        let mut t = TopK::new(3);
        for (key, id) in [(5.0, 1), (1.0, 2), (3.0, 3), (1.0, 0), (3.0, 4)] {
            t.push(key, id);
        }
        assert_eq!(t.as_sorted(), &[(1.0, 0), (1.0, 2), (3.0, 3)]);
    }

    #[test]
    fn dedups_by_id() {
        let mut t = TopK::new(4);
        t.push(2.0, 7);
        t.push(2.0, 7);
        t.push(2.0, 7);
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn order_insensitive() {
        let candidates = [(4.0, 1), (2.0, 2), (2.0, 3), (9.0, 4), (0.5, 5), (4.0, 6)];
        let mut forward = TopK::new(3);
        let mut backward = TopK::new(3);
        for &(k, id) in candidates.iter() {
            forward.push(k, id);
        }
        for &(k, id) in candidates.iter().rev() {
            backward.push(k, id);
        }
        assert_eq!(forward.as_sorted(), backward.as_sorted());
    }
}

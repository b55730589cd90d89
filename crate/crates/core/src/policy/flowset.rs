use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A finite union of closed intervals over the flow header.
///
/// Stored normalized: sorted, pairwise disjoint and non-adjacent.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct FlowSet {
    ranges: Vec<(u64, u64)>,
}

impl FlowSet {
    pub fn empty() -> Self {
        FlowSet { ranges: Vec::new() }
    }

    pub fn all() -> Self {
        FlowSet { ranges: vec![(0, u64::MAX)] }
    }

    pub fn interval(lo: u64, hi: u64) -> Self {
        FlowSet::from_ranges([(lo, hi)])
    }

    /// Builds a set from arbitrary ranges; inverted ranges are ignored.
    pub fn from_ranges(ranges: impl IntoIterator<Item = (u64, u64)>) -> Self {
        let mut rs: Vec<(u64, u64)> = ranges.into_iter().filter(|(lo, hi)| lo <= hi).collect();
        rs.sort_unstable();
        let mut out: Vec<(u64, u64)> = Vec::with_capacity(rs.len());
        for (lo, hi) in rs {
            match out.last_mut() {
                Some(last) if lo <= last.1.saturating_add(1) => last.1 = last.1.max(hi),
                _ => out.push((lo, hi)),
            }
        }
        FlowSet { ranges: out }
    }

    pub fn ranges(&self) -> &[(u64, u64)] {
        &self.ranges
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn contains(&self, flow: u64) -> bool {
        // ranges are sorted by lower bound
        let idx = self.ranges.partition_point(|(lo, _)| *lo <= flow);
        idx > 0 && self.ranges[idx - 1].1 >= flow
    }

    pub fn intersection(&self, other: &FlowSet) -> FlowSet {
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::new();
        while i < self.ranges.len() && j < other.ranges.len() {
            let (a_lo, a_hi) = self.ranges[i];
            let (b_lo, b_hi) = other.ranges[j];
            let lo = a_lo.max(b_lo);
            let hi = a_hi.min(b_hi);
            if lo <= hi {
                out.push((lo, hi));
            }
            if a_hi < b_hi {
                i += 1;
            } else {
                j += 1;
            }
        }
        FlowSet { ranges: out }
    }

    pub fn intersects(&self, other: &FlowSet) -> bool {
        !self.intersection(other).is_empty()
    }

    pub fn union(&self, other: &FlowSet) -> FlowSet {
        FlowSet::from_ranges(self.ranges.iter().chain(other.ranges.iter()).copied())
    }

    /// Smallest member, if any. Handy for picking a representative packet.
    pub fn min(&self) -> Option<u64> {
        self.ranges.first().map(|r| r.0)
    }
}

impl fmt::Display for FlowSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ranges.is_empty() {
            return f.write_str("{}");
        }
        for (i, (lo, hi)) in self.ranges.iter().enumerate() {
            if i > 0 {
                f.write_str("∪")?;
            }
            write!(f, "[{lo},{hi}]")?;
        }
        Ok(())
    }
}

impl Serialize for FlowSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.ranges.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FlowSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let ranges: Vec<(u64, u64)> = Vec::deserialize(deserializer)?;
        if let Some((lo, hi)) = ranges.iter().find(|(lo, hi)| lo > hi) {
            return Err(serde::de::Error::custom(format!("inverted flow range [{lo},{hi}]")));
        }
        Ok(FlowSet::from_ranges(ranges))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalizes_overlapping_and_adjacent_ranges() {
        let s = FlowSet::from_ranges([(5, 9), (0, 3), (4, 4), (20, 30), (25, 26)]);
        assert_eq!(s.ranges(), &[(0, 9), (20, 30)]);
    }

    #[test]
    fn interval_overlap() {
        let a = FlowSet::interval(0, 99);
        let b = FlowSet::interval(50, 149);
        let c = FlowSet::interval(100, 199);
        assert!(a.intersects(&b));
        assert!(!a.intersects(&c));
        assert_eq!(a.intersection(&b), FlowSet::interval(50, 99));
    }

    #[test]
    fn full_range_does_not_overflow() {
        let s = FlowSet::from_ranges([(0, u64::MAX), (7, 9)]);
        assert_eq!(s, FlowSet::all());
        assert!(s.contains(u64::MAX));
    }

    fn arb_set() -> impl Strategy<Value = FlowSet> {
        prop::collection::vec((0u64..60, 0u64..8), 0..5)
            .prop_map(|v| FlowSet::from_ranges(v.into_iter().map(|(lo, w)| (lo, lo + w))))
    }

    proptest! {
        #[test]
        fn set_operations_agree_with_membership(a in arb_set(), b in arb_set()) {
            let inter = a.intersection(&b);
            let uni = a.union(&b);
            for x in 0..70u64 {
                prop_assert_eq!(inter.contains(x), a.contains(x) && b.contains(x));
                prop_assert_eq!(uni.contains(x), a.contains(x) || b.contains(x));
            }
            prop_assert_eq!(a.intersects(&b), (0..70u64).any(|x| a.contains(x) && b.contains(x)));
        }
    }
}

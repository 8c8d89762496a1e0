use std::ops::Range;

/// Sorted, disjoint, non-empty entry-index intervals.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Live(Vec<Range<u32>>);

impl Live {
    pub fn full(count: u32) -> Self {
        if count == 0 {
            Live(Vec::new())
        } else {
            Live(std::iter::once(0..count).collect())
        }
    }

    pub fn from_ranges(mut ranges: Vec<Range<u32>>) -> Self {
        ranges.retain(|r| r.start < r.end);
        ranges.sort_by_key(|r| r.start);
        let mut out: Vec<Range<u32>> = Vec::with_capacity(ranges.len());
        for r in ranges {
            match out.last_mut() {
                Some(last) if r.start <= last.end => last.end = last.end.max(r.end),
                _ => out.push(r),
            }
        }
        Live(out)
    }

    pub fn ranges(&self) -> &[Range<u32>] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: u32) -> bool {
        let k = self.0.partition_point(|r| r.end <= i);
        self.0.get(k).is_some_and(|r| r.start <= i)
    }

    pub fn count(&self) -> u32 {
        self.0.iter().map(|r| r.end - r.start).sum()
    }

    /// The part of `self` inside `[a, b)`.
    pub fn clip(&self, a: u32, b: u32) -> Live {
        Live(
            self.0
                .iter()
                .filter_map(|r| {
                    let (s, e) = (r.start.max(a), r.end.min(b));
                    (s < e).then_some(s..e)
                })
                .collect(),
        )
    }

    /// `self` with `[a, b)` removed.
    pub fn remove(&self, a: u32, b: u32) -> Live {
        let mut out = Vec::with_capacity(self.0.len() + 1);
        for r in &self.0 {
            if r.end <= a || r.start >= b {
                out.push(r.clone());
                continue;
            }
            if r.start < a {
                out.push(r.start..a);
            }
            if r.end > b {
                out.push(b..r.end);
            }
        }
        Live(out)
    }

    pub fn union(&self, other: &Live) -> Live {
        Live::from_ranges(self.0.iter().chain(&other.0).cloned().collect())
    }
}

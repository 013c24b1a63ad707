use crate::error::{Error, Result};

/// Grouping of rows into contiguous segments, as produced by a stable sort
/// on segment id.
///
/// Members of each segment are visited in a fixed order: ascending row index
/// by default, or a caller-provided ranking (e.g. lexicographic coordinate
/// order, which makes reductions independent of input permutation).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentMap {
    ids: Vec<usize>,
    num_segments: usize,
    offsets: Vec<usize>,
    order: Vec<usize>,
}

impl SegmentMap {
    pub fn from_ids(ids: Vec<usize>, num_segments: usize) -> Result<Self> {
        let order: Vec<usize> = (0..ids.len()).collect();
        Self::with_visit_order(ids, num_segments, &order)
    }

    /// Builds the map visiting rows in `visit` order within each segment.
    /// `visit` must be a permutation of `0..ids.len()`.
    pub fn with_visit_order(ids: Vec<usize>, num_segments: usize, visit: &[usize]) -> Result<Self> {
        if visit.len() != ids.len() {
            return Err(Error::dim(
                "segment_map",
                format!("visit order has {} entries for {} rows", visit.len(), ids.len()),
            ));
        }
        let mut counts = vec![0usize; num_segments + 1];
        for &s in &ids {
            if s >= num_segments {
                return Err(Error::Index {
                    op: "segment_map",
                    index: s,
                    bound: num_segments,
                });
            }
            counts[s + 1] += 1;
        }
        for s in 0..num_segments {
            counts[s + 1] += counts[s];
        }
        let offsets = counts;
        let mut cursor = offsets.clone();
        let mut order = vec![usize::MAX; ids.len()];
        let mut placed = vec![false; ids.len()];
        for &row in visit {
            if row >= ids.len() {
                return Err(Error::Index {
                    op: "segment_map",
                    index: row,
                    bound: ids.len(),
                });
            }
            if std::mem::replace(&mut placed[row], true) {
                return Err(Error::Parameter(
                    "segment visit order is not a permutation".into(),
                ));
            }
            let s = ids[row];
            order[cursor[s]] = row;
            cursor[s] += 1;
        }
        Ok(SegmentMap {
            ids,
            num_segments,
            offsets,
            order,
        })
    }

    /// Consecutive runs of `size` rows: segment `s` holds rows `s*size..(s+1)*size`.
    pub fn uniform(num_segments: usize, size: usize) -> Self {
        let ids = (0..num_segments * size).map(|r| r / size.max(1)).collect();
        Self::from_ids(ids, num_segments).expect("uniform segments are in range")
    }

    pub fn num_segments(&self) -> usize {
        self.num_segments
    }

    /// Number of rows covered.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn segment_of(&self, row: usize) -> usize {
        self.ids[row]
    }

    /// Start of each segment in [`Self::sorted_rows`]; `num_segments + 1` entries.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// All rows grouped by segment.
    pub fn sorted_rows(&self) -> &[usize] {
        &self.order
    }

    pub fn members(&self, segment: usize) -> &[usize] {
        &self.order[self.offsets[segment]..self.offsets[segment + 1]]
    }

    pub fn count(&self, segment: usize) -> usize {
        self.offsets[segment + 1] - self.offsets[segment]
    }
}

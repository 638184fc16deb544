use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Assigns each element (edge) to a segment (its target node).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentIndex {
    ids: Vec<usize>,
    counts: Vec<usize>,
}

impl SegmentIndex {
    pub fn new(ids: Vec<usize>, num_segments: usize) -> Result<Self> {
        let mut counts = vec![0usize; num_segments];
        for &id in &ids {
            if id >= num_segments {
                return Err(Error::Invalid(format!(
                    "segment id {id} out of range for {num_segments} segments"
                )));
            }
            counts[id] += 1;
        }
        Ok(Self { ids, counts })
    }

    #[inline]
    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    /// Number of elements.
    #[inline]
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    #[inline]
    pub fn num_segments(&self) -> usize {
        self.counts.len()
    }

    /// Elements per segment.
    #[inline]
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_ids() {
        assert!(SegmentIndex::new(vec![0, 3], 3).is_err());
        let seg = SegmentIndex::new(vec![0, 2, 2], 3).unwrap();
        assert_eq!(seg.counts(), &[1, 0, 2]);
    }
}

use crate::error::{config_err, Result};

/// Contiguous, non-empty `[start, end)` frame ranges tiling `[0, total)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    ranges: Vec<(usize, usize)>,
}

impl Segments {
    /// Validates that `ranges` are sorted, non-empty, gap-free and start at 0.
    pub fn new(ranges: Vec<(usize, usize)>) -> Result<Self> {
        let mut cursor = 0;
        for (i, &(s, e)) in ranges.iter().enumerate() {
            if e <= s {
                config_err!("segment {i} is empty: [{s}, {e})");
            }
            if s != cursor {
                config_err!("segment {i} starts at {s}, expected {cursor} (overlap or gap)");
            }
            cursor = e;
        }
        Ok(Segments { ranges })
    }

    /// Prefix-sum segments from per-segment lengths.
    pub fn from_durations(durations: &[usize]) -> Result<Self> {
        let mut start = 0;
        let mut ranges = Vec::with_capacity(durations.len());
        for (i, d) in durations.iter().enumerate() {
            if *d == 0 {
                config_err!("duration {i} is zero");
            }
            ranges.push((start, start + d));
            start += d;
        }
        Ok(Segments { ranges })
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    /// Number of frames covered.
    pub fn total(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.1)
    }

    pub fn get(&self, i: usize) -> (usize, usize) {
        self.ranges[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.ranges.iter().copied()
    }

    pub fn durations(&self) -> Vec<usize> {
        self.ranges.iter().map(|(s, e)| e - s).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_gaps_overlaps_and_empty() {
        assert!(Segments::new(vec![(0, 2), (3, 5)]).is_err());
        assert!(Segments::new(vec![(0, 3), (2, 5)]).is_err());
        assert!(Segments::new(vec![(0, 2), (2, 2)]).is_err());
        assert!(Segments::new(vec![(1, 2)]).is_err());
        assert!(Segments::from_durations(&[3, 0]).is_err());
    }

    #[test]
    fn durations_round_trip() {
        let s = Segments::from_durations(&[5, 3, 4]).unwrap();
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![(0, 5), (5, 8), (8, 12)]);
        assert_eq!(s.total(), 12);
        assert_eq!(s.durations(), vec![5, 3, 4]);
    }
}

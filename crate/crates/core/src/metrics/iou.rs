//! Intersection-over-union between segmentation maps.
//!
//! All counts are exact integers; only the final division is floating point,
//! so results are identical to any other exact-count implementation.

use crate::error::{Result, SpicError};
use crate::types::SegmentationMap;

fn check_pair(s1: &SegmentationMap, s2: &SegmentationMap) -> Result<()> {
    if (s1.height(), s1.width()) != (s2.height(), s2.width()) {
        return Err(SpicError::DimensionMismatch {
            expected: format!("{}x{}", s1.height(), s1.width()),
            got: format!("{}x{}", s2.height(), s2.width()),
        });
    }
    if s1.n_classes() != s2.n_classes() {
        return Err(SpicError::InvalidMetricInput(format!(
            "class counts differ: {} vs {}",
            s1.n_classes(),
            s2.n_classes()
        )));
    }
    Ok(())
}

/// Per-class intersection and union pixel counts, additive across images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionAccumulator {
    n_classes: u8,
    intersection: Vec<u64>,
    union: Vec<u64>,
}

impl ConfusionAccumulator {
    pub fn new(n_classes: u8) -> Self {
        Self {
            n_classes,
            intersection: vec![0; n_classes as usize],
            union: vec![0; n_classes as usize],
        }
    }

    pub fn n_classes(&self) -> u8 {
        self.n_classes
    }

    pub fn intersection(&self, k: u8) -> u64 {
        self.intersection[k as usize]
    }

    pub fn union(&self, k: u8) -> u64 {
        self.union[k as usize]
    }

    pub fn accumulate(&mut self, s1: &SegmentationMap, s2: &SegmentationMap) -> Result<()> {
        check_pair(s1, s2)?;
        if s1.n_classes() != self.n_classes {
            return Err(SpicError::InvalidMetricInput(format!(
                "accumulator has {} classes, maps have {}",
                self.n_classes,
                s1.n_classes()
            )));
        }
        for (&a, &b) in s1.labels().iter().zip(s2.labels().iter()) {
            if a == b {
                self.intersection[a as usize] += 1;
                self.union[a as usize] += 1;
            } else {
                self.union[a as usize] += 1;
                self.union[b as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionAccumulator) -> Result<()> {
        if other.n_classes != self.n_classes {
            return Err(SpicError::InvalidMetricInput(format!(
                "accumulator class counts differ: {} vs {}",
                self.n_classes, other.n_classes
            )));
        }
        for k in 0..self.n_classes as usize {
            self.intersection[k] += other.intersection[k];
            self.union[k] += other.union[k];
        }
        Ok(())
    }

    /// Mean IoU over classes that appear in either map; classes absent from
    /// both are excluded from the average.
    pub fn miou(&self) -> Result<f64> {
        let mut sum = 0.0;
        let mut present = 0usize;
        for k in 0..self.n_classes as usize {
            if self.union[k] > 0 {
                sum += self.intersection[k] as f64 / self.union[k] as f64;
                present += 1;
            }
        }
        if present == 0 {
            return Err(SpicError::EmptyUnion);
        }
        Ok(sum / present as f64)
    }
}

/// IoU for one class; `None` when the class appears in neither map.
pub fn iou_class(s1: &SegmentationMap, s2: &SegmentationMap, k: u8) -> Result<Option<f64>> {
    check_pair(s1, s2)?;
    let (mut inter, mut union) = (0u64, 0u64);
    for (&a, &b) in s1.labels().iter().zip(s2.labels().iter()) {
        let in1 = a == k;
        let in2 = b == k;
        if in1 && in2 {
            inter += 1;
        }
        if in1 || in2 {
            union += 1;
        }
    }
    Ok(if union == 0 {
        None
    } else {
        Some(inter as f64 / union as f64)
    })
}

/// Single-pair mean IoU.
pub fn miou(s1: &SegmentationMap, s2: &SegmentationMap) -> Result<f64> {
    let mut acc = ConfusionAccumulator::new(s1.n_classes());
    acc.accumulate(s1, s2)?;
    acc.miou()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use std::collections::BTreeSet;

    fn map(labels: Array2<u8>, n: u8) -> SegmentationMap {
        SegmentationMap::new(labels, n).unwrap()
    }

    fn random_map(rng: &mut ChaCha12Rng, h: usize, w: usize, n: u8) -> SegmentationMap {
        map(Array2::from_shape_fn((h, w), |_| rng.gen_range(0..n)), n)
    }

    /// Brute-force oracle: build literal pixel-index sets per class and take
    /// set intersection/union sizes.
    fn miou_by_sets(s1: &SegmentationMap, s2: &SegmentationMap) -> Option<f64> {
        let n = s1.n_classes();
        let mut ious = Vec::new();
        for k in 0..n {
            let set = |s: &SegmentationMap| -> BTreeSet<(usize, usize)> {
                s.labels()
                    .indexed_iter()
                    .filter(|(_, &l)| l == k)
                    .map(|(idx, _)| idx)
                    .collect()
            };
            let a = set(s1);
            let b = set(s2);
            let union = a.union(&b).count();
            if union > 0 {
                ious.push(a.intersection(&b).count() as f64 / union as f64);
            }
        }
        if ious.is_empty() {
            None
        } else {
            Some(ious.iter().sum::<f64>() / ious.len() as f64)
        }
    }

    #[test]
    fn identical_maps_give_unity() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let s = random_map(&mut rng, 9, 7, 4);
        assert_eq!(miou(&s, &s).unwrap(), 1.0);
        for k in 0..4 {
            let v = iou_class(&s, &s, k).unwrap();
            assert!(v.is_none() || v == Some(1.0));
        }
    }

    #[test]
    fn disjoint_supports_give_zero() {
        let s1 = map(Array2::zeros((4, 4)), 2);
        let s2 = map(Array2::ones((4, 4)), 2);
        assert_eq!(iou_class(&s1, &s2, 0).unwrap(), Some(0.0));
        assert_eq!(iou_class(&s1, &s2, 1).unwrap(), Some(0.0));
        assert_eq!(miou(&s1, &s2).unwrap(), 0.0);
    }

    #[test]
    fn two_by_two_counted_by_hand() {
        // Class 0: s1 holds (0,0),(0,1); s2 holds (0,0). Intersection 1,
        // union 2. Class 1: s1 holds (1,0),(1,1); s2 holds (0,1),(1,0),(1,1).
        // Intersection 2, union 3.
        let s1 = map(array![[0, 0], [1, 1]], 2);
        let s2 = map(array![[0, 1], [1, 1]], 2);
        assert_eq!(iou_class(&s1, &s2, 0).unwrap(), Some(0.5));
        assert_eq!(iou_class(&s1, &s2, 1).unwrap(), Some(2.0 / 3.0));
        assert_eq!(miou(&s1, &s2).unwrap(), (0.5 + 2.0 / 3.0) / 2.0);
    }

    #[test]
    fn matches_set_oracle_on_100_random_maps() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        for _ in 0..100 {
            let n = rng.gen_range(2..=5u8);
            let s1 = random_map(&mut rng, 16, 16, n);
            let s2 = random_map(&mut rng, 16, 16, n);
            assert_eq!(miou(&s1, &s2).unwrap(), miou_by_sets(&s1, &s2).unwrap());
        }
    }

    #[test]
    fn miou_is_symmetric() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        for _ in 0..20 {
            let s1 = random_map(&mut rng, 8, 8, 3);
            let s2 = random_map(&mut rng, 8, 8, 3);
            assert_eq!(miou(&s1, &s2).unwrap(), miou(&s2, &s1).unwrap());
        }
    }

    #[test]
    fn absent_class_is_excluded_not_zero() {
        // Class 2 never appears; the average is over classes 0 and 1 only.
        let s1 = map(array![[0, 0], [1, 1]], 3);
        let s2 = map(array![[0, 0], [1, 1]], 3);
        assert_eq!(miou(&s1, &s2).unwrap(), 1.0);
        assert_eq!(iou_class(&s1, &s2, 2).unwrap(), None);
    }

    #[test]
    fn accumulator_merge_matches_hand_merged_counts() {
        let pairs = [
            (map(array![[0, 1]], 3), map(array![[0, 0]], 3)),
            (map(array![[1, 1]], 3), map(array![[1, 2]], 3)),
            (map(array![[2, 0]], 3), map(array![[2, 0]], 3)),
        ];
        let mut total = ConfusionAccumulator::new(3);
        let mut parts = Vec::new();
        for (a, b) in &pairs {
            total.accumulate(a, b).unwrap();
            let mut p = ConfusionAccumulator::new(3);
            p.accumulate(a, b).unwrap();
            parts.push(p);
        }
        let mut merged = ConfusionAccumulator::new(3);
        for p in &parts {
            merged.merge(p).unwrap();
        }
        assert_eq!(merged, total);
        // Hand counts: class 0 inter 2 (pair1 px0, pair3 px1), union 3;
        // class 1 inter 1 (pair2 px0), union 3; class 2 inter 1, union 2.
        assert_eq!(
            (0..3).map(|k| merged.intersection(k)).collect::<Vec<_>>(),
            vec![2, 1, 1]
        );
        assert_eq!(
            (0..3).map(|k| merged.union(k)).collect::<Vec<_>>(),
            vec![3, 3, 2]
        );
    }

    #[test]
    fn accumulation_is_order_invariant() {
        let mut rng = ChaCha12Rng::seed_from_u64(15);
        let pairs: Vec<_> = (0..4)
            .map(|_| {
                (
                    random_map(&mut rng, 6, 6, 4),
                    random_map(&mut rng, 6, 6, 4),
                )
            })
            .collect();
        let mut fwd = ConfusionAccumulator::new(4);
        for (a, b) in &pairs {
            fwd.accumulate(a, b).unwrap();
        }
        let mut rev = ConfusionAccumulator::new(4);
        for (a, b) in pairs.iter().rev() {
            rev.accumulate(a, b).unwrap();
        }
        assert_eq!(fwd, rev);
    }

    #[test]
    fn dim_and_class_mismatches_rejected() {
        let s1 = map(Array2::zeros((2, 2)), 2);
        let s2 = map(Array2::zeros((2, 3)), 2);
        assert!(miou(&s1, &s2).is_err());
        let s3 = map(Array2::zeros((2, 2)), 3);
        assert!(miou(&s1, &s3).is_err());
    }

    #[test]
    fn all_empty_unions_error() {
        let acc = ConfusionAccumulator::new(3);
        assert!(matches!(acc.miou(), Err(SpicError::EmptyUnion)));
    }
}

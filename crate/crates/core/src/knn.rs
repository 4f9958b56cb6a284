//! Exact k-nearest-neighbour radii.
//!
//! Points are sorted by their first coordinate; a query scans outwards from
//! its insertion position in both directions and stops a direction once the
//! first-coordinate gap alone exceeds the current k-th distance. This is exact
//! and close to `O(k log N)` per query for low-dimensional clouds.

use std::collections::BinaryHeap;

use crate::particles::EmpiricalMeasure;

#[derive(PartialEq)]
struct Cand {
    d2: f64,
    idx: usize,
}

impl Eq for Cand {}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.d2.total_cmp(&other.d2).then(self.idx.cmp(&other.idx))
    }
}

pub struct KnnIndex<'a> {
    cloud: &'a EmpiricalMeasure,
    /// Point indices sorted by first coordinate, ties by index.
    order: Vec<usize>,
    keys: Vec<f64>,
}

impl<'a> KnnIndex<'a> {
    pub fn new(cloud: &'a EmpiricalMeasure) -> Self {
        let mut order: Vec<usize> = (0..cloud.n()).collect();
        order.sort_by(|&i, &j| {
            cloud.point(i)[0]
                .total_cmp(&cloud.point(j)[0])
                .then(i.cmp(&j))
        });
        let keys = order.iter().map(|&i| cloud.point(i)[0]).collect();
        Self { cloud, order, keys }
    }

    /// Euclidean distance from `x` to its `k`-th nearest point, skipping the
    /// point with index `exclude`. Ties are ordered by index.
    pub fn kth_distance(&self, x: &[f64], k: usize, exclude: Option<usize>) -> f64 {
        assert!(k >= 1, "k must be at least 1");
        let mut heap: BinaryHeap<Cand> = BinaryHeap::with_capacity(k + 1);
        let start = self.keys.partition_point(|&v| v < x[0]);
        let n = self.order.len();
        let (mut lo, mut hi) = (start, start);
        let mut left_open = lo > 0;
        let mut right_open = hi < n;
        let bound = |heap: &BinaryHeap<Cand>| {
            if heap.len() < k {
                f64::INFINITY
            } else {
                heap.peek().map_or(f64::INFINITY, |c| c.d2)
            }
        };
        let consider = |heap: &mut BinaryHeap<Cand>, pos: usize| {
            let idx = self.order[pos];
            if Some(idx) == exclude {
                return;
            }
            let d2: f64 = self
                .cloud
                .point(idx)
                .iter()
                .zip(x)
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            let cand = Cand { d2, idx };
            if heap.len() < k {
                heap.push(cand);
            } else if heap.peek().is_some_and(|top| cand < *top) {
                heap.pop();
                heap.push(cand);
            }
        };
        while left_open || right_open {
            if right_open {
                let gap = self.keys[hi] - x[0];
                if gap * gap > bound(&heap) {
                    right_open = false;
                } else {
                    consider(&mut heap, hi);
                    hi += 1;
                    right_open = hi < n;
                }
            }
            if left_open {
                let gap = x[0] - self.keys[lo - 1];
                if gap * gap > bound(&heap) {
                    left_open = false;
                } else {
                    consider(&mut heap, lo - 1);
                    lo -= 1;
                    left_open = lo > 0;
                }
            }
        }
        assert!(heap.len() == k, "cloud has fewer than k candidate points");
        heap.peek().map_or(f64::INFINITY, |c| c.d2).sqrt()
    }
}

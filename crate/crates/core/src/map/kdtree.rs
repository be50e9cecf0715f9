//! Static 3-d tree over voxel centers.
//!
//! Nodes live in an implicit layout: the median of every index range sits at
//! the range midpoint and splits on the axis of largest spread. Small ranges
//! are scanned linearly.

use nalgebra::Point3;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone, Default)]
pub struct KdTree {
    points: Vec<Point3<f64>>,
    axes: Vec<u8>,
}

/// Nearest-neighbor and radius queries over a point set.
pub trait SpatialIndex {
    /// Closest stored point and its Euclidean distance, `None` when empty.
    fn nearest(&self, query: &Point3<f64>) -> Option<(Point3<f64>, f64)>;

    /// True if some stored point is strictly closer than `radius`.
    fn any_within(&self, query: &Point3<f64>, radius: f64) -> bool;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Distance to the closest stored point, `+inf` when empty.
    fn distance(&self, query: &Point3<f64>) -> f64 {
        self.nearest(query).map_or(f64::INFINITY, |(_, d)| d)
    }
}

impl KdTree {
    pub fn new(mut points: Vec<Point3<f64>>) -> Self {
        let mut axes = vec![0u8; points.len()];
        let n = points.len();
        build(&mut points, &mut axes, 0, n);
        Self { points, axes }
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    fn nearest_in(&self, lo: usize, hi: usize, q: &Point3<f64>, best: &mut (usize, f64)) {
        if hi - lo <= LEAF_SIZE {
            for i in lo..hi {
                let d2 = (self.points[i] - q).norm_squared();
                if d2 < best.1 {
                    *best = (i, d2);
                }
            }
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let axis = self.axes[mid] as usize;
        let p = &self.points[mid];
        let d2 = (p - q).norm_squared();
        if d2 < best.1 {
            *best = (mid, d2);
        }
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.nearest_in(near.0, near.1, q, best);
        if diff * diff < best.1 {
            self.nearest_in(far.0, far.1, q, best);
        }
    }

    fn within_in(&self, lo: usize, hi: usize, q: &Point3<f64>, r2: f64) -> bool {
        if hi - lo <= LEAF_SIZE {
            return self.points[lo..hi].iter().any(|p| (p - q).norm_squared() < r2);
        }
        let mid = lo + (hi - lo) / 2;
        let axis = self.axes[mid] as usize;
        let p = &self.points[mid];
        if (p - q).norm_squared() < r2 {
            return true;
        }
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        if self.within_in(near.0, near.1, q, r2) {
            return true;
        }
        diff * diff < r2 && self.within_in(far.0, far.1, q, r2)
    }
}

impl SpatialIndex for KdTree {
    fn nearest(&self, query: &Point3<f64>) -> Option<(Point3<f64>, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_in(0, self.points.len(), query, &mut best);
        Some((self.points[best.0], best.1.sqrt()))
    }

    fn any_within(&self, query: &Point3<f64>, radius: f64) -> bool {
        if self.points.is_empty() || radius <= 0.0 {
            return false;
        }
        self.within_in(0, self.points.len(), query, radius * radius)
    }

    fn len(&self) -> usize {
        self.points.len()
    }
}

fn build(points: &mut [Point3<f64>], axes: &mut [u8], lo: usize, hi: usize) {
    if hi - lo <= LEAF_SIZE {
        return;
    }
    let slice = &mut points[lo..hi];
    let mut min = slice[0];
    let mut max = slice[0];
    for p in slice.iter() {
        for k in 0..3 {
            min[k] = min[k].min(p[k]);
            max[k] = max[k].max(p[k]);
        }
    }
    let spread = max - min;
    let axis = spread.imax();
    let mid_local = slice.len() / 2;
    slice.select_nth_unstable_by(mid_local, |a, b| a[axis].total_cmp(&b[axis]));
    let mid = lo + mid_local;
    axes[mid] = axis as u8;
    build(points, axes, lo, mid);
    build(points, axes, mid + 1, hi);
}

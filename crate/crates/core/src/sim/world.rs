use nalgebra::{Point3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum WorldError {
    #[error("obstacle {index}: {reason}")]
    InvalidObstacle { index: usize, reason: &'static str },
}

/// Static obstacle geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    /// Vertical cylinder spanning `z_min..z_max`.
    Cylinder {
        center: [f64; 2],
        radius: f64,
        z_min: f64,
        z_max: f64,
    },
    /// Axis-aligned box.
    Box { min: [f64; 3], max: [f64; 3] },
    /// Zero-thickness wall along a 2-d segment, unbounded in z.
    Wall { start: [f64; 2], end: [f64; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    #[serde(flatten)]
    pub shape: Shape,
    /// Time window `[from, until)` during which the obstacle exists; always
    /// present when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active: Option<[f64; 2]>,
}

impl From<Shape> for Obstacle {
    fn from(shape: Shape) -> Self {
        Self { shape, active: None }
    }
}

impl Obstacle {
    pub fn is_active(&self, t: f64) -> bool {
        self.active.is_none_or(|[from, until]| t >= from && t < until)
    }
}

impl Shape {
    pub fn cylinder(x: f64, y: f64, radius: f64, z_min: f64, z_max: f64) -> Self {
        Shape::Cylinder {
            center: [x, y],
            radius,
            z_min,
            z_max,
        }
    }

    pub fn aabb(min: [f64; 3], max: [f64; 3]) -> Self {
        Shape::Box { min, max }
    }

    pub fn wall(start: [f64; 2], end: [f64; 2]) -> Self {
        Shape::Wall { start, end }
    }

    fn validate(&self) -> Result<(), &'static str> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            Shape::Cylinder {
                center,
                radius,
                z_min,
                z_max,
            } => {
                if !finite(center) || !finite(&[*radius, *z_min, *z_max]) {
                    return Err("non-finite cylinder parameter");
                }
                if !(*radius > 0.0) || !(z_max > z_min) {
                    return Err("cylinder radius and height must be positive");
                }
            }
            Shape::Box { min, max } => {
                if !finite(min) || !finite(max) {
                    return Err("non-finite box corner");
                }
                if min.iter().zip(max).any(|(a, b)| !(b > a)) {
                    return Err("box extents must be positive");
                }
            }
            Shape::Wall { start, end } => {
                if !finite(start) || !finite(end) {
                    return Err("non-finite wall endpoint");
                }
                if start == end {
                    return Err("wall segment has zero length");
                }
            }
        }
        Ok(())
    }

    /// Euclidean distance from `p` to the surface, zero inside solids.
    pub fn distance(&self, p: &Point3<f64>) -> f64 {
        match *self {
            Shape::Cylinder {
                center,
                radius,
                z_min,
                z_max,
            } => {
                let radial = (Vector2::new(p.x - center[0], p.y - center[1])).norm() - radius;
                let vertical = (z_min - p.z).max(p.z - z_max).max(0.0);
                if radial <= 0.0 && vertical == 0.0 {
                    0.0
                } else {
                    radial.max(0.0).hypot(vertical)
                }
            }
            Shape::Box { min, max } => {
                let d = Vector3::from_fn(|k, _| (min[k] - p[k]).max(p[k] - max[k]).max(0.0));
                d.norm()
            }
            Shape::Wall { start, end } => {
                segment_distance_2d(Vector2::new(p.x, p.y), Vector2::from(start), Vector2::from(end))
            }
        }
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        match self {
            Shape::Wall { .. } => false,
            _ => self.distance(p) == 0.0,
        }
    }

    /// Smallest `t` in `(0, max_t]` at which `origin + t * dir` meets the
    /// surface. `dir` need not be normalized; `t` is in units of `dir`.
    pub fn raycast(&self, origin: &Point3<f64>, dir: &Vector3<f64>, max_t: f64) -> Option<f64> {
        let hit = match *self {
            Shape::Cylinder {
                center,
                radius,
                z_min,
                z_max,
            } => ray_cylinder(origin, dir, center, radius, z_min, z_max),
            Shape::Box { min, max } => ray_box(origin, dir, &min, &max),
            Shape::Wall { start, end } => ray_wall(origin, dir, start, end),
        };
        hit.filter(|t| *t > 0.0 && *t <= max_t)
    }
}

fn segment_distance_2d(p: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    let ab = b - a;
    let s = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * s)).norm()
}

fn ray_cylinder(o: &Point3<f64>, d: &Vector3<f64>, c: [f64; 2], r: f64, z_min: f64, z_max: f64) -> Option<f64> {
    let mut best = f64::INFINITY;
    let ox = o.x - c[0];
    let oy = o.y - c[1];
    let a = d.x * d.x + d.y * d.y;
    if a > 0.0 {
        let b = 2.0 * (ox * d.x + oy * d.y);
        let cc = ox * ox + oy * oy - r * r;
        let disc = b * b - 4.0 * a * cc;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
                let z = o.z + t * d.z;
                if t > 0.0 && z >= z_min && z <= z_max {
                    best = best.min(t);
                }
            }
        }
    }
    if d.z != 0.0 {
        for zc in [z_min, z_max] {
            let t = (zc - o.z) / d.z;
            let x = ox + t * d.x;
            let y = oy + t * d.y;
            if t > 0.0 && x * x + y * y <= r * r {
                best = best.min(t);
            }
        }
    }
    best.is_finite().then_some(best)
}

fn ray_box(o: &Point3<f64>, d: &Vector3<f64>, min: &[f64; 3], max: &[f64; 3]) -> Option<f64> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for k in 0..3 {
        if d[k] == 0.0 {
            if o[k] < min[k] || o[k] > max[k] {
                return None;
            }
            continue;
        }
        let t1 = (min[k] - o[k]) / d[k];
        let t2 = (max[k] - o[k]) / d[k];
        t_near = t_near.max(t1.min(t2));
        t_far = t_far.min(t1.max(t2));
    }
    if t_near > t_far || t_far <= 0.0 {
        return None;
    }
    Some(if t_near > 0.0 { t_near } else { t_far })
}

fn ray_wall(o: &Point3<f64>, d: &Vector3<f64>, a: [f64; 2], b: [f64; 2]) -> Option<f64> {
    let e = Vector2::new(b[0] - a[0], b[1] - a[1]);
    let dd = Vector2::new(d.x, d.y);
    let denom = dd.perp(&e);
    if denom == 0.0 {
        return None;
    }
    let ao = Vector2::new(a[0] - o.x, a[1] - o.y);
    let t = ao.perp(&e) / denom;
    let s = ao.perp(&dd) / denom;
    (0.0..=1.0).contains(&s).then_some(t)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct World {
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    /// Axis-aligned extent `[min, max]` for display.
    #[serde(default)]
    pub bounds: Option<[[f64; 3]; 2]>,
}

impl World {
    pub fn new(obstacles: impl IntoIterator<Item = Obstacle>) -> Result<Self, WorldError> {
        let w = Self {
            obstacles: obstacles.into_iter().collect(),
            bounds: None,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        for (index, o) in self.obstacles.iter().enumerate() {
            o.shape
                .validate()
                .map_err(|reason| WorldError::InvalidObstacle { index, reason })?;
        }
        Ok(())
    }

    fn active(&self, t: f64) -> impl Iterator<Item = &Shape> {
        self.obstacles.iter().filter(move |o| o.is_active(t)).map(|o| &o.shape)
    }

    /// Exact distance from `p` to the nearest obstacle surface present at `t`.
    pub fn min_obstacle_distance(&self, p: &Point3<f64>, t: f64) -> f64 {
        self.active(t).map(|s| s.distance(p)).fold(f64::INFINITY, f64::min)
    }

    /// True if `p` lies inside a solid obstacle at `t`.
    pub fn penetrates(&self, p: &Point3<f64>, t: f64) -> bool {
        self.active(t).any(|s| s.contains(p))
    }

    /// Nearest hit along a ray, as a distance in units of `dir`.
    pub fn raycast(&self, origin: &Point3<f64>, dir: &Vector3<f64>, max_t: f64, t: f64) -> Option<f64> {
        self.active(t)
            .filter_map(|s| s.raycast(origin, dir, max_t))
            .min_by(f64::total_cmp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn world(shapes: Vec<Shape>) -> World {
        World::new(shapes.into_iter().map(Obstacle::from)).unwrap()
    }

    #[test]
    fn cylinder_distance_outside_and_inside() {
        let s = Shape::cylinder(0.0, 0.0, 0.5, 0.0, 10.0);
        assert!((s.distance(&Point3::new(3.0, 0.0, 5.0)) - 2.5).abs() < 1e-12);
        assert_eq!(s.distance(&Point3::new(0.1, 0.0, 5.0)), 0.0);
        assert!((s.distance(&Point3::new(0.0, 0.0, 12.0)) - 2.0).abs() < 1e-12);
        assert!((s.distance(&Point3::new(3.5, 0.0, 14.0)) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn box_penetration_is_zero() {
        let w = world(vec![Shape::aabb([0.0; 3], [1.0; 3])]);
        let inside = Point3::new(0.5, 0.5, 0.5);
        assert_eq!(w.min_obstacle_distance(&inside, 0.0), 0.0);
        assert!(w.penetrates(&inside, 0.0));
        assert!((w.min_obstacle_distance(&Point3::new(2.0, 0.5, 0.5), 0.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wall_distance_is_planar() {
        let s = Shape::wall([5.0, -10.0], [5.0, 10.0]);
        assert!((s.distance(&Point3::new(0.0, 0.0, 100.0)) - 5.0).abs() < 1e-12);
        assert!((s.distance(&Point3::new(5.0, 13.0, 0.0)) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rays_hit_expected_surfaces() {
        let o = Point3::origin();
        let x = Vector3::x();
        let wall = Shape::wall([5.0, -10.0], [5.0, 10.0]);
        assert_eq!(wall.raycast(&o, &x, 10.0), Some(5.0));
        assert_eq!(wall.raycast(&o, &-x, 10.0), None);
        assert_eq!(wall.raycast(&o, &x, 4.0), None);

        let cyl = Shape::cylinder(4.0, 0.0, 1.0, -1.0, 1.0);
        assert!((cyl.raycast(&o, &x, 10.0).unwrap() - 3.0).abs() < 1e-12);
        let down = Vector3::new(0.0, 0.0, -1.0);
        assert!((cyl.raycast(&Point3::new(4.0, 0.0, 3.0), &down, 10.0).unwrap() - 2.0).abs() < 1e-12);

        let bx = Shape::aabb([2.0, -1.0, -1.0], [3.0, 1.0, 1.0]);
        assert_eq!(bx.raycast(&o, &x, 10.0), Some(2.0));
        assert_eq!(bx.raycast(&o, &Vector3::y(), 10.0), None);
    }

    #[test]
    fn timed_obstacles() {
        let o = Obstacle {
            shape: Shape::aabb([0.0; 3], [1.0; 3]),
            active: Some([1.0, 2.0]),
        };
        let w = World::new([o]).unwrap();
        let p = Point3::new(2.0, 0.5, 0.5);
        assert_eq!(w.min_obstacle_distance(&p, 0.5), f64::INFINITY);
        assert!((w.min_obstacle_distance(&p, 1.5) - 1.0).abs() < 1e-12);
        assert_eq!(w.min_obstacle_distance(&p, 2.0), f64::INFINITY);
    }

    #[test]
    fn rejects_degenerate_shapes() {
        assert!(World::new([Obstacle::from(Shape::cylinder(0.0, 0.0, 0.0, 0.0, 1.0))]).is_err());
        assert!(World::new([Obstacle::from(Shape::aabb([0.0; 3], [1.0, 0.0, 1.0]))]).is_err());
        assert!(World::new([Obstacle::from(Shape::wall([1.0, 1.0], [1.0, 1.0]))]).is_err());
    }

    fn surface_samples(s: &Shape, n: usize) -> Vec<Point3<f64>> {
        let mut out = Vec::new();
        match *s {
            Shape::Cylinder {
                center,
                radius,
                z_min,
                z_max,
            } => {
                for i in 0..n {
                    let a = 2.0 * PI * i as f64 / n as f64;
                    for j in 0..=n {
                        let z = z_min + (z_max - z_min) * j as f64 / n as f64;
                        out.push(Point3::new(center[0] + radius * a.cos(), center[1] + radius * a.sin(), z));
                    }
                    for k in 0..=n {
                        let rr = radius * k as f64 / n as f64;
                        for z in [z_min, z_max] {
                            out.push(Point3::new(center[0] + rr * a.cos(), center[1] + rr * a.sin(), z));
                        }
                    }
                }
            }
            Shape::Box { min, max } => {
                for i in 0..=n {
                    for j in 0..=n {
                        let u = i as f64 / n as f64;
                        let v = j as f64 / n as f64;
                        for face in 0..3 {
                            let (a, b) = ((face + 1) % 3, (face + 2) % 3);
                            for side in [min[face], max[face]] {
                                let mut p = Point3::origin();
                                p[face] = side;
                                p[a] = min[a] + u * (max[a] - min[a]);
                                p[b] = min[b] + v * (max[b] - min[b]);
                                out.push(p);
                            }
                        }
                    }
                }
            }
            Shape::Wall { .. } => unreachable!(),
        }
        out
    }

    #[test]
    fn analytic_distance_matches_surface_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shapes = [
            Shape::cylinder(1.0, -2.0, 0.7, 0.0, 3.0),
            Shape::aabb([-1.0, 0.5, 0.0], [0.5, 2.0, 1.5]),
        ];
        for s in &shapes {
            let n = 120;
            let samples = surface_samples(s, n);
            // Largest gap between neighbouring samples bounds the oracle error.
            let resolution = 2.0 * PI * 3.0 / n as f64;
            for _ in 0..200 {
                let p = Point3::new(rng.random_range(-4.0..4.0), rng.random_range(-5.0..4.0), rng.random_range(-2.0..5.0));
                if s.contains(&p) {
                    continue;
                }
                let oracle = samples.iter().map(|q| (q - p).norm()).fold(f64::INFINITY, f64::min);
                let d = s.distance(&p);
                assert!(d <= oracle + 1e-12, "{s:?} {p}: analytic {d} > sampled {oracle}");
                assert!(oracle - d <= resolution, "{s:?} {p}: analytic {d}, sampled {oracle}");
            }
        }
    }
}

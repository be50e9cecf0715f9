//! Rolling local map built from depth scans.
//!
//! Incoming sensor frames are classified as keyframes, subframes or buffer
//! frames from the vehicle pose. The map holds the voxels registered to the
//! current keyframe, those of the previous keyframe and the voxels of the most
//! recent buffer frame. Each part is indexed in its own KD-tree and queries
//! run over the union.

mod kdtree;
pub mod scan_log;

use std::collections::BTreeSet;
use std::sync::Arc;

use nalgebra::{Isometry3, Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use kdtree::{KdTree, SpatialIndex};

use crate::trajectory::wrap_angle;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum MapError {
    #[error("frame stamp {stamp} is not after the last integrated stamp {last}")]
    OutOfOrder { stamp: f64, last: f64 },
    #[error("invalid map parameter: {0}")]
    InvalidParams(&'static str),
}

/// Integer voxel index, `floor(coord / voxel_size)` per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VoxelKey(pub i64, pub i64, pub i64);

impl VoxelKey {
    pub fn containing(p: &Point3<f64>, voxel_size: f64) -> Self {
        VoxelKey(
            (p.x / voxel_size).floor() as i64,
            (p.y / voxel_size).floor() as i64,
            (p.z / voxel_size).floor() as i64,
        )
    }

    pub fn center(&self, voxel_size: f64) -> Point3<f64> {
        Point3::new(
            (self.0 as f64 + 0.5) * voxel_size,
            (self.1 as f64 + 0.5) * voxel_size,
            (self.2 as f64 + 0.5) * voxel_size,
        )
    }
}

/// Deduplicated voxel keys of `points`, sorted.
pub fn voxel_keys<'a>(points: impl IntoIterator<Item = &'a Point3<f64>>, voxel_size: f64) -> BTreeSet<VoxelKey> {
    points
        .into_iter()
        .filter(|p| p.iter().all(|c| c.is_finite()))
        .map(|p| VoxelKey::containing(p, voxel_size))
        .collect()
}

/// Downsamples `points` to the centers of their occupied voxels, sorted by
/// voxel index.
pub fn voxelize(points: &[Point3<f64>], voxel_size: f64) -> Vec<Point3<f64>> {
    voxel_keys(points, voxel_size)
        .iter()
        .map(|k| k.center(voxel_size))
        .collect()
}

/// Keyframe / subframe / buffer-frame classification of a sensor frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameClass {
    KeyFrame,
    SubFrame,
    BufferFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapParams {
    pub voxel_size: f64,
    /// Translation from the last keyframe that spawns a new keyframe (m).
    pub kf_distance: f64,
    /// Translation from the last subframe that registers a new subframe (m).
    pub sf_distance: f64,
    /// Heading change from the last subframe that registers a new subframe (rad).
    pub sf_heading: f64,
}

impl Default for MapParams {
    fn default() -> Self {
        Self {
            voxel_size: 0.2,
            kf_distance: 2.0,
            sf_distance: 0.2,
            sf_heading: 0.1,
        }
    }
}

impl MapParams {
    pub fn validate(&self) -> Result<(), MapError> {
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(MapError::InvalidParams("voxel_size must be positive"));
        }
        if !(self.kf_distance >= 0.0 && self.sf_distance >= 0.0 && self.sf_heading >= 0.0) {
            return Err(MapError::InvalidParams("frame thresholds must be non-negative"));
        }
        Ok(())
    }
}

/// Heading (yaw about world z) of a pose.
pub fn pose_heading(pose: &Isometry3<f64>) -> f64 {
    let x = pose.rotation * Vector3::x();
    x.y.atan2(x.x)
}

/// Absolute wrapped yaw difference between two poses.
pub fn heading_distance(a: &Isometry3<f64>, b: &Isometry3<f64>) -> f64 {
    wrap_angle(pose_heading(a) - pose_heading(b)).abs()
}

pub fn translation_distance(a: &Isometry3<f64>, b: &Isometry3<f64>) -> f64 {
    (a.translation.vector - b.translation.vector).norm()
}

/// Classifies a frame taken at `pose` against the last keyframe and subframe
/// poses. Missing prior frames count as infinitely far away.
pub fn classify(
    pose: &Isometry3<f64>,
    last_kf: Option<&Isometry3<f64>>,
    last_sf: Option<&Isometry3<f64>>,
    params: &MapParams,
) -> FrameClass {
    let kf_dist = last_kf.map_or(f64::INFINITY, |kf| translation_distance(pose, kf));
    if kf_dist > params.kf_distance {
        return FrameClass::KeyFrame;
    }
    let Some(sf) = last_sf else {
        return FrameClass::SubFrame;
    };
    if translation_distance(pose, sf) > params.sf_distance || heading_distance(pose, sf) > params.sf_heading {
        FrameClass::SubFrame
    } else {
        FrameClass::BufferFrame
    }
}

/// One depth measurement: points in the sensor frame plus the sensor pose.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorScan {
    pub sensor_id: String,
    pub stamp: f64,
    /// Sensor-to-world transform at capture time.
    pub sensor_pose: Isometry3<f64>,
    pub points: Vec<Point3<f64>>,
}

impl SensorScan {
    pub fn world_points(&self) -> impl Iterator<Item = Point3<f64>> + '_ {
        self.points.iter().map(|p| self.sensor_pose * p)
    }
}

/// All scans captured at one instant, with the vehicle body pose used for
/// classification.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorFrame {
    pub stamp: f64,
    pub vehicle_pose: Isometry3<f64>,
    pub scans: Vec<SensorScan>,
}

#[derive(Debug, Clone)]
struct KeyFrameMap {
    /// Pose of the anchoring keyframe. Points are stored in world frame; the
    /// anchor is kept so registration can be made relative to it.
    anchor: Isometry3<f64>,
    voxels: BTreeSet<VoxelKey>,
    tree: Arc<KdTree>,
}

impl KeyFrameMap {
    fn new(anchor: Isometry3<f64>, voxels: BTreeSet<VoxelKey>, voxel_size: f64) -> Self {
        let tree = Arc::new(tree_over(&voxels, voxel_size));
        Self { anchor, voxels, tree }
    }
}

fn tree_over(voxels: &BTreeSet<VoxelKey>, voxel_size: f64) -> KdTree {
    KdTree::new(voxels.iter().map(|k| k.center(voxel_size)).collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameCounts {
    pub keyframes: usize,
    pub subframes: usize,
    pub buffer_frames: usize,
}

/// Immutable view of the map for planners. Cloning only bumps reference
/// counts.
#[derive(Debug, Clone, Default)]
pub struct MapSnapshot {
    parts: Vec<Arc<KdTree>>,
}

impl MapSnapshot {
    pub fn from_points(points: Vec<Point3<f64>>) -> Self {
        Self {
            parts: vec![Arc::new(KdTree::new(points))],
        }
    }
}

impl SpatialIndex for MapSnapshot {
    fn nearest(&self, query: &Point3<f64>) -> Option<(Point3<f64>, f64)> {
        self.parts
            .iter()
            .filter_map(|t| t.nearest(query))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    fn any_within(&self, query: &Point3<f64>, radius: f64) -> bool {
        self.parts.iter().any(|t| t.any_within(query, radius))
    }

    fn len(&self) -> usize {
        self.parts.iter().map(|t| t.len()).sum()
    }
}

#[derive(Debug, Clone)]
pub struct LocalMap {
    params: MapParams,
    current: Option<KeyFrameMap>,
    previous: Option<KeyFrameMap>,
    buffer: BTreeSet<VoxelKey>,
    buffer_tree: Arc<KdTree>,
    last_kf_pose: Option<Isometry3<f64>>,
    last_sf_pose: Option<Isometry3<f64>>,
    last_stamp: Option<f64>,
    counts: FrameCounts,
}

impl LocalMap {
    pub fn new(params: MapParams) -> Result<Self, MapError> {
        params.validate()?;
        Ok(Self {
            params,
            current: None,
            previous: None,
            buffer: BTreeSet::new(),
            buffer_tree: Arc::new(KdTree::default()),
            last_kf_pose: None,
            last_sf_pose: None,
            last_stamp: None,
            counts: FrameCounts::default(),
        })
    }

    pub fn params(&self) -> &MapParams {
        &self.params
    }

    pub fn counts(&self) -> FrameCounts {
        self.counts
    }

    pub fn last_keyframe_pose(&self) -> Option<&Isometry3<f64>> {
        self.last_kf_pose.as_ref()
    }

    pub fn last_subframe_pose(&self) -> Option<&Isometry3<f64>> {
        self.last_sf_pose.as_ref()
    }

    /// Anchor poses of the current and previous keyframe maps.
    pub fn anchors(&self) -> (Option<&Isometry3<f64>>, Option<&Isometry3<f64>>) {
        (
            self.current.as_ref().map(|k| &k.anchor),
            self.previous.as_ref().map(|k| &k.anchor),
        )
    }

    /// Integrates a single scan taken while the vehicle was at `vehicle_pose`.
    pub fn integrate_scan(&mut self, scan: SensorScan, vehicle_pose: Isometry3<f64>) -> Result<FrameClass, MapError> {
        self.integrate(&SensorFrame {
            stamp: scan.stamp,
            vehicle_pose,
            scans: vec![scan],
        })
    }

    pub fn integrate(&mut self, frame: &SensorFrame) -> Result<FrameClass, MapError> {
        if let Some(last) = self.last_stamp {
            if !(frame.stamp > last) {
                return Err(MapError::OutOfOrder {
                    stamp: frame.stamp,
                    last,
                });
            }
        }
        let class = classify(
            &frame.vehicle_pose,
            self.last_kf_pose.as_ref(),
            self.last_sf_pose.as_ref(),
            &self.params,
        );
        let vs = self.params.voxel_size;
        let world: Vec<Point3<f64>> = frame.scans.iter().flat_map(|s| s.world_points()).collect();
        let keys = voxel_keys(&world, vs);

        let new_buffer = match class {
            FrameClass::KeyFrame => {
                self.previous = self.current.take();
                self.current = Some(KeyFrameMap::new(frame.vehicle_pose, keys, vs));
                self.last_kf_pose = Some(frame.vehicle_pose);
                self.last_sf_pose = Some(frame.vehicle_pose);
                self.counts.keyframes += 1;
                BTreeSet::new()
            }
            FrameClass::SubFrame => {
                match self.current.as_mut() {
                    Some(kf) => {
                        let before = kf.voxels.len();
                        kf.voxels.extend(keys);
                        if kf.voxels.len() != before {
                            kf.tree = Arc::new(tree_over(&kf.voxels, vs));
                        }
                    }
                    None => self.current = Some(KeyFrameMap::new(frame.vehicle_pose, keys, vs)),
                }
                self.last_sf_pose = Some(frame.vehicle_pose);
                self.counts.subframes += 1;
                BTreeSet::new()
            }
            FrameClass::BufferFrame => {
                self.counts.buffer_frames += 1;
                keys
            }
        };
        if new_buffer != self.buffer {
            self.buffer_tree = Arc::new(tree_over(&new_buffer, vs));
            self.buffer = new_buffer;
        }
        self.last_stamp = Some(frame.stamp);
        Ok(class)
    }

    pub fn snapshot(&self) -> MapSnapshot {
        let mut parts = Vec::with_capacity(3);
        if let Some(kf) = &self.current {
            parts.push(kf.tree.clone());
        }
        if let Some(kf) = &self.previous {
            parts.push(kf.tree.clone());
        }
        parts.push(self.buffer_tree.clone());
        MapSnapshot { parts }
    }

    /// Union of all voxels currently in the map.
    pub fn voxel_set(&self) -> BTreeSet<VoxelKey> {
        let mut out = self.buffer.clone();
        for kf in [&self.current, &self.previous].into_iter().flatten() {
            out.extend(kf.voxels.iter().copied());
        }
        out
    }

    pub fn current_keyframe_voxels(&self) -> Option<&BTreeSet<VoxelKey>> {
        self.current.as_ref().map(|k| &k.voxels)
    }

    pub fn previous_keyframe_voxels(&self) -> Option<&BTreeSet<VoxelKey>> {
        self.previous.as_ref().map(|k| &k.voxels)
    }

    pub fn buffer_voxels(&self) -> &BTreeSet<VoxelKey> {
        &self.buffer
    }
}

impl SpatialIndex for LocalMap {
    fn nearest(&self, query: &Point3<f64>) -> Option<(Point3<f64>, f64)> {
        self.snapshot().nearest(query)
    }

    fn any_within(&self, query: &Point3<f64>, radius: f64) -> bool {
        self.snapshot().any_within(query, radius)
    }

    fn len(&self) -> usize {
        self.snapshot().len()
    }
}

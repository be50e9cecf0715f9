//! Motion primitive library, operator-input mapping and collision pruning.
//!
//! The action space is a regular grid over `(vx, omega, vz)`. Operator input is
//! clamped to the grid bounds, then grid actions are popped from a priority
//! queue ordered by Euclidean distance to the input. Each popped action's
//! primitive is generated on demand and checked against the local map; the
//! first collision-free one wins. When nothing is free the planner commands a
//! braking primitive and flags the result as an emergency stop.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::map::SpatialIndex;
use crate::trajectory::{
    adaptive_duration, braking_duration, Action, LocalFrame, MotionPrimitive, RefState, TrajectoryError,
};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum PlannerError {
    #[error("axis `{axis}`: {reason}")]
    InvalidAxis { axis: &'static str, reason: &'static str },
    #[error("action grid does not contain the zero action")]
    MissingZeroAction,
    #[error("invalid planner parameter: {0}")]
    InvalidParams(&'static str),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

/// Bounds and sample count along one action dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl AxisSpec {
    pub fn new(min: f64, max: f64, count: usize) -> Self {
        Self { min, max, count }
    }

    fn values(&self, name: &'static str) -> Result<Vec<f64>, PlannerError> {
        let bad = |reason| PlannerError::InvalidAxis { axis: name, reason };
        if !(self.min.is_finite() && self.max.is_finite()) {
            return Err(bad("bounds must be finite"));
        }
        if self.min > self.max {
            return Err(bad("min exceeds max"));
        }
        if self.count == 0 {
            return Err(bad("count must be at least 1"));
        }
        if self.count == 1 {
            return Ok(vec![0.0_f64.clamp(self.min, self.max)]);
        }
        let span = self.max - self.min;
        let step = span / (self.count - 1) as f64;
        let snap = 1e-9 * span.max(1.0);
        Ok((0..self.count)
            .map(|i| {
                let v = if i + 1 == self.count { self.max } else { self.min + step * i as f64 };
                if v.abs() < snap {
                    0.0
                } else {
                    v
                }
            })
            .collect())
    }
}

/// Discretization of `(vx, omega, vz)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub vx: AxisSpec,
    pub omega: AxisSpec,
    pub vz: AxisSpec,
}

impl GridSpec {
    /// 25 x 11 x 5 grid with forward speed up to `vx_max`, yaw rate within
    /// `omega_max` and climb rate within `vz_max`.
    pub fn with_counts(vx_max: f64, omega_max: f64, vz_max: f64, counts: (usize, usize, usize)) -> Self {
        Self {
            vx: AxisSpec::new(0.0, vx_max, counts.0),
            omega: AxisSpec::new(-omega_max, omega_max, counts.1),
            vz: AxisSpec::new(-vz_max, vz_max, counts.2),
        }
    }

    pub fn full_scale(vx_max: f64, omega_max: f64, vz_max: f64) -> Self {
        Self::with_counts(vx_max, omega_max, vz_max, (25, 11, 5))
    }
}

/// Flattened action grid. Index layout is `(i_vx * n_omega + i_omega) * n_vz + i_vz`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionGrid {
    spec: GridSpec,
    vx: Vec<f64>,
    omega: Vec<f64>,
    vz: Vec<f64>,
    actions: Vec<Action>,
    zero_index: usize,
    /// Library rotation about the frame z-axis (rad).
    pub rotation: f64,
}

impl ActionGrid {
    pub fn new(spec: GridSpec) -> Result<Self, PlannerError> {
        let vx = spec.vx.values("vx")?;
        let omega = spec.omega.values("omega")?;
        let vz = spec.vz.values("vz")?;
        let mut actions = Vec::with_capacity(vx.len() * omega.len() * vz.len());
        for &a in &vx {
            for &w in &omega {
                for &z in &vz {
                    actions.push(Action::new(a, z, w));
                }
            }
        }
        let zero_index = actions
            .iter()
            .position(|a| *a == Action::ZERO)
            .ok_or(PlannerError::MissingZeroAction)?;
        Ok(Self {
            spec,
            vx,
            omega,
            vz,
            actions,
            zero_index,
            rotation: 0.0,
        })
    }

    pub fn with_rotation(mut self, rotation: f64) -> Self {
        self.rotation = rotation;
        self
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn zero_index(&self) -> usize {
        self.zero_index
    }

    pub fn index(&self, i_vx: usize, i_omega: usize, i_vz: usize) -> usize {
        (i_vx * self.omega.len() + i_omega) * self.vz.len() + i_vz
    }

    /// Clamps each component into the grid bounds; non-finite components map
    /// to zero first.
    pub fn clamp(&self, a: &Action) -> Action {
        let fix = |v: f64, s: &AxisSpec| if v.is_finite() { v } else { 0.0 }.clamp(s.min, s.max);
        Action::new(fix(a.vx, &self.spec.vx), fix(a.vz, &self.spec.vz), fix(a.omega, &self.spec.omega))
    }

    /// All grid actions ordered by distance to the clamped `joystick`.
    pub fn nearest_action_queue(&self, joystick: &Action) -> ActionQueue<'_> {
        let target = self.clamp(joystick);
        let entries: Vec<_> = self
            .actions
            .iter()
            .enumerate()
            .map(|(index, a)| {
                Reverse(QueueKey {
                    distance: a.distance(&target),
                    abs_omega: a.omega.abs(),
                    abs_vz: a.vz.abs(),
                    index,
                })
            })
            .collect();
        ActionQueue {
            grid: self,
            heap: BinaryHeap::from(entries),
        }
    }

    /// Grid index closest to `joystick` under the queue ordering.
    pub fn nearest_index(&self, joystick: &Action) -> usize {
        self.nearest_action_queue(joystick)
            .next()
            .expect("grid is never empty")
            .index
    }
}

#[derive(Debug, Clone, Copy)]
struct QueueKey {
    distance: f64,
    abs_omega: f64,
    abs_vz: f64,
    index: usize,
}

impl Ord for QueueKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.abs_omega.total_cmp(&other.abs_omega))
            .then(self.abs_vz.total_cmp(&other.abs_vz))
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for QueueKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for QueueKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for QueueKey {}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueuedAction {
    pub index: usize,
    pub action: Action,
    pub distance: f64,
}

/// Min-distance priority queue over grid actions.
///
/// Ties break on smaller `|omega|`, then smaller `|vz|`, then grid index.
pub struct ActionQueue<'a> {
    grid: &'a ActionGrid,
    heap: BinaryHeap<Reverse<QueueKey>>,
}

impl Iterator for ActionQueue<'_> {
    type Item = QueuedAction;

    fn next(&mut self) -> Option<QueuedAction> {
        self.heap.pop().map(|Reverse(k)| QueuedAction {
            index: k.index,
            action: self.grid.actions[k.index],
            distance: k.distance,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.heap.len(), Some(self.heap.len()))
    }
}

/// How long each primitive in a library lasts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DurationPolicy {
    Fixed(f64),
    /// Grows linearly with the gap between the requested velocity and the
    /// in-frame reference velocity.
    Adaptive {
        base: f64,
        gain: f64,
        current_velocity: Vector3<f64>,
    },
}

impl DurationPolicy {
    pub fn duration_for(&self, action: &Action, rotation: f64) -> f64 {
        match *self {
            DurationPolicy::Fixed(t) => t,
            DurationPolicy::Adaptive {
                base,
                gain,
                current_velocity,
            } => {
                let (s, c) = rotation.sin_cos();
                let desired = Vector3::new(action.vx * c, action.vx * s, action.vz);
                adaptive_duration(base, gain, &desired, &current_velocity)
            }
        }
    }

    pub fn base(&self) -> f64 {
        match *self {
            DurationPolicy::Fixed(t) => t,
            DurationPolicy::Adaptive { base, .. } => base,
        }
    }
}

/// Generates one primitive per grid action from the in-frame `reference`.
pub fn build_library(
    grid: &ActionGrid,
    reference: &RefState,
    frame: &LocalFrame,
    durations: &DurationPolicy,
) -> Result<Vec<MotionPrimitive>, PlannerError> {
    grid.actions
        .iter()
        .map(|a| {
            MotionPrimitive::generate_rotated(
                reference,
                *a,
                durations.duration_for(a, grid.rotation),
                *frame,
                grid.rotation,
            )
            .map_err(PlannerError::from)
        })
        .collect()
}

/// Times at which a primitive is checked: `0, dt, 2 dt, ...` and always `T`.
pub fn sample_times(duration: f64, dt: f64) -> impl DoubleEndedIterator<Item = f64> {
    let steps = (duration / dt).ceil().max(0.0) as usize;
    (0..=steps).map(move |k| if k == steps { duration } else { k as f64 * dt })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionVerdict {
    pub is_free: bool,
    /// Smallest map distance over all samples, `+inf` for an empty map.
    pub min_clearance: f64,
}

/// Checks every sample of `mp` against `map`; a sample is clear when the
/// nearest map point is at least `r + r_v` away.
pub fn collision_check<M: SpatialIndex + ?Sized>(
    mp: &MotionPrimitive,
    map: &M,
    r: f64,
    r_v: f64,
    dt: f64,
) -> CollisionVerdict {
    let threshold = r + r_v;
    let min_clearance = sample_times(mp.duration, dt)
        .map(|tau| map.distance(&Point3::from(mp.world_position(tau))))
        .fold(f64::INFINITY, f64::min);
    CollisionVerdict {
        is_free: min_clearance >= threshold,
        min_clearance,
    }
}

/// Same verdict as [`collision_check`], computed with fewer queries.
///
/// Samples are visited from the end, where blocked primitives usually
/// collide. A sample at distance `d` from the map certifies every point
/// within `d - threshold` of it, so later samples inside that ball are
/// skipped without a query.
pub fn is_collision_free<M: SpatialIndex + ?Sized>(mp: &MotionPrimitive, map: &M, threshold: f64, dt: f64) -> bool {
    if map.is_empty() {
        return true;
    }
    let mut ball: Option<(Point3<f64>, f64)> = None;
    for tau in sample_times(mp.duration, dt).rev() {
        let p = Point3::from(mp.world_position(tau));
        if let Some((center, radius)) = ball {
            if (p - center).norm() < radius - 1e-9 {
                continue;
            }
        }
        let d = map.distance(&p);
        if d < threshold {
            return false;
        }
        ball = Some((p, d - threshold));
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerParams {
    /// Base primitive duration (s).
    pub duration: f64,
    /// Seconds of extra duration per m/s of requested velocity change; zero
    /// disables adaptive durations.
    pub adaptive_gain: f64,
    pub collision_radius: f64,
    pub vehicle_radius: f64,
    pub sample_dt: f64,
    /// Peak deceleration targeted by the emergency braking primitive.
    pub brake_decel: f64,
    pub min_brake_duration: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            duration: 2.0,
            adaptive_gain: 0.0,
            collision_radius: 0.8,
            vehicle_radius: 0.4,
            sample_dt: 0.04,
            brake_decel: 6.0,
            min_brake_duration: 0.3,
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<(), PlannerError> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(PlannerError::InvalidParams("duration must be positive"));
        }
        if !(self.sample_dt > 0.0) {
            return Err(PlannerError::InvalidParams("sample_dt must be positive"));
        }
        if !(self.collision_radius >= 0.0 && self.vehicle_radius >= 0.0) {
            return Err(PlannerError::InvalidParams("radii must be non-negative"));
        }
        if !(self.adaptive_gain >= 0.0) {
            return Err(PlannerError::InvalidParams("adaptive_gain must be non-negative"));
        }
        if !(self.brake_decel > 0.0 && self.min_brake_duration > 0.0) {
            return Err(PlannerError::InvalidParams("braking parameters must be positive"));
        }
        Ok(())
    }

    pub fn clearance_threshold(&self) -> f64 {
        self.collision_radius + self.vehicle_radius
    }

    pub fn duration_policy(&self, reference: &RefState) -> DurationPolicy {
        if self.adaptive_gain > 0.0 {
            DurationPolicy::Adaptive {
                base: self.duration,
                gain: self.adaptive_gain,
                current_velocity: reference.velocity(),
            }
        } else {
            DurationPolicy::Fixed(self.duration)
        }
    }

    /// Recommended upper bound on `sample_dt` so consecutive samples cannot
    /// straddle a voxel.
    pub fn recommended_dt(voxel_size: f64, v_max: f64) -> f64 {
        voxel_size / v_max
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PruneTimings {
    pub generation: Duration,
    pub pruning: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneResult {
    pub chosen: MotionPrimitive,
    pub chosen_action: Action,
    /// Grid index of the chosen action, `None` for an emergency stop.
    pub chosen_index: Option<usize>,
    /// Grid index nearest to the operator input.
    pub operator_index: usize,
    pub operator_action_pruned: bool,
    pub emergency_stop: bool,
    /// Candidates ruled out plus the chosen one. A blocked start rules out
    /// the whole grid at once.
    pub candidates_checked: usize,
    pub min_clearance: f64,
    pub timings: PruneTimings,
}

/// Pops grid actions nearest-first and returns the first collision-free
/// primitive, or an emergency braking primitive when none is free.
///
/// `reference` must be expressed in `frame`.
pub fn prune_and_select<M: SpatialIndex + ?Sized>(
    grid: &ActionGrid,
    joystick: &Action,
    reference: &RefState,
    frame: &LocalFrame,
    map: &M,
    params: &PlannerParams,
) -> PruneResult {
    let policy = params.duration_policy(reference);
    let threshold = params.clearance_threshold();
    let mut timings = PruneTimings::default();
    let mut queue = grid.nearest_action_queue(joystick);
    let mut operator_index = None;
    let mut checked = 0;

    // Every primitive starts at the reference position, so a blocked start
    // rules out the whole library.
    let start = Point3::from(reference.to_world(frame).position());
    let t0 = Instant::now();
    let start_blocked = !map.is_empty() && map.any_within(&start, threshold);
    timings.pruning += t0.elapsed();
    if start_blocked {
        operator_index = queue.next().map(|q| q.index);
        checked = grid.len();
    }

    while let Some(q) = queue.next().filter(|_| !start_blocked) {
        let operator = *operator_index.get_or_insert(q.index);
        checked += 1;

        let t0 = Instant::now();
        let generated = MotionPrimitive::generate_rotated(
            reference,
            q.action,
            policy.duration_for(&q.action, grid.rotation),
            *frame,
            grid.rotation,
        );
        let t1 = Instant::now();
        timings.generation += t1 - t0;
        let mp = match generated {
            Ok(mp) => mp,
            Err(e) => {
                log::warn!("skipping action {:?}: {e}", q.action);
                continue;
            }
        };
        let free = is_collision_free(&mp, map, threshold, params.sample_dt);
        timings.pruning += t1.elapsed();
        if free {
            let verdict = collision_check(&mp, map, params.collision_radius, params.vehicle_radius, params.sample_dt);
            return PruneResult {
                chosen: mp,
                chosen_action: q.action,
                chosen_index: Some(q.index),
                operator_index: operator,
                operator_action_pruned: q.index != operator,
                emergency_stop: false,
                candidates_checked: checked,
                min_clearance: verdict.min_clearance,
                timings,
            };
        }
    }

    let t0 = Instant::now();
    let chosen = emergency_stop(reference, frame, params);
    timings.generation += t0.elapsed();
    let verdict = collision_check(&chosen, map, params.collision_radius, params.vehicle_radius, params.sample_dt);
    PruneResult {
        chosen,
        chosen_action: Action::ZERO,
        chosen_index: None,
        operator_index: operator_index.unwrap_or(grid.zero_index),
        operator_action_pruned: true,
        emergency_stop: true,
        candidates_checked: checked,
        min_clearance: verdict.min_clearance,
        timings,
    }
}

/// Zero-action primitive shortened so its peak deceleration stays near
/// `brake_decel`.
pub fn emergency_stop(reference: &RefState, frame: &LocalFrame, params: &PlannerParams) -> MotionPrimitive {
    let speed = reference.velocity().norm();
    let t = braking_duration(speed, params.brake_decel, params.min_brake_duration, params.duration);
    MotionPrimitive::generate(reference, Action::ZERO, t, *frame)
        .or_else(|_| MotionPrimitive::generate(reference, Action::ZERO, params.duration, *frame))
        .expect("zero-action primitive from a finite reference")
}

/// Largest speed from which the vehicle can stop within `sensor_range`
/// given constant deceleration `a_max` and a reaction `latency`.
pub fn max_safe_velocity(a_max: f64, sensor_range: f64, latency: f64) -> f64 {
    // v^2 / (2 a) + v * latency = range
    a_max * ((latency * latency + 2.0 * sensor_range / a_max).sqrt() - latency)
}

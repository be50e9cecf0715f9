//! Snap-continuous motion primitives.
//!
//! A primitive is four 8th-order polynomials (x, y, z, yaw) expressed in a
//! gravity-aligned local frame snapshotted at the regeneration instant. The
//! first five derivatives (orders 0..=4) are pinned to the reference state at
//! `tau = 0`; at `tau = T` the velocity equals the unicycle endpoint velocity of
//! the generating action and acceleration, jerk and snap vanish. Endpoint
//! position and yaw are free.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of polynomial coefficients per coordinate.
pub const NUM_COEFFS: usize = 9;
/// Highest derivative order pinned at the start of a primitive.
pub const MAX_ORDER: usize = 4;

/// Absolute tolerance used when re-checking boundary constraints.
pub const CONSTRAINT_TOL: f64 = 1e-6;

const TAU_SLACK: f64 = 1e-9;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("primitive duration must be positive and finite, got {0}")]
    InvalidDuration(f64),
    #[error("boundary solve residual {residual:.3e} exceeds tolerance (duration {duration} s too small?)")]
    IllConditioned { residual: f64, duration: f64 },
    #[error("tau {tau} outside primitive domain [0, {duration}]")]
    TauOutOfRange { tau: f64, duration: f64 },
    #[error("derivative order {0} not supported (0..=4)")]
    InvalidOrder(usize),
    #[error("non-finite reference state")]
    NonFiniteState,
    #[error("commanded acceleration cancels gravity; thrust direction undefined")]
    FreeFall,
    #[error("thrust direction parallel to heading; attitude undefined")]
    DegenerateHeading,
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Operator intent in the local frame: forward speed, climb rate and yaw rate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub vx: f64,
    pub vz: f64,
    pub omega: f64,
}

impl Action {
    pub const ZERO: Action = Action {
        vx: 0.0,
        vz: 0.0,
        omega: 0.0,
    };

    pub fn new(vx: f64, vz: f64, omega: f64) -> Self {
        Self { vx, vz, omega }
    }

    pub fn is_finite(&self) -> bool {
        self.vx.is_finite() && self.vz.is_finite() && self.omega.is_finite()
    }

    /// Euclidean distance in action space.
    pub fn distance(&self, other: &Action) -> f64 {
        let d = Vector3::new(self.vx - other.vx, self.vz - other.vz, self.omega - other.omega);
        d.norm()
    }
}

/// Unicycle-model velocity `[vx cos(w t), vx sin(w t), vz, w]`.
pub fn unicycle_velocity(action: &Action, tau: f64) -> Vector4<f64> {
    let (s, c) = (action.omega * tau).sin_cos();
    Vector4::new(action.vx * c, action.vx * s, action.vz, action.omega)
}

/// Gravity-aligned frame snapshotted at a regeneration instant.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalFrame {
    pub origin: Vector3<f64>,
    pub heading: f64,
    pub stamp: f64,
}

impl LocalFrame {
    pub fn new(origin: Vector3<f64>, heading: f64, stamp: f64) -> Self {
        Self {
            origin,
            heading: wrap_angle(heading),
            stamp,
        }
    }

    /// Frame anchored at a world-frame reference: origin at its position,
    /// heading equal to its yaw.
    pub fn anchored_at(reference: &RefState, stamp: f64) -> Self {
        Self::new(reference.position(), reference.yaw(), stamp)
    }

    fn rotation(&self) -> Matrix3<f64> {
        *Rotation3::from_axis_angle(&Vector3::z_axis(), self.heading).matrix()
    }

    /// Maps an order-`order` derivative 4-vector from this frame into world.
    pub fn vector_to_world(&self, v: &Vector4<f64>, order: usize) -> Vector4<f64> {
        let xyz = self.rotation() * v.xyz();
        if order == 0 {
            let p = xyz + self.origin;
            Vector4::new(p.x, p.y, p.z, v.w + self.heading)
        } else {
            Vector4::new(xyz.x, xyz.y, xyz.z, v.w)
        }
    }

    /// Inverse of [`LocalFrame::vector_to_world`].
    pub fn vector_from_world(&self, v: &Vector4<f64>, order: usize) -> Vector4<f64> {
        let rot_t = self.rotation().transpose();
        if order == 0 {
            let p = rot_t * (v.xyz() - self.origin);
            Vector4::new(p.x, p.y, p.z, wrap_angle(v.w - self.heading))
        } else {
            let p = rot_t * v.xyz();
            Vector4::new(p.x, p.y, p.z, v.w)
        }
    }
}

/// Position/yaw and their first four time derivatives.
///
/// `derivs[j]` holds the `j`-th derivative of `(x, y, z, yaw)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefState {
    pub derivs: [Vector4<f64>; MAX_ORDER + 1],
}

impl Default for RefState {
    fn default() -> Self {
        Self {
            derivs: [Vector4::zeros(); MAX_ORDER + 1],
        }
    }
}

impl RefState {
    pub fn new(mut derivs: [Vector4<f64>; MAX_ORDER + 1]) -> Result<Self, TrajectoryError> {
        if derivs.iter().any(|d| d.iter().any(|x| !x.is_finite())) {
            return Err(TrajectoryError::NonFiniteState);
        }
        derivs[0].w = wrap_angle(derivs[0].w);
        Ok(Self { derivs })
    }

    pub fn at_rest(position: Vector3<f64>, yaw: f64) -> Self {
        let mut s = Self::default();
        s.derivs[0] = Vector4::new(position.x, position.y, position.z, wrap_angle(yaw));
        s
    }

    pub fn position(&self) -> Vector3<f64> {
        self.derivs[0].xyz()
    }

    pub fn yaw(&self) -> f64 {
        self.derivs[0].w
    }

    pub fn velocity(&self) -> Vector3<f64> {
        self.derivs[1].xyz()
    }

    pub fn acceleration(&self) -> Vector3<f64> {
        self.derivs[2].xyz()
    }

    /// Re-expresses a world-frame state in `frame`.
    pub fn in_frame(&self, frame: &LocalFrame) -> Self {
        let mut out = *self;
        for (order, d) in out.derivs.iter_mut().enumerate() {
            *d = frame.vector_from_world(d, order);
        }
        out
    }

    /// Re-expresses a state given in `frame` in world coordinates.
    pub fn to_world(&self, frame: &LocalFrame) -> Self {
        let mut out = *self;
        for (order, d) in out.derivs.iter_mut().enumerate() {
            *d = frame.vector_to_world(d, order);
        }
        out.derivs[0].w = wrap_angle(out.derivs[0].w);
        out
    }
}

/// Falling factorial `i! / (i - k)!`, zero for `k > i`.
const fn falling(i: usize, k: usize) -> f64 {
    if k > i {
        return 0.0;
    }
    let mut acc = 1.0;
    let mut n = i;
    while n > i - k {
        acc *= n as f64;
        n -= 1;
    }
    acc
}

const FACTORIAL: [f64; MAX_ORDER + 1] = [1.0, 1.0, 2.0, 6.0, 24.0];

const FALLING: [[f64; MAX_ORDER + 1]; NUM_COEFFS] = {
    let mut t = [[0.0; MAX_ORDER + 1]; NUM_COEFFS];
    let mut i = 0;
    while i < NUM_COEFFS {
        let mut k = 0;
        while k <= MAX_ORDER {
            t[i][k] = falling(i, k);
            k += 1;
        }
        i += 1;
    }
    t
};

/// Inverse of the terminal-constraint block in normalized time.
///
/// Rows are derivative orders 1..=4 at `s = 1`, columns the free
/// coefficients of `s^5..s^8`. The block is independent of the duration, so
/// it is inverted once per process.
fn terminal_block_inverse() -> &'static Matrix4<f64> {
    static INV: OnceLock<Matrix4<f64>> = OnceLock::new();
    INV.get_or_init(|| {
        let m = Matrix4::from_fn(|r, c| falling(c + 5, r + 1));
        m.try_inverse().expect("terminal constraint block is nonsingular")
    })
}

/// Four 8th-order polynomials in the primitive's local frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionPrimitive {
    /// One row per coordinate (x, y, z, yaw), powers 0..=8 of tau.
    pub coeffs: [[f64; NUM_COEFFS]; 4],
    pub duration: f64,
    pub action: Action,
    pub frame: LocalFrame,
    /// Rotation of the endpoint velocity about the frame z-axis.
    pub library_rotation: f64,
}

impl MotionPrimitive {
    /// Solves the boundary value problem for `action` from `reference`
    /// (expressed in `frame`) over `duration` seconds.
    pub fn generate(
        reference: &RefState,
        action: Action,
        duration: f64,
        frame: LocalFrame,
    ) -> Result<Self, TrajectoryError> {
        Self::generate_rotated(reference, action, duration, frame, 0.0)
    }

    /// Like [`MotionPrimitive::generate`] with the endpoint velocity rotated
    /// by `rotation` about the frame z-axis (sideways slalom motion).
    pub fn generate_rotated(
        reference: &RefState,
        action: Action,
        duration: f64,
        frame: LocalFrame,
        rotation: f64,
    ) -> Result<Self, TrajectoryError> {
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(TrajectoryError::InvalidDuration(duration));
        }
        if !action.is_finite() || !rotation.is_finite() {
            return Err(TrajectoryError::NonFiniteState);
        }
        let end_vel = terminal_velocity(&action, duration, rotation);
        let inv = terminal_block_inverse();

        let mut coeffs = [[0.0; NUM_COEFFS]; 4];
        for (axis, row) in coeffs.iter_mut().enumerate() {
            // Normalized time s = tau / T: d^j/dtau^j = T^-j d^j/ds^j.
            let mut a = [0.0; NUM_COEFFS];
            let mut t_pow = 1.0;
            for j in 0..=MAX_ORDER {
                a[j] = t_pow * reference.derivs[j][axis] / FACTORIAL[j];
                t_pow *= duration;
            }
            let mut rhs = Vector4::zeros();
            for k in 1..=4 {
                let target = if k == 1 { duration * end_vel[axis] } else { 0.0 };
                let known: f64 = (k..=MAX_ORDER).map(|i| falling(i, k) * a[i]).sum();
                rhs[k - 1] = target - known;
            }
            let free = inv * rhs;
            a[5..].copy_from_slice(free.as_slice());

            let mut scale = 1.0;
            for (c, ai) in row.iter_mut().zip(a) {
                *c = ai / scale;
                scale *= duration;
            }
        }

        let mp = Self {
            coeffs,
            duration,
            action,
            frame,
            library_rotation: rotation,
        };
        let residual = mp.constraint_residual(reference);
        let scale = reference
            .derivs
            .iter()
            .flat_map(|d| d.iter())
            .chain(end_vel.iter())
            .fold(1.0_f64, |m, x| m.max(x.abs()));
        if !(residual <= CONSTRAINT_TOL * scale) {
            return Err(TrajectoryError::IllConditioned { residual, duration });
        }
        Ok(mp)
    }

    /// Largest absolute violation of the nine boundary constraints over all
    /// four axes, against the in-frame `reference` the primitive was built from.
    pub fn constraint_residual(&self, reference: &RefState) -> f64 {
        let end_vel = self.terminal_velocity();
        let mut worst = 0.0_f64;
        for axis in 0..4 {
            for (j, d) in reference.derivs.iter().enumerate() {
                let v = self.eval_axis(axis, 0.0, j);
                worst = worst.max((v - d[axis]).abs());
            }
            for k in 1..=4 {
                let target = if k == 1 { end_vel[axis] } else { 0.0 };
                let v = self.eval_axis(axis, self.duration, k);
                worst = worst.max((v - target).abs());
            }
        }
        worst
    }

    /// In-frame endpoint velocity imposed at `tau = T`.
    pub fn terminal_velocity(&self) -> Vector4<f64> {
        terminal_velocity(&self.action, self.duration, self.library_rotation)
    }

    #[inline]
    fn eval_axis(&self, axis: usize, tau: f64, order: usize) -> f64 {
        let c = &self.coeffs[axis];
        let mut acc = 0.0;
        for i in (order..NUM_COEFFS).rev() {
            acc = acc * tau + c[i] * FALLING[i][order];
        }
        acc
    }

    /// In-frame position only, without range checks. Used by samplers that
    /// have already bounded `tau`.
    #[inline]
    pub fn position_unchecked(&self, tau: f64) -> Vector3<f64> {
        Vector3::new(
            self.eval_axis(0, tau, 0),
            self.eval_axis(1, tau, 0),
            self.eval_axis(2, tau, 0),
        )
    }

    fn check(&self, tau: f64, order: usize) -> Result<f64, TrajectoryError> {
        if order > MAX_ORDER {
            return Err(TrajectoryError::InvalidOrder(order));
        }
        if !(tau >= -TAU_SLACK && tau <= self.duration + TAU_SLACK) {
            return Err(TrajectoryError::TauOutOfRange {
                tau,
                duration: self.duration,
            });
        }
        Ok(tau.clamp(0.0, self.duration))
    }

    /// `order`-th derivative of `(x, y, z, yaw)` at `tau`, in the local frame.
    pub fn evaluate(&self, tau: f64, order: usize) -> Result<Vector4<f64>, TrajectoryError> {
        let tau = self.check(tau, order)?;
        Ok(Vector4::new(
            self.eval_axis(0, tau, order),
            self.eval_axis(1, tau, order),
            self.eval_axis(2, tau, order),
            self.eval_axis(3, tau, order),
        ))
    }

    /// Same as [`MotionPrimitive::evaluate`] but expressed in the world frame.
    pub fn to_world(&self, tau: f64, order: usize) -> Result<Vector4<f64>, TrajectoryError> {
        let v = self.evaluate(tau, order)?;
        Ok(self.frame.vector_to_world(&v, order))
    }

    /// World position at `tau` (clamped to the primitive domain).
    pub fn world_position(&self, tau: f64) -> Vector3<f64> {
        let p = self.position_unchecked(tau.clamp(0.0, self.duration));
        self.frame.vector_to_world(&Vector4::new(p.x, p.y, p.z, 0.0), 0).xyz()
    }

    /// In-frame state at `tau`, orders 0..=4.
    pub fn state_in_frame(&self, tau: f64) -> Result<RefState, TrajectoryError> {
        let tau = self.check(tau, 0)?;
        let mut s = RefState::default();
        for (j, d) in s.derivs.iter_mut().enumerate() {
            for axis in 0..4 {
                d[axis] = self.eval_axis(axis, tau, j);
            }
        }
        Ok(s)
    }

    /// World-frame reference at `elapsed` seconds after the primitive start.
    ///
    /// Past `T` the reference coasts at the terminal velocity and yaw rate with
    /// zero higher derivatives.
    pub fn world_state(&self, elapsed: f64) -> RefState {
        let elapsed = elapsed.max(0.0);
        let tau = elapsed.min(self.duration);
        let mut s = self
            .state_in_frame(tau)
            .expect("tau clamped into domain");
        if elapsed > self.duration {
            let extra = elapsed - self.duration;
            let v = s.derivs[1];
            s.derivs[0] += v * extra;
            for d in &mut s.derivs[2..] {
                *d = Vector4::zeros();
            }
        }
        s.to_world(&self.frame)
    }
}

fn terminal_velocity(action: &Action, duration: f64, rotation: f64) -> Vector4<f64> {
    let v = unicycle_velocity(action, duration);
    if rotation == 0.0 {
        return v;
    }
    let (s, c) = rotation.sin_cos();
    Vector4::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z, v.w)
}

/// Primitive duration that grows linearly with the requested velocity change.
pub fn adaptive_duration(base: f64, gain: f64, desired: &Vector3<f64>, current: &Vector3<f64>) -> f64 {
    base.max(base + gain * (desired - current).norm())
}

/// Duration of the zero-action braking primitive that keeps peak
/// deceleration near `max_decel`.
///
/// With zero initial acceleration the velocity profile of a zero-action
/// primitive is the 7th-order smoothstep, whose peak slope is 35/16.
pub fn braking_duration(speed: f64, max_decel: f64, min_duration: f64, max_duration: f64) -> f64 {
    let t = 35.0 / 16.0 * speed / max_decel;
    t.clamp(min_duration, max_duration.max(min_duration))
}

/// Desired thrust direction and attitude from a flat-output acceleration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatAttitude {
    pub thrust_direction: Vector3<f64>,
    pub attitude: Rotation3<f64>,
}

/// Differential-flatness map from acceleration and yaw to attitude.
pub fn flat_feedforward(acc: &Vector3<f64>, yaw: f64, gravity: f64) -> Result<FlatAttitude, TrajectoryError> {
    let thrust = acc + Vector3::new(0.0, 0.0, gravity);
    let norm = thrust.norm();
    if !(norm > 1e-9 * gravity.abs().max(1.0)) {
        return Err(TrajectoryError::FreeFall);
    }
    let z_b = thrust / norm;
    let x_c = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
    let y_b = z_b.cross(&x_c);
    let y_norm = y_b.norm();
    if y_norm < 1e-9 {
        return Err(TrajectoryError::DegenerateHeading);
    }
    let y_b = y_b / y_norm;
    let x_b = y_b.cross(&z_b);
    let m = Matrix3::from_columns(&[x_b, y_b, z_b]);
    Ok(FlatAttitude {
        thrust_direction: z_b,
        attitude: Rotation3::from_matrix_unchecked(m),
    })
}

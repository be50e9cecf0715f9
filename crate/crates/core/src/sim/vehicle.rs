use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::trajectory::{wrap_angle, MotionPrimitive, RefState};

/// Ground-truth vehicle state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub yaw: f64,
    pub yaw_rate: f64,
    pub stamp: f64,
}

impl VehicleState {
    pub fn at_rest(position: Vector3<f64>, yaw: f64, stamp: f64) -> Self {
        Self {
            position,
            yaw: wrap_angle(yaw),
            stamp,
            ..Self::default()
        }
    }

    fn from_reference(r: &RefState, stamp: f64) -> Self {
        Self {
            position: r.position(),
            velocity: r.velocity(),
            acceleration: r.acceleration(),
            yaw: r.yaw(),
            yaw_rate: r.derivs[1].w,
            stamp,
        }
    }

    /// Body-to-world pose (yaw only; tilt is not modeled).
    pub fn pose(&self) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::from(self.position),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), self.yaw),
        )
    }

    pub fn point(&self) -> Point3<f64> {
        Point3::from(self.position)
    }

    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }
}

/// How the vehicle follows the reference.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TrackingMode {
    #[default]
    Perfect,
    /// Exponential filter toward the reference with time constant `tau_lag`.
    FirstOrderLag { tau_lag: f64 },
}

/// A primitive being executed, started at `start` (s).
#[derive(Debug, Clone, PartialEq)]
pub struct ActivePrimitive {
    pub primitive: MotionPrimitive,
    pub start: f64,
}

impl ActivePrimitive {
    /// World-frame reference at `now`; coasts at the terminal velocity past
    /// the primitive's end.
    pub fn reference_at(&self, now: f64) -> RefState {
        self.primitive.world_state(now - self.start)
    }
}

/// Advances the vehicle to `now` while following `active`.
pub fn step_vehicle(state: &VehicleState, active: &ActivePrimitive, now: f64, mode: TrackingMode) -> VehicleState {
    let target = VehicleState::from_reference(&active.reference_at(now), now);
    match mode {
        TrackingMode::Perfect => target,
        TrackingMode::FirstOrderLag { tau_lag } => {
            let dt = (now - state.stamp).max(0.0);
            let alpha = if tau_lag <= 0.0 { 1.0 } else { 1.0 - (-dt / tau_lag).exp() };
            VehicleState {
                position: state.position + (target.position - state.position) * alpha,
                velocity: state.velocity + (target.velocity - state.velocity) * alpha,
                acceleration: state.acceleration + (target.acceleration - state.acceleration) * alpha,
                yaw: wrap_angle(state.yaw + wrap_angle(target.yaw - state.yaw) * alpha),
                yaw_rate: state.yaw_rate + (target.yaw_rate - state.yaw_rate) * alpha,
                stamp: now,
            }
        }
    }
}

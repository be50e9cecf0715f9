use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::World;
use crate::map::SensorScan;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SensorError {
    #[error("sensor `{name}`: {reason}")]
    Invalid { name: String, reason: &'static str },
}

/// Mounting of a sensor on the body: offset plus yaw and upward pitch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Mount {
    #[serde(default)]
    pub offset: [f64; 3],
    /// Rotation about body z (rad).
    #[serde(default)]
    pub yaw: f64,
    /// Boresight elevation above the body x-y plane (rad).
    #[serde(default)]
    pub pitch_up: f64,
}

impl Mount {
    /// Sensor-to-body transform.
    pub fn isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::new(self.offset[0], self.offset[1], self.offset[2]),
            UnitQuaternion::from_euler_angles(0.0, -self.pitch_up, self.yaw),
        )
    }
}

/// Pinhole depth sensor with a regular ray grid. Sensor frame: x along the
/// boresight, y left, z up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthSensor {
    pub name: String,
    #[serde(default)]
    pub mount: Mount,
    pub h_fov: f64,
    pub v_fov: f64,
    pub max_range: f64,
    pub cols: usize,
    pub rows: usize,
    pub rate: f64,
}

impl DepthSensor {
    /// 87 x 58 degree field of view, 10 m range, 64 x 36 rays at 30 Hz.
    pub fn default_camera(name: &str, mount: Mount) -> Self {
        Self {
            name: name.to_owned(),
            mount,
            h_fov: 87f64.to_radians(),
            v_fov: 58f64.to_radians(),
            max_range: 10.0,
            cols: 64,
            rows: 36,
            rate: 30.0,
        }
    }

    /// Forward-facing camera plus one pitched 45 degrees up.
    pub fn default_rig() -> Vec<Self> {
        vec![
            Self::default_camera("front", Mount::default()),
            Self::default_camera(
                "up45",
                Mount {
                    pitch_up: std::f64::consts::FRAC_PI_4,
                    ..Mount::default()
                },
            ),
        ]
    }

    pub fn validate(&self) -> Result<(), SensorError> {
        let bad = |reason| SensorError::Invalid {
            name: self.name.clone(),
            reason,
        };
        let open = |f: f64| f > 0.0 && f < std::f64::consts::PI;
        if !open(self.h_fov) || !open(self.v_fov) {
            return Err(bad("field of view must lie in (0, pi)"));
        }
        if !(self.max_range > 0.0) {
            return Err(bad("max_range must be positive"));
        }
        if self.cols == 0 || self.rows == 0 {
            return Err(bad("ray grid must be at least 1 x 1"));
        }
        if !(self.rate > 0.0) {
            return Err(bad("rate must be positive"));
        }
        Ok(())
    }

    /// Unit ray directions in the sensor frame, row-major from top-left.
    pub fn ray_directions(&self) -> Vec<Vector3<f64>> {
        let half_h = (self.h_fov / 2.0).tan();
        let half_v = (self.v_fov / 2.0).tan();
        let mut out = Vec::with_capacity(self.cols * self.rows);
        for j in 0..self.rows {
            let v = half_v * (1.0 - (2 * j + 1) as f64 / self.rows as f64);
            for i in 0..self.cols {
                let u = half_h * (1.0 - (2 * i + 1) as f64 / self.cols as f64);
                out.push(Vector3::new(1.0, u, v).normalize());
            }
        }
        out
    }
}

/// Casts the sensor's ray grid into `world` from the body pose and returns
/// hits within range as sensor-frame points.
pub fn raycast_scan(world: &World, body_pose: &Isometry3<f64>, sensor: &DepthSensor, stamp: f64) -> SensorScan {
    let sensor_pose = body_pose * sensor.mount.isometry();
    let origin = Point3::from(sensor_pose.translation.vector);
    let points = sensor
        .ray_directions()
        .into_iter()
        .filter_map(|d| {
            let world_dir = sensor_pose.rotation * d;
            world
                .raycast(&origin, &world_dir, sensor.max_range, stamp)
                .map(|t| Point3::from(d * t))
        })
        .collect();
    SensorScan {
        sensor_id: sensor.name.clone(),
        stamp,
        sensor_pose,
        points,
    }
}

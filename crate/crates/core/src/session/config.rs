//! Scenario files (TOML).

use std::path::Path;

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::operator::ScriptSpec;
use super::SessionError;
use crate::map::MapParams;
use crate::planner::{ActionGrid, GridSpec, PlannerParams};
use crate::sim::{DepthSensor, Obstacle, Shape, TrackingMode, World};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Rates {
    pub plan: f64,
    pub map: f64,
    /// Vehicle state update and ground-truth audit rate.
    pub track: f64,
    pub state_telemetry: f64,
    pub map_telemetry: f64,
    pub library_telemetry: f64,
}

impl Default for Rates {
    fn default() -> Self {
        Self {
            plan: 25.0,
            map: 30.0,
            track: 200.0,
            state_telemetry: 30.0,
            map_telemetry: 5.0,
            library_telemetry: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleStart {
    pub position: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
}

impl Default for VehicleStart {
    fn default() -> Self {
        Self {
            position: [0.0, 0.0, 1.5],
            yaw: 0.0,
        }
    }
}

/// What to do once operator input has been silent for `input_timeout`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeoutPolicy {
    /// Command the zero action so the vehicle brakes to a hover.
    #[default]
    Stop,
    /// Keep renewing the last received action.
    RenewLast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OperatorConfig {
    pub input_timeout: f64,
    pub on_timeout: TimeoutPolicy,
    /// Built-in scripted operator used in scripted mode when no trace file is
    /// given.
    pub script: Option<ScriptSpec>,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        Self {
            input_timeout: 0.5,
            on_timeout: TimeoutPolicy::Stop,
            script: None,
        }
    }
}

/// Randomly placed obstacles drawn from the scenario seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clutter {
    pub kind: ClutterKind,
    pub count: usize,
    /// `[[x_min, y_min], [x_max, y_max]]` for obstacle centers.
    pub region: [[f64; 2]; 2],
    /// Size range: radius for cylinders, half-extent for boxes.
    pub size: [f64; 2],
    #[serde(default = "Clutter::default_height")]
    pub height: [f64; 2],
    /// No obstacle surface closer than this to the start position.
    #[serde(default)]
    pub keep_clear: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClutterKind {
    Cylinder,
    Box,
}

impl Clutter {
    fn default_height() -> [f64; 2] {
        [0.0, 4.0]
    }

    fn generate(&self, rng: &mut ChaCha8Rng, start: &Point3<f64>) -> Vec<Obstacle> {
        let mut out = Vec::with_capacity(self.count);
        let mut attempts = 0;
        while out.len() < self.count && attempts < self.count * 100 {
            attempts += 1;
            let x = rng.random_range(self.region[0][0]..=self.region[1][0]);
            let y = rng.random_range(self.region[0][1]..=self.region[1][1]);
            let s = rng.random_range(self.size[0]..=self.size[1]);
            let shape = match self.kind {
                ClutterKind::Cylinder => Shape::cylinder(x, y, s, self.height[0], self.height[1]),
                ClutterKind::Box => Shape::aabb([x - s, y - s, self.height[0]], [x + s, y + s, self.height[1]]),
            };
            if shape.distance(start) >= self.keep_clear {
                out.push(Obstacle::from(shape));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Simulated seconds to run; `None` runs until stopped.
    #[serde(default)]
    pub duration: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub vehicle: VehicleStart,
    #[serde(default)]
    pub planner: PlannerParams,
    pub grid: GridSpec,
    #[serde(default)]
    pub map: MapParams,
    #[serde(default)]
    pub rates: Rates,
    #[serde(default)]
    pub tracking: TrackingMode,
    #[serde(default = "DepthSensor::default_rig")]
    pub sensors: Vec<DepthSensor>,
    #[serde(default)]
    pub world: World,
    #[serde(default)]
    pub clutter: Vec<Clutter>,
    #[serde(default)]
    pub operator: OperatorConfig,
}

/// Command-line overrides applied on top of a scenario file.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub collision_radius: Option<f64>,
    pub vehicle_radius: Option<f64>,
    pub duration: Option<f64>,
    pub v_max: Option<f64>,
    pub voxel_size: Option<f64>,
    pub seed: Option<u64>,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, SessionError> {
        let s: Scenario = toml::from_str(text).map_err(|e| SessionError::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SessionError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| SessionError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            SessionError::Config(msg) => SessionError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), SessionError> {
        if let Some(r) = o.collision_radius {
            self.planner.collision_radius = r;
        }
        if let Some(r) = o.vehicle_radius {
            self.planner.vehicle_radius = r;
        }
        if let Some(t) = o.duration {
            self.planner.duration = t;
        }
        if let Some(v) = o.v_max {
            self.grid.vx.max = v;
        }
        if let Some(v) = o.voxel_size {
            self.map.voxel_size = v;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        self.planner.validate()?;
        ActionGrid::new(self.grid)?;
        self.map.validate()?;
        self.world.validate()?;
        for s in &self.sensors {
            s.validate()?;
        }
        let r = &self.rates;
        for (name, v) in [
            ("plan", r.plan),
            ("map", r.map),
            ("track", r.track),
            ("state_telemetry", r.state_telemetry),
            ("map_telemetry", r.map_telemetry),
            ("library_telemetry", r.library_telemetry),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SessionError::Config(format!("rate `{name}` must be positive")));
            }
        }
        if let Some(d) = self.duration {
            if !(d > 0.0) {
                return Err(SessionError::Config("duration must be positive".into()));
            }
        }
        if let TrackingMode::FirstOrderLag { tau_lag } = self.tracking {
            if !(tau_lag >= 0.0) {
                return Err(SessionError::Config("tau_lag must be non-negative".into()));
            }
        }
        if !(self.operator.input_timeout > 0.0) {
            return Err(SessionError::Config("input_timeout must be positive".into()));
        }
        if self.vehicle.position.iter().any(|x| !x.is_finite()) || !self.vehicle.yaw.is_finite() {
            return Err(SessionError::Config("vehicle start must be finite".into()));
        }
        Ok(())
    }

    pub fn start_position(&self) -> Vector3<f64> {
        Vector3::from(self.vehicle.position)
    }

    /// Static world plus seeded clutter.
    pub fn build_world(&self) -> World {
        let mut world = self.world.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let start = Point3::from(self.start_position());
        for c in &self.clutter {
            world.obstacles.extend(c.generate(&mut rng, &start));
        }
        world
    }
}

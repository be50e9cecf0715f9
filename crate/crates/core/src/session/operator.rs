//! Sources of operator input: recorded traces, scripted policies and the
//! live mailbox fed by the network bridge.

use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::SessionError;
use crate::sim::VehicleState;
use crate::trajectory::{wrap_angle, Action};

/// One operator command: an action plus the library rotation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OperatorInput {
    pub action: Action,
    #[serde(default)]
    pub rotation: f64,
}

impl OperatorInput {
    pub const IDLE: OperatorInput = OperatorInput {
        action: Action::ZERO,
        rotation: 0.0,
    };

    pub fn new(vx: f64, vz: f64, omega: f64, rotation: f64) -> Self {
        Self {
            action: Action::new(vx, vz, omega),
            rotation,
        }
    }
}

/// Latest input seen by a source and how long ago it arrived (s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorSample {
    pub input: OperatorInput,
    pub age: f64,
}

pub trait OperatorSource {
    /// Called once per planning cycle at simulated time `now`.
    fn poll(&mut self, now: f64, vehicle: &VehicleState) -> Option<OperatorSample>;
}

/// Recorded `t,vx,vz,omega,rot` rows; each row holds until the next stamp.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InputTrace {
    rows: Vec<(f64, OperatorInput)>,
}

impl InputTrace {
    pub fn new(rows: Vec<(f64, OperatorInput)>) -> Result<Self, SessionError> {
        if rows.iter().any(|(t, i)| !t.is_finite() || !i.action.is_finite() || !i.rotation.is_finite()) {
            return Err(SessionError::Trace("non-finite value in trace".into()));
        }
        if let Some(w) = rows.windows(2).find(|w| w[1].0 <= w[0].0) {
            return Err(SessionError::Trace(format!(
                "stamps must increase: {} follows {}",
                w[1].0, w[0].0
            )));
        }
        Ok(Self { rows })
    }

    /// Parses comma-separated rows. Blank lines, `#` comments and a header
    /// row are skipped.
    pub fn parse(text: &str) -> Result<Self, SessionError> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if lineno == 0 && fields.first().is_some_and(|f| f.parse::<f64>().is_err()) {
                continue;
            }
            if fields.len() != 5 {
                return Err(SessionError::Trace(format!(
                    "line {}: expected 5 fields t,vx,vz,omega,rot, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let mut v = [0.0; 5];
            for (slot, f) in v.iter_mut().zip(&fields) {
                *slot = f
                    .parse()
                    .map_err(|_| SessionError::Trace(format!("line {}: bad number `{f}`", lineno + 1)))?;
            }
            rows.push((v[0], OperatorInput::new(v[1], v[2], v[3], v[4])));
        }
        if rows.is_empty() {
            return Err(SessionError::Trace("trace has no rows".into()));
        }
        Self::new(rows)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SessionError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| SessionError::Trace(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Input in effect at `t`; `None` before the first stamp.
    pub fn at(&self, t: f64) -> Option<OperatorInput> {
        let idx = self.rows.partition_point(|(s, _)| *s <= t);
        idx.checked_sub(1).map(|i| self.rows[i].1)
    }

    pub fn end(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.0)
    }
}

impl OperatorSource for InputTrace {
    fn poll(&mut self, now: f64, _vehicle: &VehicleState) -> Option<OperatorSample> {
        self.at(now).map(|input| OperatorSample { input, age: 0.0 })
    }
}

/// Scripted operator that keeps steering at full speed toward a sequence of
/// targets. It moves on once the vehicle crosses the plane through the
/// current target normal to the leg leading to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pursuit {
    pub targets: Vec<[f64; 2]>,
    pub speed: f64,
    /// Yaw-rate command per radian of bearing error.
    pub gain: f64,
    pub omega_max: f64,
    /// Seconds at which each target became active.
    #[serde(skip)]
    pub switch_times: Vec<f64>,
    #[serde(skip)]
    current: usize,
    #[serde(skip)]
    origin: Option<[f64; 2]>,
}

impl Pursuit {
    pub fn new(targets: Vec<[f64; 2]>, speed: f64, gain: f64, omega_max: f64) -> Self {
        Self {
            targets,
            speed,
            gain,
            omega_max,
            switch_times: Vec::new(),
            current: 0,
            origin: None,
        }
    }

    pub fn current_target(&self) -> Option<usize> {
        (self.current < self.targets.len()).then_some(self.current)
    }
}

impl OperatorSource for Pursuit {
    fn poll(&mut self, now: f64, vehicle: &VehicleState) -> Option<OperatorSample> {
        let p = nalgebra::Vector2::new(vehicle.position.x, vehicle.position.y);
        let origin = *self.origin.get_or_insert([p.x, p.y]);
        if self.switch_times.is_empty() && !self.targets.is_empty() {
            self.switch_times.push(now);
        }
        while let Some(t) = self.targets.get(self.current) {
            let from = match self.current {
                0 => origin,
                i => self.targets[i - 1],
            };
            let target = nalgebra::Vector2::from(*t);
            let leg = target - nalgebra::Vector2::from(from);
            if (p - target).dot(&leg) < 0.0 {
                break;
            }
            self.current += 1;
            if self.current < self.targets.len() {
                self.switch_times.push(now);
            }
        }
        let omega = match self.targets.get(self.current) {
            Some(t) => {
                let bearing = (t[1] - vehicle.position.y).atan2(t[0] - vehicle.position.x);
                (self.gain * wrap_angle(bearing - vehicle.yaw)).clamp(-self.omega_max, self.omega_max)
            }
            None => 0.0,
        };
        Some(OperatorSample {
            input: OperatorInput::new(self.speed, 0.0, omega, 0.0),
            age: 0.0,
        })
    }
}

/// Built-in scripted operators selectable from a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScriptSpec {
    /// Inline `[t, vx, vz, omega, rot]` rows.
    Trace { rows: Vec<[f64; 5]> },
    Pursuit {
        targets: Vec<[f64; 2]>,
        speed: f64,
        #[serde(default = "ScriptSpec::default_gain")]
        gain: f64,
        #[serde(default = "ScriptSpec::default_omega_max")]
        omega_max: f64,
    },
}

impl ScriptSpec {
    fn default_gain() -> f64 {
        2.0
    }

    fn default_omega_max() -> f64 {
        2.0
    }

    pub fn build(&self) -> Result<Box<dyn OperatorSource + Send>, SessionError> {
        Ok(match self {
            ScriptSpec::Trace { rows } => Box::new(InputTrace::new(
                rows.iter()
                    .map(|r| (r[0], OperatorInput::new(r[1], r[2], r[3], r[4])))
                    .collect(),
            )?),
            ScriptSpec::Pursuit {
                targets,
                speed,
                gain,
                omega_max,
            } => Box::new(Pursuit::new(targets.clone(), *speed, *gain, *omega_max)),
        })
    }
}

/// Single-writer/single-reader latest-value cell for live operator input.
#[derive(Debug, Clone, Default)]
pub struct OperatorMailbox {
    inner: Arc<Mutex<Option<(OperatorInput, Instant)>>>,
}

impl OperatorMailbox {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn post(&self, input: OperatorInput) {
        *self.inner.lock().unwrap_or_else(|e| e.into_inner()) = Some((input, Instant::now()));
    }

    pub fn latest(&self) -> Option<(OperatorInput, Instant)> {
        *self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl OperatorSource for OperatorMailbox {
    fn poll(&mut self, _now: f64, _vehicle: &VehicleState) -> Option<OperatorSample> {
        self.latest().map(|(input, at)| OperatorSample {
            input,
            age: at.elapsed().as_secs_f64(),
        })
    }
}

/// Always returns the same input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constant(pub OperatorInput);

impl OperatorSource for Constant {
    fn poll(&mut self, _now: f64, _vehicle: &VehicleState) -> Option<OperatorSample> {
        Some(OperatorSample { input: self.0, age: 0.0 })
    }
}

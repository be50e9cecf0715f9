//! Wire protocol: one JSON object per text frame, tagged by `type`.
//!
//! Client to server:
//!
//! ```text
//! {"type":"action","vx":f,"vz":f,"omega":f,"rot":f,"stamp":f}
//! ```
//!
//! Server to client: `config` (on connect), `state`, `map_diff`,
//! `map_checksum`, `library` and `trajectory`. Receivers ignore unknown
//! fields.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::config::{Rates, Scenario};
use super::operator::OperatorInput;
use crate::map::VoxelKey;
use crate::planner::GridSpec;
use crate::sim::Obstacle;
use crate::trajectory::{Action, MotionPrimitive};

/// Points per primitive in `library` and `trajectory` messages.
pub const SAMPLES_PER_PRIMITIVE: usize = 10;

/// Most primitives sent in one `library` message. Larger grids are
/// subsampled, always keeping the chosen and operator primitives.
pub const LIBRARY_CAP: usize = 1500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Action {
        vx: f64,
        vz: f64,
        omega: f64,
        #[serde(default)]
        rot: f64,
        #[serde(default)]
        stamp: f64,
    },
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("non-finite field in action message")]
    NonFinite,
}

impl ClientMessage {
    pub fn parse(text: &str) -> Result<Self, ProtocolError> {
        let msg: ClientMessage = serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
        let ClientMessage::Action {
            vx,
            vz,
            omega,
            rot,
            stamp,
        } = msg;
        if [vx, vz, omega, rot, stamp].iter().all(|v| v.is_finite()) {
            Ok(msg)
        } else {
            Err(ProtocolError::NonFinite)
        }
    }

    pub fn input(&self) -> OperatorInput {
        let ClientMessage::Action { vx, vz, omega, rot, .. } = *self;
        OperatorInput::new(vx, vz, omega, rot)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("client message serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireAction {
    pub vx: f64,
    pub vz: f64,
    pub omega: f64,
}

impl From<Action> for WireAction {
    fn from(a: Action) -> Self {
        Self {
            vx: a.vx,
            vz: a.vz,
            omega: a.omega,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMessage {
    pub stamp: f64,
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub acceleration: [f64; 3],
    pub yaw: f64,
    pub yaw_rate: f64,
    pub speed: f64,
    pub accel: f64,
    pub operator: WireAction,
    pub rot: f64,
    pub chosen: WireAction,
    pub pruned: bool,
    pub emergency: bool,
    /// Ground-truth clearance, `null` when no obstacle exists.
    pub clearance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigMessage {
    pub scenario: String,
    pub voxel_size: f64,
    pub grid: GridSpec,
    pub duration: f64,
    pub collision_radius: f64,
    pub vehicle_radius: f64,
    pub rates: Rates,
    pub start: [f64; 3],
    pub start_yaw: f64,
    pub obstacles: Vec<Obstacle>,
    pub samples_per_primitive: usize,
}

impl ConfigMessage {
    pub fn from_scenario(s: &Scenario, obstacles: Vec<Obstacle>) -> Self {
        Self {
            scenario: s.name.clone(),
            voxel_size: s.map.voxel_size,
            grid: s.grid,
            duration: s.planner.duration,
            collision_radius: s.planner.collision_radius,
            vehicle_radius: s.planner.vehicle_radius,
            rates: s.rates,
            start: s.vehicle.position,
            start_yaw: s.vehicle.yaw,
            obstacles,
            samples_per_primitive: SAMPLES_PER_PRIMITIVE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Config(ConfigMessage),
    State(StateMessage),
    /// Voxel centers entering and leaving the published map. With `reset`
    /// the receiver clears its set before applying `add`.
    MapDiff {
        stamp: f64,
        #[serde(default)]
        reset: bool,
        add: Vec<[f64; 3]>,
        remove: Vec<[f64; 3]>,
    },
    /// Size and [`voxel_checksum`] of the published map after the preceding
    /// diffs.
    MapChecksum { stamp: f64, count: usize, checksum: u32 },
    Library {
        stamp: f64,
        trajs: Vec<Vec<[f64; 3]>>,
        /// Grid index of each entry in `trajs`.
        indices: Vec<usize>,
        /// Position in `trajs` of the chosen primitive, `null` for an
        /// emergency stop.
        chosen: Option<usize>,
        /// Position in `trajs` of the primitive nearest the operator input.
        operator: usize,
        pruned: bool,
    },
    /// The chosen primitive, sent every planning cycle.
    Trajectory {
        stamp: f64,
        points: Vec<[f64; 3]>,
        pruned: bool,
        emergency: bool,
    },
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server message serializes")
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            ServerMessage::Config(_) => "config",
            ServerMessage::State(_) => "state",
            ServerMessage::MapDiff { .. } => "map_diff",
            ServerMessage::MapChecksum { .. } => "map_checksum",
            ServerMessage::Library { .. } => "library",
            ServerMessage::Trajectory { .. } => "trajectory",
        }
    }
}

/// World positions at evenly spaced times over the primitive.
pub fn sample_primitive(mp: &MotionPrimitive, n: usize) -> Vec<[f64; 3]> {
    let n = n.max(2);
    (0..n)
        .map(|i| {
            let tau = mp.duration * i as f64 / (n - 1) as f64;
            mp.world_position(tau).into()
        })
        .collect()
}

fn key_hash(k: &VoxelKey) -> u32 {
    ((k.0.wrapping_mul(73_856_093)) ^ (k.1.wrapping_mul(19_349_663)) ^ (k.2.wrapping_mul(83_492_791))) as u32
}

/// Order-independent checksum of a voxel set: wrapping sum of per-key hashes.
pub fn voxel_checksum<'a>(keys: impl IntoIterator<Item = &'a VoxelKey>) -> u32 {
    keys.into_iter().fold(0u32, |acc, k| acc.wrapping_add(key_hash(k)))
}

/// Recovers the key of a voxel center sent on the wire.
pub fn key_of_center(center: &[f64; 3], voxel_size: f64) -> VoxelKey {
    VoxelKey(
        (center[0] / voxel_size).floor() as i64,
        (center[1] / voxel_size).floor() as i64,
        (center[2] / voxel_size).floor() as i64,
    )
}

/// Tracks the voxel set last published to clients and produces diffs.
#[derive(Debug, Clone, Default)]
pub struct MapDiffTracker {
    published: BTreeSet<VoxelKey>,
    voxel_size: f64,
}

impl MapDiffTracker {
    pub fn new(voxel_size: f64) -> Self {
        Self {
            published: BTreeSet::new(),
            voxel_size,
        }
    }

    pub fn published(&self) -> &BTreeSet<VoxelKey> {
        &self.published
    }

    /// Diff from the published set to `current`; `None` when nothing changed.
    pub fn update(&mut self, current: BTreeSet<VoxelKey>, stamp: f64) -> Option<ServerMessage> {
        let vs = self.voxel_size;
        let add: Vec<[f64; 3]> = current.difference(&self.published).map(|k| k.center(vs).into()).collect();
        let remove: Vec<[f64; 3]> = self.published.difference(&current).map(|k| k.center(vs).into()).collect();
        self.published = current;
        if add.is_empty() && remove.is_empty() {
            None
        } else {
            Some(ServerMessage::MapDiff {
                stamp,
                reset: false,
                add,
                remove,
            })
        }
    }

    pub fn checksum_message(&self, stamp: f64) -> ServerMessage {
        ServerMessage::MapChecksum {
            stamp,
            count: self.published.len(),
            checksum: voxel_checksum(&self.published),
        }
    }

    /// The whole published map as a reset diff, for new clients.
    pub fn full_map(&self, stamp: f64) -> ServerMessage {
        ServerMessage::MapDiff {
            stamp,
            reset: true,
            add: self.published.iter().map(|k| k.center(self.voxel_size).into()).collect(),
            remove: Vec::new(),
        }
    }
}

/// Receiver of server telemetry. Implementations must not block.
pub trait TelemetrySink {
    /// Whether anyone is listening; lets the loop skip building messages.
    fn is_active(&self) -> bool;
    fn publish(&self, msg: ServerMessage);
    /// Called before the diff that produced this map state is published, so
    /// a client joining in between receives the new state and then an
    /// already-applied diff, which is harmless on a set.
    fn set_map_state(&self, _full_map: ServerMessage, _checksum: ServerMessage) {}
}

/// Discards everything.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullTelemetry;

impl TelemetrySink for NullTelemetry {
    fn is_active(&self) -> bool {
        false
    }

    fn publish(&self, _msg: ServerMessage) {}
}

/// Collects messages in memory.
#[derive(Debug, Default)]
pub struct RecordingTelemetry {
    pub messages: std::sync::Mutex<Vec<ServerMessage>>,
}

impl TelemetrySink for RecordingTelemetry {
    fn is_active(&self) -> bool {
        true
    }

    fn publish(&self, msg: ServerMessage) {
        self.messages.lock().unwrap_or_else(|e| e.into_inner()).push(msg);
    }
}

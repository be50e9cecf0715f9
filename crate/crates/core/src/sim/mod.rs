//! Closed-loop test world: obstacle geometry, depth sensors and a vehicle that
//! follows the selected primitive.

mod sensor;
mod vehicle;
mod world;

pub use sensor::{raycast_scan, DepthSensor, Mount, SensorError};
pub use vehicle::{step_vehicle, ActivePrimitive, TrackingMode, VehicleState};
pub use world::{Obstacle, Shape, World, WorldError};

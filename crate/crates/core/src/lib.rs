//! Teleoperation with reactive collision avoidance for a simulated multirotor.
//!
//! Operator velocity commands are mapped onto a library of snap-continuous
//! motion primitives. Primitives are pruned against a rolling KD-tree local
//! map built from simulated depth scans, and the vehicle tracks the closest
//! collision-free one.
//!
//! - [`trajectory`]: primitive generation, evaluation and frame transforms
//! - [`planner`]: action grid, nearest-action queue and pruning
//! - [`map`]: keyframe-based local map with KD-tree queries
//! - [`sim`]: obstacle world, depth sensors and vehicle tracking
//! - [`session`]: scenario config, fixed-rate closed loop, metrics and wire protocol

pub mod map;
pub mod planner;
pub mod session;
pub mod sim;
pub mod trajectory;

//! Closed-loop session: a deterministic fixed-step scheduler driving sensing,
//! mapping, planning and vehicle tracking, plus metrics and telemetry.
//!
//! Each stream fires at `k / rate` simulated seconds. Events at the same
//! instant run in the order sensor, map, plan, track, telemetry, so a plan
//! sees every scan captured at its own stamp.

pub mod config;
pub mod metrics;
pub mod operator;
pub mod protocol;

use std::io::Write;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{Isometry3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::map::{FrameCounts, LocalMap, MapError, SensorFrame, SensorScan};
use crate::map::scan_log::{ScanLogWriter, ScanRecord};
use crate::planner::{build_library, prune_and_select, ActionGrid, PlannerError, PruneResult};
use crate::sim::{raycast_scan, step_vehicle, ActivePrimitive, SensorError, VehicleState, World, WorldError};
use crate::trajectory::{Action, LocalFrame, MotionPrimitive, RefState};

pub use config::{Clutter, ClutterKind, OperatorConfig, Overrides, Rates, Scenario, TimeoutPolicy, VehicleStart};
pub use metrics::{MetricsRecord, MetricsWriter, Stat, Summary};
pub use operator::{Constant, InputTrace, OperatorInput, OperatorMailbox, OperatorSample, OperatorSource, Pursuit, ScriptSpec};
pub use protocol::{ClientMessage, MapDiffTracker, NullTelemetry, ServerMessage, TelemetrySink};

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("invalid input trace: {0}")]
    Trace(String),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Stream {
    Sensor(usize),
    Map,
    Plan,
    Track,
    StateTelemetry,
    MapTelemetry,
    LibraryTelemetry,
}

struct Clock {
    stream: Stream,
    rate: f64,
    k: u64,
}

impl Clock {
    fn next(&self) -> f64 {
        self.k as f64 / self.rate
    }
}

/// Number of events of each kind executed by a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub sensor_scans: usize,
    pub map_updates: usize,
    pub plan_cycles: usize,
    pub track_steps: usize,
    /// Planning cycles whose operator input was older than the timeout.
    pub input_timeouts: usize,
}

/// Vehicle state at one tracking step together with its audited clearance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackSample {
    pub stamp: f64,
    pub position: Vector3<f64>,
    pub speed: f64,
    pub accel: f64,
    /// Ground-truth distance to the nearest active obstacle.
    pub clearance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub records: Vec<MetricsRecord>,
    pub summary: Summary,
    pub frame_counts: FrameCounts,
    pub events: EventCounts,
    pub track: Vec<TrackSample>,
    pub final_state: VehicleState,
    /// Simulated time at which the run ended.
    pub end_time: f64,
}

/// How long and how fast to run.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Simulated seconds; `None` runs until `stop` is raised.
    pub duration: Option<f64>,
    /// Pace simulated time against the wall clock.
    pub realtime: bool,
    pub stop: Option<Arc<AtomicBool>>,
}

struct PlanContext {
    reference: RefState,
    frame: LocalFrame,
    input: OperatorInput,
    result: PruneResult,
}

pub struct Session {
    scenario: Scenario,
    world: World,
    map: LocalMap,
    grid: ActionGrid,
    vehicle: VehicleState,
    active: ActivePrimitive,
    last_input: Option<OperatorInput>,
    last_plan: Option<PlanContext>,
    pending: Vec<(SensorScan, Isometry3<f64>)>,
    map_time: Duration,
    diff: MapDiffTracker,
    scan_log: Option<ScanLogWriter<Box<dyn Write + Send>>>,
    metrics: Option<MetricsWriter>,
}

impl Session {
    pub fn new(scenario: Scenario) -> Result<Self, SessionError> {
        scenario.validate()?;
        let world = scenario.build_world();
        let map = LocalMap::new(scenario.map)?;
        let grid = ActionGrid::new(scenario.grid)?;
        let start = scenario.start_position();
        let yaw = scenario.vehicle.yaw;
        let vehicle = VehicleState::at_rest(start, yaw, 0.0);
        let hold = RefState::at_rest(start, yaw);
        let frame = LocalFrame::anchored_at(&hold, 0.0);
        let primitive = MotionPrimitive::generate(&hold.in_frame(&frame), Action::ZERO, scenario.planner.duration, frame)
            .map_err(PlannerError::from)?;
        let diff = MapDiffTracker::new(scenario.map.voxel_size);
        Ok(Self {
            scenario,
            world,
            map,
            grid,
            vehicle,
            active: ActivePrimitive { primitive, start: 0.0 },
            last_input: None,
            last_plan: None,
            pending: Vec::new(),
            map_time: Duration::ZERO,
            diff,
            scan_log: None,
            metrics: None,
        })
    }

    /// Records every captured scan to `out`.
    pub fn with_scan_log(mut self, out: Box<dyn Write + Send>) -> Result<Self, SessionError> {
        self.scan_log = Some(ScanLogWriter::new(out)?);
        Ok(self)
    }

    /// Streams metrics rows to `writer` while running.
    pub fn with_metrics(mut self, writer: MetricsWriter) -> Self {
        self.metrics = Some(writer);
        self
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn map(&self) -> &LocalMap {
        &self.map
    }

    pub fn vehicle(&self) -> &VehicleState {
        &self.vehicle
    }

    pub fn config_message(&self) -> ServerMessage {
        ServerMessage::Config(protocol::ConfigMessage::from_scenario(
            &self.scenario,
            self.world.obstacles.clone(),
        ))
    }

    pub fn run(
        &mut self,
        operator: &mut dyn OperatorSource,
        telemetry: &dyn TelemetrySink,
        options: &RunOptions,
    ) -> Result<SessionReport, SessionError> {
        let rates = self.scenario.rates;
        let mut clocks: Vec<Clock> = self
            .scenario
            .sensors
            .iter()
            .enumerate()
            .map(|(i, s)| Clock {
                stream: Stream::Sensor(i),
                rate: s.rate,
                k: 0,
            })
            .collect();
        for (stream, rate) in [
            (Stream::Map, rates.map),
            (Stream::Plan, rates.plan),
            (Stream::Track, rates.track),
            (Stream::StateTelemetry, rates.state_telemetry),
            (Stream::MapTelemetry, rates.map_telemetry),
            (Stream::LibraryTelemetry, rates.library_telemetry),
        ] {
            clocks.push(Clock { stream, rate, k: 0 });
        }

        let end = options.duration.unwrap_or(f64::INFINITY);
        let wall_start = Instant::now();
        let mut records = Vec::new();
        let mut track = Vec::new();
        let mut events = EventCounts::default();
        let mut now = 0.0;

        telemetry.publish(self.config_message());

        loop {
            if options.stop.as_ref().is_some_and(|s| s.load(Ordering::Relaxed)) {
                break;
            }
            let next = clocks
                .iter_mut()
                .min_by(|a, b| a.next().total_cmp(&b.next()).then(a.stream.cmp(&b.stream)))
                .expect("at least one stream");
            let t = next.next();
            if t >= end {
                now = end;
                break;
            }
            next.k += 1;
            let stream = next.stream;
            now = t;

            if options.realtime {
                let due = wall_start + Duration::from_secs_f64(t);
                let wait = due.saturating_duration_since(Instant::now());
                if !wait.is_zero() {
                    std::thread::sleep(wait);
                }
            }

            match stream {
                Stream::Sensor(i) => {
                    self.capture(i, t)?;
                    events.sensor_scans += 1;
                }
                Stream::Map => {
                    self.integrate_pending()?;
                    events.map_updates += 1;
                }
                Stream::Plan => {
                    let record = self.plan(t, operator, &mut events);
                    if telemetry.is_active() {
                        let plan = self.last_plan.as_ref().expect("plan just ran");
                        telemetry.publish(ServerMessage::Trajectory {
                            stamp: t,
                            points: protocol::sample_primitive(&plan.result.chosen, protocol::SAMPLES_PER_PRIMITIVE),
                            pruned: record.pruned,
                            emergency: record.emergency,
                        });
                    }
                    if let Some(w) = &self.metrics {
                        w.push(record);
                    }
                    records.push(record);
                    events.plan_cycles += 1;
                }
                Stream::Track => {
                    self.vehicle = step_vehicle(&self.vehicle, &self.active, t, self.scenario.tracking);
                    let v = &self.vehicle;
                    track.push(TrackSample {
                        stamp: t,
                        position: v.position,
                        speed: v.speed(),
                        accel: v.acceleration.norm(),
                        clearance: self.world.min_obstacle_distance(&v.point(), t),
                    });
                    events.track_steps += 1;
                }
                Stream::StateTelemetry => {
                    if telemetry.is_active() {
                        telemetry.publish(self.state_message(t, records.last()));
                    }
                }
                Stream::MapTelemetry => self.publish_map(t, telemetry),
                Stream::LibraryTelemetry => {
                    if telemetry.is_active() {
                        if let Some(msg) = self.library_message(t) {
                            telemetry.publish(msg);
                        }
                    }
                }
            }
        }

        let summary = summarize(&records, &track);
        if let Some(w) = self.metrics.take() {
            w.finish(summary)?;
        }
        if let Some(log) = self.scan_log.as_mut() {
            log.flush()?;
        }
        Ok(SessionReport {
            records,
            summary,
            frame_counts: self.map.counts(),
            events,
            track,
            final_state: self.vehicle,
            end_time: now,
        })
    }

    fn capture(&mut self, sensor: usize, t: f64) -> Result<(), SessionError> {
        // Bring the vehicle to the capture instant; tracking is exact, so
        // this matches the track stream.
        self.vehicle = step_vehicle(&self.vehicle, &self.active, t, self.scenario.tracking);
        let pose = self.vehicle.pose();
        let scan = raycast_scan(&self.world, &pose, &self.scenario.sensors[sensor], t);
        if let Some(log) = self.scan_log.as_mut() {
            log.write(&ScanRecord {
                scan: scan.clone(),
                vehicle_pose: pose,
            })?;
        }
        self.pending.push((scan, pose));
        Ok(())
    }

    fn integrate_pending(&mut self) -> Result<(), SessionError> {
        let started = Instant::now();
        let mut pending = std::mem::take(&mut self.pending).into_iter().peekable();
        while let Some((scan, pose)) = pending.next() {
            let mut frame = SensorFrame {
                stamp: scan.stamp,
                vehicle_pose: pose,
                scans: vec![scan],
            };
            while let Some((s, _)) = pending.next_if(|(s, _)| s.stamp == frame.stamp) {
                frame.scans.push(s);
            }
            self.map.integrate(&frame)?;
        }
        self.map_time += started.elapsed();
        Ok(())
    }

    fn operator_input(&mut self, t: f64, operator: &mut dyn OperatorSource, events: &mut EventCounts) -> OperatorInput {
        let cfg = &self.scenario.operator;
        match operator.poll(t, &self.vehicle) {
            Some(s) if s.age <= cfg.input_timeout => {
                self.last_input = Some(s.input);
                s.input
            }
            stale => {
                if stale.is_some() {
                    events.input_timeouts += 1;
                }
                match cfg.on_timeout {
                    TimeoutPolicy::Stop => OperatorInput::IDLE,
                    TimeoutPolicy::RenewLast => stale.map(|s| s.input).or(self.last_input).unwrap_or(OperatorInput::IDLE),
                }
            }
        }
    }

    fn plan(&mut self, t: f64, operator: &mut dyn OperatorSource, events: &mut EventCounts) -> MetricsRecord {
        let world_ref = self.active.reference_at(t);
        let frame = LocalFrame::anchored_at(&world_ref, t);
        let reference = world_ref.in_frame(&frame);
        let input = self.operator_input(t, operator, events);
        self.grid.rotation = input.rotation;

        let snapshot = self.map.snapshot();
        let result = prune_and_select(&self.grid, &input.action, &reference, &frame, &snapshot, &self.scenario.planner);
        if result.emergency_stop {
            log::debug!("t={t:.3}: no collision-free primitive, braking");
        }
        self.active = ActivePrimitive {
            primitive: result.chosen.clone(),
            start: t,
        };

        let record = MetricsRecord {
            stamp: t,
            operator_action: input.action,
            operator_rotation: input.rotation,
            chosen_action: result.chosen_action,
            pruned: result.operator_action_pruned,
            emergency: result.emergency_stop,
            candidates: result.candidates_checked,
            min_clearance: result.min_clearance,
            true_clearance: self.world.min_obstacle_distance(&Point3::from(world_ref.position()), t),
            speed: world_ref.velocity().norm(),
            accel: world_ref.acceleration().norm(),
            generation_ms: result.timings.generation.as_secs_f64() * 1e3,
            pruning_ms: result.timings.pruning.as_secs_f64() * 1e3,
            map_ms: std::mem::take(&mut self.map_time).as_secs_f64() * 1e3,
        };
        self.last_plan = Some(PlanContext {
            reference,
            frame,
            input,
            result,
        });
        record
    }

    fn state_message(&self, t: f64, last: Option<&MetricsRecord>) -> ServerMessage {
        let v = &self.vehicle;
        let clearance = self.world.min_obstacle_distance(&v.point(), t);
        let (operator, rot, chosen, pruned, emergency) = match last {
            Some(r) => (r.operator_action, r.operator_rotation, r.chosen_action, r.pruned, r.emergency),
            None => (Action::ZERO, 0.0, Action::ZERO, false, false),
        };
        ServerMessage::State(protocol::StateMessage {
            stamp: t,
            position: v.position.into(),
            velocity: v.velocity.into(),
            acceleration: v.acceleration.into(),
            yaw: v.yaw,
            yaw_rate: v.yaw_rate,
            speed: v.speed(),
            accel: v.acceleration.norm(),
            operator: operator.into(),
            rot,
            chosen: chosen.into(),
            pruned,
            emergency,
            clearance: clearance.is_finite().then_some(clearance),
        })
    }

    fn publish_map(&mut self, t: f64, telemetry: &dyn TelemetrySink) {
        if let Some(diff) = self.diff.update(self.map.voxel_set(), t) {
            telemetry.set_map_state(self.diff.full_map(t), self.diff.checksum_message(t));
            telemetry.publish(diff);
            telemetry.publish(self.diff.checksum_message(t));
        }
    }

    fn library_message(&self, t: f64) -> Option<ServerMessage> {
        let plan = self.last_plan.as_ref()?;
        let mut grid = self.grid.clone();
        grid.rotation = plan.input.rotation;
        let policy = self.scenario.planner.duration_policy(&plan.reference);
        let library = match build_library(&grid, &plan.reference, &plan.frame, &policy) {
            Ok(l) => l,
            Err(e) => {
                log::warn!("library telemetry skipped: {e}");
                return None;
            }
        };
        let stride = library.len().div_ceil(protocol::LIBRARY_CAP).max(1);
        let chosen = plan.result.chosen_index;
        let operator = plan.result.operator_index;
        let indices: Vec<usize> = (0..library.len())
            .filter(|&i| i % stride == 0 || Some(i) == chosen || i == operator)
            .collect();
        let position = |g: usize| indices.iter().position(|&i| i == g);
        Some(ServerMessage::Library {
            stamp: t,
            trajs: indices
                .iter()
                .map(|&i| protocol::sample_primitive(&library[i], protocol::SAMPLES_PER_PRIMITIVE))
                .collect(),
            chosen: chosen.and_then(position),
            operator: position(operator).unwrap_or(0),
            pruned: plan.result.operator_action_pruned,
            indices,
        })
    }
}

/// Stage timings from the planning records; speed, acceleration and
/// clearance from the tracking audit.
pub fn summarize(records: &[MetricsRecord], track: &[TrackSample]) -> Summary {
    Summary {
        cycles: records.len(),
        pruned_cycles: records.iter().filter(|r| r.pruned).count(),
        emergency_cycles: records.iter().filter(|r| r.emergency).count(),
        generation_ms: Stat::of(records.iter().map(|r| r.generation_ms)),
        pruning_ms: Stat::of(records.iter().map(|r| r.pruning_ms)),
        map_ms: Stat::of(records.iter().map(|r| r.map_ms)),
        max_speed: track.iter().map(|s| s.speed).fold(0.0, f64::max),
        max_accel: track.iter().map(|s| s.accel).fold(0.0, f64::max),
        min_true_clearance: track.iter().map(|s| s.clearance).fold(f64::INFINITY, f64::min),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EMPTY: &str = r#"
        name = "empty"
        [grid]
        vx = { min = 0.0, max = 2.0, count = 5 }
        omega = { min = -1.0, max = 1.0, count = 3 }
        vz = { min = 0.0, max = 0.0, count = 1 }
    "#;

    fn run(scenario: &str, op: &mut dyn OperatorSource, secs: f64) -> SessionReport {
        let mut s = Session::new(Scenario::from_toml_str(scenario).unwrap()).unwrap();
        s.run(
            op,
            &NullTelemetry,
            &RunOptions {
                duration: Some(secs),
                ..RunOptions::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn zero_input_in_empty_world_stays_put() {
        let r = run(EMPTY, &mut Constant(OperatorInput::IDLE), 2.0);
        assert_eq!(r.final_state.position, Vector3::new(0.0, 0.0, 1.5));
        assert_eq!(r.summary.min_true_clearance, f64::INFINITY);
        assert!(r.records.iter().all(|m| !m.pruned && m.min_clearance == f64::INFINITY));
    }

    #[test]
    fn event_counts_follow_rates() {
        let r = run(EMPTY, &mut Constant(OperatorInput::new(1.0, 0.0, 0.0, 0.0)), 2.0);
        assert_eq!(r.events.plan_cycles, 50);
        assert_eq!(r.events.map_updates, 60);
        assert_eq!(r.events.track_steps, 400);
        assert_eq!(r.events.sensor_scans, 120);
        assert_eq!(r.records.len(), 50);
    }

    #[test]
    fn stale_input_stops_the_vehicle() {
        struct Stale;
        impl OperatorSource for Stale {
            fn poll(&mut self, _now: f64, _v: &VehicleState) -> Option<OperatorSample> {
                Some(OperatorSample {
                    input: OperatorInput::new(2.0, 0.0, 0.0, 0.0),
                    age: 1.0,
                })
            }
        }
        let r = run(EMPTY, &mut Stale, 1.0);
        assert_eq!(r.events.input_timeouts, 25);
        assert!(r.records.iter().all(|m| m.operator_action == Action::ZERO));

        let renew = EMPTY.replace("[grid]", "[operator]\non_timeout = \"renew_last\"\n[grid]");
        let r = run(&renew, &mut Stale, 1.0);
        assert!(r.records.iter().all(|m| m.operator_action.vx == 2.0));
    }
}

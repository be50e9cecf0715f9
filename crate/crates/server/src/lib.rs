//! Command-line front-end for the teleoperation simulator.
//!
//! Scripted mode replays an input trace (or a scenario's built-in script) as
//! fast as possible. Live mode paces the loop against the wall clock and
//! takes operator actions from WebSocket clients.

pub mod bridge;

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, ValueEnum};
use teleop_core::session::{
    InputTrace, MetricsWriter, NullTelemetry, OperatorMailbox, OperatorSource, Overrides, RunOptions, Scenario,
    Session, SessionReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Live,
    Scripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Clone, Parser)]
#[command(name = "teleop-sim", version, about = "Simulated multirotor teleoperation with collision avoidance")]
pub struct Args {
    /// Scenario file (TOML).
    #[arg(long)]
    pub scenario: PathBuf,
    /// Input trace with rows `t,vx,vz,omega,rot`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "scripted")]
    pub mode: Mode,
    /// WebSocket endpoint for live mode.
    #[arg(long, default_value = "127.0.0.1:8765")]
    pub listen: String,
    /// Metrics CSV output.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Binary scan log output.
    #[arg(long)]
    pub scan_log: Option<PathBuf>,
    /// Seed for scenario clutter.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Pace the loop against the wall clock (default: on in live mode).
    #[arg(long, value_enum)]
    pub realtime: Option<Toggle>,
    /// Simulated seconds to run.
    #[arg(long)]
    pub run_time: Option<f64>,
    /// Collision radius r (m).
    #[arg(long = "collision-radius", visible_alias = "r")]
    pub collision_radius: Option<f64>,
    /// Vehicle radius r_v (m).
    #[arg(long = "vehicle-radius", visible_alias = "r-v")]
    pub vehicle_radius: Option<f64>,
    /// Primitive duration T (s).
    #[arg(long = "horizon", visible_alias = "t")]
    pub horizon: Option<f64>,
    /// Maximum forward speed of the action grid (m/s).
    #[arg(long)]
    pub v_max: Option<f64>,
    /// Map voxel edge length (m).
    #[arg(long)]
    pub voxel_size: Option<f64>,
}

/// Seconds simulated after a trace's last row when no run time is given.
pub const TRACE_SETTLE_TIME: f64 = 5.0;

impl Args {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            collision_radius: self.collision_radius,
            vehicle_radius: self.vehicle_radius,
            duration: self.horizon,
            v_max: self.v_max,
            voxel_size: self.voxel_size,
            seed: self.seed,
        }
    }
}

pub fn load_scenario(args: &Args) -> anyhow::Result<Scenario> {
    let mut scenario = Scenario::load(&args.scenario)?;
    scenario
        .apply(&args.overrides())
        .with_context(|| "invalid command-line override")?;
    Ok(scenario)
}

/// Runs one session to completion. `stop` ends a run early.
pub fn run(args: &Args, stop: Arc<AtomicBool>) -> anyhow::Result<SessionReport> {
    let scenario = load_scenario(args)?;
    let mut session = Session::new(scenario.clone())?;
    if let Some(path) = &args.scan_log {
        let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
        session = session.with_scan_log(Box::new(BufWriter::new(file)))?;
    }
    if let Some(path) = &args.metrics {
        let writer = MetricsWriter::create(path).with_context(|| format!("cannot create {}", path.display()))?;
        session = session.with_metrics(writer);
    }

    let report = match args.mode {
        Mode::Scripted => {
            let (mut operator, natural_end): (Box<dyn OperatorSource + Send>, Option<f64>) = match &args.trace {
                Some(path) => {
                    let trace = InputTrace::load(path)?;
                    let end = trace.end() + TRACE_SETTLE_TIME;
                    (Box::new(trace), Some(end))
                }
                None => match &scenario.operator.script {
                    Some(script) => (script.build()?, None),
                    None => bail!("scripted mode needs --trace or an [operator.script] in the scenario"),
                },
            };
            let duration = args.run_time.or(scenario.duration).or(natural_end);
            if duration.is_none() {
                bail!("scripted mode needs --run-time or a scenario duration");
            }
            let options = RunOptions {
                duration,
                realtime: args.realtime == Some(Toggle::On),
                stop: Some(stop),
            };
            session.run(operator.as_mut(), &NullTelemetry, &options)?
        }
        Mode::Live => {
            let mailbox = OperatorMailbox::new();
            let hub = bridge::Hub::new(mailbox.clone());
            hub.set_config(&session.config_message());
            let server = bridge::serve(&args.listen, hub.clone())
                .with_context(|| format!("cannot listen on {}", args.listen))?;
            println!("listening on ws://{}", server.local_addr());
            let options = RunOptions {
                duration: args.run_time.or(scenario.duration),
                realtime: args.realtime != Some(Toggle::Off),
                stop: Some(stop),
            };
            let mut operator = mailbox;
            let report = session.run(&mut operator, hub.as_ref(), &options)?;
            server.shutdown();
            report
        }
    };
    Ok(report)
}

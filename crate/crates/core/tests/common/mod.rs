//! Helpers and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{Isometry3, Point3, Vector3, Vector4};
use teleop_core::map::FrameCounts;
use teleop_core::session::{NullTelemetry, OperatorSource, RunOptions, Scenario, ScriptSpec, Session, SessionReport};
use teleop_core::trajectory::MotionPrimitive;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.toml"))
}

pub fn load(name: &str) -> Scenario {
    Scenario::load(scenario_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn shipped_scenarios() -> Vec<String> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .expect("scenario directory")
        .filter_map(|e| {
            let p = e.ok()?.path();
            (p.extension()? == "toml").then(|| p.file_stem().unwrap().to_string_lossy().into_owned())
        })
        .collect();
    names.sort();
    names
}

pub fn run_with(scenario: Scenario, operator: &mut dyn OperatorSource) -> SessionReport {
    let duration = scenario.duration;
    let mut session = Session::new(scenario).expect("valid scenario");
    session
        .run(
            operator,
            &NullTelemetry,
            &RunOptions {
                duration,
                ..RunOptions::default()
            },
        )
        .expect("session runs")
}

/// Runs a scenario with its built-in script.
pub fn run_scripted(scenario: Scenario) -> SessionReport {
    let mut op = scenario
        .operator
        .script
        .as_ref()
        .expect("scenario has a script")
        .build()
        .expect("script builds");
    run_with(scenario, op.as_mut())
}

pub fn pursuit_targets(scenario: &Scenario) -> Vec<[f64; 2]> {
    match scenario.operator.script.as_ref() {
        Some(ScriptSpec::Pursuit { targets, .. }) => targets.clone(),
        _ => panic!("scenario {} has no pursuit script", scenario.name),
    }
}

/// `k`-th derivative of `sum c_i t^i`, evaluated term by term.
pub fn poly_derivative(c: &[f64], t: f64, k: usize) -> f64 {
    let mut sum = 0.0;
    for (i, &ci) in c.iter().enumerate().skip(k) {
        let mut f = 1.0;
        for j in 0..k {
            f *= (i - j) as f64;
        }
        sum += ci * f * t.powi((i - k) as i32);
    }
    sum
}

/// World-frame derivative of `(x, y, z, yaw)` computed from raw coefficients.
pub fn world_derivative(mp: &MotionPrimitive, t: f64, k: usize) -> Vector4<f64> {
    let local: Vec<f64> = (0..4).map(|a| poly_derivative(&mp.coeffs[a], t, k)).collect();
    let (s, c) = mp.frame.heading.sin_cos();
    let mut x = c * local[0] - s * local[1];
    let mut y = s * local[0] + c * local[1];
    let mut z = local[2];
    let mut yaw = local[3];
    if k == 0 {
        x += mp.frame.origin.x;
        y += mp.frame.origin.y;
        z += mp.frame.origin.z;
        yaw += mp.frame.heading;
    }
    Vector4::new(x, y, z, yaw)
}

pub fn in_frame_derivative(mp: &MotionPrimitive, t: f64, k: usize) -> Vector4<f64> {
    Vector4::from_fn(|a, _| poly_derivative(&mp.coeffs[a], t, k))
}

/// Signed angle difference folded into `[-pi, pi]`.
pub fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::TAU);
    d.min(std::f64::consts::TAU - d)
}

/// Smallest squared distance by exhaustive scan.
pub fn linear_nearest_sq(points: &[Point3<f64>], q: &Point3<f64>) -> f64 {
    points.iter().map(|p| (p - q).norm_squared()).fold(f64::INFINITY, f64::min)
}

/// Brute-force feasibility: every sample at `0, dt, 2dt, ...` plus the
/// endpoint must keep `threshold` from all points.
pub fn brute_force_free(mp: &MotionPrimitive, points: &[Point3<f64>], threshold: f64, dt: f64) -> bool {
    let mut times = Vec::new();
    let mut k = 0;
    while (k as f64) * dt < mp.duration {
        times.push(k as f64 * dt);
        k += 1;
    }
    times.push(mp.duration);
    let t2 = threshold * threshold;
    times.iter().all(|&t| {
        let w = world_derivative(mp, t, 0);
        let p = Point3::new(w.x, w.y, w.z);
        points.iter().all(|o| (o - p).norm_squared() >= t2)
    })
}

/// Replays keyframe / subframe thresholds over a pose sequence.
pub fn replay_frame_counts(poses: &[Isometry3<f64>], kf: f64, sf: f64, heading: f64) -> FrameCounts {
    let yaw = |p: &Isometry3<f64>| {
        let x = p.rotation * Vector3::x();
        x.y.atan2(x.x)
    };
    let mut counts = FrameCounts::default();
    let mut last_kf: Option<Isometry3<f64>> = None;
    let mut last_sf: Option<Isometry3<f64>> = None;
    for p in poses {
        let dist = |q: &Isometry3<f64>| (p.translation.vector - q.translation.vector).norm();
        if last_kf.as_ref().is_none_or(|k| dist(k) > kf) {
            counts.keyframes += 1;
            last_kf = Some(*p);
            last_sf = Some(*p);
        } else if last_sf
            .as_ref()
            .is_none_or(|s| dist(s) > sf || angle_gap(yaw(p), yaw(s)) > heading)
        {
            counts.subframes += 1;
            last_sf = Some(*p);
        } else {
            counts.buffer_frames += 1;
        }
    }
    counts
}

mod common;

use std::io::Cursor;
use std::sync::{Arc, Mutex};

use common::{load, replay_frame_counts};
use nalgebra::Isometry3;
use teleop_core::map::scan_log::{ScanLogReader, ScanLogWriter, ScanRecord};
use teleop_core::map::{LocalMap, SensorFrame};
use teleop_core::session::{NullTelemetry, RunOptions, Session};

/// `Write` handle over a shared buffer so the log can be read after the run.
#[derive(Clone, Default)]
struct Shared(Arc<Mutex<Vec<u8>>>);

impl std::io::Write for Shared {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

fn logged_run(name: &str) -> (Session, teleop_core::session::SessionReport, Vec<ScanRecord>) {
    let scenario = load(name);
    let duration = scenario.duration;
    let mut op = scenario.operator.script.as_ref().unwrap().build().unwrap();
    let buf = Shared::default();
    let mut session = Session::new(scenario)
        .unwrap()
        .with_scan_log(Box::new(buf.clone()))
        .unwrap();
    let report = session
        .run(
            op.as_mut(),
            &NullTelemetry,
            &RunOptions {
                duration,
                ..RunOptions::default()
            },
        )
        .unwrap();
    let bytes = buf.0.lock().unwrap().clone();
    let records = ScanLogReader::new(Cursor::new(bytes))
        .unwrap()
        .collect::<Result<Vec<_>, _>>()
        .unwrap();
    (session, report, records)
}

fn frames(records: &[ScanRecord]) -> Vec<SensorFrame> {
    let mut out: Vec<SensorFrame> = Vec::new();
    for r in records {
        match out.last_mut() {
            Some(f) if f.stamp == r.scan.stamp => f.scans.push(r.scan.clone()),
            _ => out.push(SensorFrame {
                stamp: r.scan.stamp,
                vehicle_pose: r.vehicle_pose,
                scans: vec![r.scan.clone()],
            }),
        }
    }
    out
}

#[test]
fn straight_traverse_counts_match_threshold_replay() {
    let (session, report, records) = logged_run("straight_traverse");
    let params = session.scenario().map;
    assert_eq!(records.len(), report.events.sensor_scans);
    let poses: Vec<Isometry3<f64>> = frames(&records).iter().map(|f| f.vehicle_pose).collect();
    let replay = replay_frame_counts(&poses, params.kf_distance, params.sf_distance, params.sf_heading);
    assert_eq!(report.frame_counts, replay);
    // 5 m at 2 m keyframe spacing: the start plus two more keyframes.
    assert_eq!(replay.keyframes, 3);
    assert!(replay.subframes > 0 && replay.buffer_frames > 0);
}

#[test]
fn replaying_the_log_rebuilds_the_same_map() {
    let (session, _, records) = logged_run("garage_clutter");
    let mut rebuilt = LocalMap::new(session.scenario().map).unwrap();
    for f in frames(&records) {
        rebuilt.integrate(&f).unwrap();
    }
    assert_eq!(rebuilt.counts(), session.map().counts());
    assert_eq!(rebuilt.voxel_set(), session.map().voxel_set());
}

#[test]
fn log_round_trips_records_exactly() {
    let (_, _, records) = logged_run("straight_traverse");
    let mut w = ScanLogWriter::new(Vec::new()).unwrap();
    for r in &records {
        w.write(r).unwrap();
    }
    let again: Vec<ScanRecord> = ScanLogReader::new(Cursor::new(w.into_inner()))
        .unwrap()
        .collect::<Result<_, _>>()
        .unwrap();
    assert_eq!(again, records);
}

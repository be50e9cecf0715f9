use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::mpsc;
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

use crate::trajectory::Action;

/// One row per planning cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub stamp: f64,
    pub operator_action: Action,
    pub operator_rotation: f64,
    pub chosen_action: Action,
    pub pruned: bool,
    pub emergency: bool,
    pub candidates: usize,
    /// Map clearance of the chosen primitive.
    pub min_clearance: f64,
    /// Ground-truth distance from the vehicle to the nearest obstacle.
    pub true_clearance: f64,
    pub speed: f64,
    pub accel: f64,
    pub generation_ms: f64,
    pub pruning_ms: f64,
    /// Map integration time spent since the previous planning cycle.
    pub map_ms: f64,
}

pub const CSV_HEADER: &str = "stamp,op_vx,op_vz,op_omega,op_rot,chosen_vx,chosen_vz,chosen_omega,pruned,emergency,candidates,min_clearance,true_clearance,speed,accel,generation_ms,pruning_ms,map_ms";

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        let mut s = String::with_capacity(160);
        let _ = write!(
            s,
            "{:.4},{},{},{},{},{},{},{},{},{},{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4}",
            self.stamp,
            self.operator_action.vx,
            self.operator_action.vz,
            self.operator_action.omega,
            self.operator_rotation,
            self.chosen_action.vx,
            self.chosen_action.vz,
            self.chosen_action.omega,
            self.pruned as u8,
            self.emergency as u8,
            self.candidates,
            fmt_dist(self.min_clearance),
            fmt_dist(self.true_clearance),
            self.speed,
            self.accel,
            self.generation_ms,
            self.pruning_ms,
            self.map_ms,
        );
        s
    }
}

fn fmt_dist(d: f64) -> String {
    if d.is_finite() {
        format!("{d:.4}")
    } else {
        "inf".to_owned()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub max: f64,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self::default();
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub cycles: usize,
    pub pruned_cycles: usize,
    pub emergency_cycles: usize,
    pub generation_ms: Stat,
    pub pruning_ms: Stat,
    pub map_ms: Stat,
    pub max_speed: f64,
    pub max_accel: f64,
    /// Smallest ground-truth clearance seen by the audit, `+inf` in an empty
    /// world.
    pub min_true_clearance: f64,
}

impl Summary {
    pub fn render(&self) -> String {
        let stat = |s: &Stat| format!("{:.3} +/- {:.3} ms (max {:.3})", s.mean, s.std, s.max);
        format!(
            "cycles: {}\npruned cycles: {}\nemergency cycles: {}\ntrajectory generation: {}\ntrajectory pruning: {}\nmap integration: {}\nmax speed: {:.3} m/s\nmax |accel|: {:.3} m/s^2\nmin true clearance: {} m",
            self.cycles,
            self.pruned_cycles,
            self.emergency_cycles,
            stat(&self.generation_ms),
            stat(&self.pruning_ms),
            stat(&self.map_ms),
            self.max_speed,
            self.max_accel,
            fmt_dist(self.min_true_clearance),
        )
    }
}

/// Writes the table followed by the summary as `#`-prefixed lines.
pub fn write_metrics(mut w: impl Write, records: &[MetricsRecord], summary: &Summary) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        writeln!(w, "{}", r.csv_row())?;
    }
    write_summary(&mut w, summary)
}

fn write_summary(mut w: impl Write, summary: &Summary) -> io::Result<()> {
    writeln!(w, "# summary")?;
    for line in summary.render().lines() {
        writeln!(w, "# {line}")?;
    }
    w.flush()
}

enum Msg {
    Row(MetricsRecord),
    Finish(Summary),
}

/// Streams rows to a file from a background thread so the planning loop
/// never waits on disk.
pub struct MetricsWriter {
    tx: mpsc::Sender<Msg>,
    handle: JoinHandle<io::Result<()>>,
}

impl MetricsWriter {
    pub fn create(path: impl AsRef<Path>) -> io::Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        let (tx, rx) = mpsc::channel();
        let handle = std::thread::spawn(move || -> io::Result<()> {
            writeln!(out, "{CSV_HEADER}")?;
            for msg in rx {
                match msg {
                    Msg::Row(r) => writeln!(out, "{}", r.csv_row())?,
                    Msg::Finish(s) => {
                        write_summary(&mut out, &s)?;
                        break;
                    }
                }
            }
            out.flush()
        });
        Ok(Self { tx, handle })
    }

    pub fn push(&self, record: MetricsRecord) {
        let _ = self.tx.send(Msg::Row(record));
    }

    pub fn finish(self, summary: Summary) -> io::Result<()> {
        let _ = self.tx.send(Msg::Finish(summary));
        drop(self.tx);
        self.handle
            .join()
            .map_err(|_| io::Error::other("metrics writer panicked"))?
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(stamp: f64) -> MetricsRecord {
        MetricsRecord {
            stamp,
            operator_action: Action::new(1.0, 0.0, 0.5),
            operator_rotation: 0.0,
            chosen_action: Action::new(0.5, 0.0, 0.5),
            pruned: true,
            emergency: false,
            candidates: 3,
            min_clearance: f64::INFINITY,
            true_clearance: 2.0,
            speed: 1.0,
            accel: 0.5,
            generation_ms: 0.01,
            pruning_ms: 0.2,
            map_ms: 1.0,
        }
    }

    #[test]
    fn stat_of_constant_series() {
        let s = Stat::of([2.0, 2.0, 2.0]);
        assert_eq!((s.mean, s.std, s.max), (2.0, 0.0, 2.0));
        assert_eq!(Stat::of([]), Stat::default());
    }

    #[test]
    fn rows_match_header_width() {
        let cols = CSV_HEADER.split(',').count();
        assert_eq!(record(0.0).csv_row().split(',').count(), cols);
        assert!(record(0.0).csv_row().contains(",inf,"));
    }

    #[test]
    fn writer_thread_produces_table_and_summary() {
        let dir = std::env::temp_dir().join(format!("teleop-metrics-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.csv");
        let w = MetricsWriter::create(&path).unwrap();
        for i in 0..10 {
            w.push(record(i as f64 * 0.04));
        }
        w.finish(Summary::default()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.iter().filter(|l| !l.starts_with('#')).count(), 11);
        assert!(text.contains("# summary"));
        std::fs::remove_dir_all(dir).ok();
    }
}

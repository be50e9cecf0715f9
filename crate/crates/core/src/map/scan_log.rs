//! Binary scan log for recording and replaying sensor streams.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! file    := magic record*
//! magic   := "TLSCAN01"                       8 bytes
//! record  := len:u32 payload                  len = payload byte count
//! payload := stamp:f64
//!            id_len:u16 id:utf8[id_len]
//!            sensor_pose:f64[7]               tx ty tz qx qy qz qw (sensor -> world)
//!            vehicle_pose:f64[7]              tx ty tz qx qy qz qw (body -> world)
//!            n:u32 xyz:f64[3 n]               points in the sensor frame
//! ```

use std::io::{self, Read, Write};

use nalgebra::{Isometry3, Point3, Quaternion, Translation3, UnitQuaternion};

use super::SensorScan;

pub const MAGIC: &[u8; 8] = b"TLSCAN01";

/// A logged scan together with the vehicle pose it was captured at.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanRecord {
    pub scan: SensorScan,
    pub vehicle_pose: Isometry3<f64>,
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

fn put_pose(buf: &mut Vec<u8>, pose: &Isometry3<f64>) {
    let t = pose.translation.vector;
    let q = pose.rotation.quaternion();
    for v in [t.x, t.y, t.z, q.i, q.j, q.k, q.w] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub struct ScanLogWriter<W: Write> {
    inner: W,
}

impl<W: Write> ScanLogWriter<W> {
    pub fn new(mut inner: W) -> io::Result<Self> {
        inner.write_all(MAGIC)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, record: &ScanRecord) -> io::Result<()> {
        let scan = &record.scan;
        let id = scan.sensor_id.as_bytes();
        let id_len = u16::try_from(id.len()).map_err(|_| invalid("sensor id longer than 65535 bytes"))?;
        let n = u32::try_from(scan.points.len()).map_err(|_| invalid("too many points"))?;

        let mut buf = Vec::with_capacity(8 + 2 + id.len() + 112 + 4 + 24 * scan.points.len());
        buf.extend_from_slice(&scan.stamp.to_le_bytes());
        buf.extend_from_slice(&id_len.to_le_bytes());
        buf.extend_from_slice(id);
        put_pose(&mut buf, &scan.sensor_pose);
        put_pose(&mut buf, &record.vehicle_pose);
        buf.extend_from_slice(&n.to_le_bytes());
        for p in &scan.points {
            for v in [p.x, p.y, p.z] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let len = u32::try_from(buf.len()).map_err(|_| invalid("record too large"))?;
        self.inner.write_all(&len.to_le_bytes())?;
        self.inner.write_all(&buf)
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> io::Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(invalid("truncated record"));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn f64(&mut self) -> io::Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn pose(&mut self) -> io::Result<Isometry3<f64>> {
        let mut v = [0.0; 7];
        for x in &mut v {
            *x = self.f64()?;
        }
        let q = Quaternion::new(v[6], v[3], v[4], v[5]);
        // Stored rotations are already unit; keep their exact bits so
        // replayed points land in the same voxels.
        if !((q.norm() - 1.0).abs() < 1e-9) {
            return Err(invalid("rotation is not a unit quaternion"));
        }
        Ok(Isometry3::from_parts(
            Translation3::new(v[0], v[1], v[2]),
            UnitQuaternion::new_unchecked(q),
        ))
    }
}

pub struct ScanLogReader<R: Read> {
    inner: R,
}

impl<R: Read> ScanLogReader<R> {
    pub fn new(mut inner: R) -> io::Result<Self> {
        let mut magic = [0u8; 8];
        inner.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(invalid("not a scan log"));
        }
        Ok(Self { inner })
    }

    /// Next record, `None` at a clean end of file.
    pub fn next_record(&mut self) -> io::Result<Option<ScanRecord>> {
        let mut len = [0u8; 4];
        match self.inner.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e),
        }
        let mut payload = vec![0u8; u32::from_le_bytes(len) as usize];
        self.inner.read_exact(&mut payload)?;
        let mut c = Cursor { buf: &payload };

        let stamp = c.f64()?;
        let id_len = u16::from_le_bytes(c.take(2)?.try_into().unwrap()) as usize;
        let sensor_id = std::str::from_utf8(c.take(id_len)?)
            .map_err(|_| invalid("sensor id is not utf-8"))?
            .to_owned();
        let sensor_pose = c.pose()?;
        let vehicle_pose = c.pose()?;
        let n = u32::from_le_bytes(c.take(4)?.try_into().unwrap()) as usize;
        if c.buf.len() != n * 24 {
            return Err(invalid("point count does not match record length"));
        }
        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            points.push(Point3::new(c.f64()?, c.f64()?, c.f64()?));
        }
        Ok(Some(ScanRecord {
            scan: SensorScan {
                sensor_id,
                stamp,
                sensor_pose,
                points,
            },
            vehicle_pose,
        }))
    }
}

impl<R: Read> Iterator for ScanLogReader<R> {
    type Item = io::Result<ScanRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_record().transpose()
    }
}

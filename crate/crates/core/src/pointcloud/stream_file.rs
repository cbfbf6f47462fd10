//! Self-describing stream file.
//!
//! ```text
//! "MSLC" | u16 version | f64 roi side | 3 x f64 roi center | u32 sweep count
//! per sweep: u64 point count | u64 timestamp | u8 pose flag | [12 x f64 pose]
//!            | point count x (3 x f64 position, u8 intensity)
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::{Point, RegionOfInterest, RigidTransform, Sweep, SweepStream};
use crate::bytes::{as_format, PutLe, Reader};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MSLC";
const VERSION: u16 = 1;

pub fn write_stream(stream: &SweepStream) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.put_u16(VERSION);
    out.put_f64(stream.roi.side);
    for c in stream.roi.center {
        out.put_f64(c);
    }
    out.put_u32(stream.sweeps.len() as u32);
    for s in &stream.sweeps {
        out.put_u64(s.points.len() as u64);
        out.put_u64(s.timestamp);
        match &s.pose {
            Some(p) => {
                out.put_u8(1);
                for v in p.to_array() {
                    out.put_f64(v);
                }
            }
            None => out.put_u8(0),
        }
        for p in &s.points {
            for c in p.position {
                out.put_f64(c);
            }
            out.put_u8(p.intensity);
        }
    }
    out
}

pub fn read_stream(bytes: &[u8]) -> Result<SweepStream> {
    read_inner(bytes).map_err(as_format)
}

fn read_inner(bytes: &[u8]) -> Result<SweepStream> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::format(format!(
            "unsupported stream version {version}"
        )));
    }
    let side = r.f64()?;
    let center = [r.f64()?, r.f64()?, r.f64()?];
    let roi = RegionOfInterest::new(side, center)?;
    let n = r.u32()? as usize;
    let mut sweeps = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let count = r.u64()? as usize;
        let timestamp = r.u64()?;
        let pose = match r.u8()? {
            0 => None,
            1 => {
                let mut a = [0.0; 12];
                for v in a.iter_mut() {
                    *v = r.f64()?;
                }
                Some(RigidTransform::from_array(&a))
            }
            f => return Err(Error::format(format!("bad pose flag {f}"))),
        };
        if count > r.remaining() / 25 {
            return Err(Error::format(format!(
                "sweep claims {count} points but only {} bytes remain",
                r.remaining()
            )));
        }
        let mut points = Vec::with_capacity(count);
        for _ in 0..count {
            let p = [r.f64()?, r.f64()?, r.f64()?];
            points.push(Point::new(p, r.u8()?));
        }
        sweeps.push(Sweep {
            points,
            timestamp,
            pose,
        });
    }
    if r.remaining() != 0 {
        return Err(Error::format(format!("{} trailing bytes", r.remaining())));
    }
    SweepStream::new(roi, sweeps)
}

pub fn write_stream_file(path: impl AsRef<Path>, stream: &SweepStream) -> Result<()> {
    fs::write(path, write_stream(stream))?;
    Ok(())
}

pub fn read_stream_file(path: impl AsRef<Path>) -> Result<SweepStream> {
    read_stream(&fs::read(path)?)
}

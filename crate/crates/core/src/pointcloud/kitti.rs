//! KITTI Velodyne `.bin` records: four little-endian `f32` per point (x, y, z, reflectance).

use std::fs;
use std::path::Path;

use super::{Point, Sweep};
use crate::error::{Error, Result};

const RECORD_BYTES: usize = 16;

/// `round(clamp(r, 0, 1) * 255)`.
pub fn reflectance_to_intensity(r: f32) -> u8 {
    (f64::from(r).clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn parse_kitti_bytes(bytes: &[u8], timestamp: u64) -> Result<Sweep> {
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(Error::format(format!(
            "KITTI buffer of {} bytes is not a multiple of {RECORD_BYTES}",
            bytes.len()
        )));
    }
    let mut points = Vec::with_capacity(bytes.len() / RECORD_BYTES);
    for (i, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let f = |k: usize| f32::from_le_bytes(rec[k * 4..k * 4 + 4].try_into().unwrap());
        let (x, y, z, r) = (f(0), f(1), f(2), f(3));
        if !(x.is_finite() && y.is_finite() && z.is_finite() && r.is_finite()) {
            return Err(Error::format(format!("non-finite value in record {i}")));
        }
        points.push(Point::new(
            [f64::from(x), f64::from(y), f64::from(z)],
            reflectance_to_intensity(r),
        ));
    }
    Ok(Sweep::new(points, timestamp))
}

pub fn load_kitti_bin(path: impl AsRef<Path>) -> Result<Sweep> {
    let bytes = fs::read(path)?;
    parse_kitti_bytes(&bytes, 0)
}

/// Inverse of [`parse_kitti_bytes`] for positions representable as `f32`; intensity `k` is
/// written as `k / 255`.
pub fn kitti_bytes(s: &Sweep) -> Vec<u8> {
    let mut out = Vec::with_capacity(s.len() * RECORD_BYTES);
    for p in &s.points {
        for c in p.position {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
        out.extend_from_slice(&(f32::from(p.intensity) / 255.0).to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(v: [f32; 4]) -> Vec<u8> {
        v.iter().flat_map(|f| f.to_le_bytes()).collect()
    }

    #[test]
    fn single_record_by_hand() {
        // 1.0 = 0x3f800000, 2.0 = 0x40000000, 3.0 = 0x40400000, 0.5 = 0x3f000000
        let bytes = [
            0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0x40, 0x00, 0x00, 0x40, 0x40, 0x00, 0x00,
            0x00, 0x3f,
        ];
        assert_eq!(bytes.to_vec(), record([1.0, 2.0, 3.0, 0.5]));
        let s = parse_kitti_bytes(&bytes, 0).unwrap();
        assert_eq!(s.points, vec![Point::new([1.0, 2.0, 3.0], 128)]);
    }

    #[test]
    fn empty_and_truncated() {
        assert!(parse_kitti_bytes(&[], 0).unwrap().is_empty());
        assert!(matches!(
            parse_kitti_bytes(&[0u8; 17], 0),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn non_finite_reports_record_index() {
        let mut bytes = record([0.0, 0.0, 0.0, 0.1]);
        bytes.extend(record([f32::NAN, 0.0, 0.0, 0.1]));
        let err = parse_kitti_bytes(&bytes, 0).unwrap_err().to_string();
        assert!(err.contains("record 1"), "{err}");
    }

    #[test]
    fn reflectance_is_clamped() {
        assert_eq!(reflectance_to_intensity(-0.3), 0);
        assert_eq!(reflectance_to_intensity(1.7), 255);
        assert_eq!(reflectance_to_intensity(1.0), 255);
    }

    #[test]
    fn loads_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("000000.bin");
        std::fs::write(&path, record([4.0, 5.0, 6.0, 0.0])).unwrap();
        let s = load_kitti_bin(&path).unwrap();
        assert_eq!(s.points, vec![Point::new([4.0, 5.0, 6.0], 0)]);
    }

    proptest! {
        #[test]
        fn canonical_buffers_roundtrip_bytewise(
            recs in prop::collection::vec((prop::array::uniform3(-80.0f32..80.0), 0u8..=255), 0..64)
        ) {
            let bytes: Vec<u8> = recs
                .iter()
                .flat_map(|(p, k)| record([p[0], p[1], p[2], f32::from(*k) / 255.0]))
                .collect();
            let s = parse_kitti_bytes(&bytes, 0).unwrap();
            prop_assert_eq!(kitti_bytes(&s), bytes);
        }
    }
}

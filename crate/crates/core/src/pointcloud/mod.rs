//! Point, sweep and stream data model, plus file ingestion.
//!
//! A [`Sweep`] is one LiDAR rotation in sensor coordinates; its optional pose maps sensor
//! coordinates to world coordinates. A [`SweepStream`] is an ordered run of sweeps sharing one
//! cubic region of interest.

mod kitti;
mod stream_file;
pub mod synthetic;

pub use kitti::{kitti_bytes, load_kitti_bin, parse_kitti_bytes, reflectance_to_intensity};
pub use stream_file::{read_stream, read_stream_file, write_stream, write_stream_file};
pub use synthetic::{generate_labeled_stream, generate_synthetic_stream, SceneParams};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

#[inline]
pub fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn dist_sq(a: &Vec3, b: &Vec3) -> f64 {
    let d = sub(a, b);
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub position: Vec3,
    pub intensity: u8,
}

impl Point {
    pub fn new(position: Vec3, intensity: u8) -> Self {
        Point {
            position,
            intensity,
        }
    }
}

/// Rigid transform `p -> R p + t`. `rotation` is row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: [[f64; 3]; 3],
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        RigidTransform {
            translation: t,
            ..Self::identity()
        }
    }

    /// Rotation about +z by `yaw` radians followed by a translation.
    pub fn from_yaw_translation(yaw: f64, t: Vec3) -> Self {
        let (s, c) = yaw.sin_cos();
        RigidTransform {
            rotation: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
            translation: t,
        }
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        let r = &self.rotation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + self.translation[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + self.translation[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + self.translation[2],
        ]
    }

    pub fn inverse(&self) -> Self {
        let r = &self.rotation;
        let rt = [
            [r[0][0], r[1][0], r[2][0]],
            [r[0][1], r[1][1], r[2][1]],
            [r[0][2], r[1][2], r[2][2]],
        ];
        let t = &self.translation;
        let nt = [
            -(rt[0][0] * t[0] + rt[0][1] * t[1] + rt[0][2] * t[2]),
            -(rt[1][0] * t[0] + rt[1][1] * t[1] + rt[1][2] * t[2]),
            -(rt[2][0] * t[0] + rt[2][1] * t[1] + rt[2][2] * t[2]),
        ];
        RigidTransform {
            rotation: rt,
            translation: nt,
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        let a = &self.rotation;
        let b = &other.rotation;
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        RigidTransform {
            rotation: r,
            translation: self.apply(&other.translation),
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }

    /// Orthonormal with determinant +1, within `1e-6`.
    pub fn is_valid(&self) -> bool {
        let r = &self.rotation;
        if r.iter()
            .flatten()
            .chain(self.translation.iter())
            .any(|v| !v.is_finite())
        {
            return false;
        }
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (d - want).abs() > 1e-6 {
                    return false;
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        (det - 1.0).abs() <= 1e-6
    }

    /// Row-major rotation followed by translation, as stored on disk.
    pub fn to_array(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for i in 0..3 {
            out[i * 3..i * 3 + 3].copy_from_slice(&self.rotation[i]);
        }
        out[9..].copy_from_slice(&self.translation);
        out
    }

    pub fn from_array(a: &[f64; 12]) -> Self {
        let mut rotation = [[0.0; 3]; 3];
        for (i, row) in rotation.iter_mut().enumerate() {
            row.copy_from_slice(&a[i * 3..i * 3 + 3]);
        }
        RigidTransform {
            rotation,
            translation: [a[9], a[10], a[11]],
        }
    }
}

/// Axis-aligned cube of side `side` centered at `center`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionOfInterest {
    pub side: f64,
    pub center: Vec3,
}

impl Default for RegionOfInterest {
    fn default() -> Self {
        RegionOfInterest {
            side: 400.0,
            center: [0.0; 3],
        }
    }
}

impl RegionOfInterest {
    pub fn new(side: f64, center: Vec3) -> Result<Self> {
        if !(side > 0.0 && side.is_finite()) || center.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid ROI side {side}")));
        }
        Ok(RegionOfInterest { side, center })
    }

    pub fn corner(&self) -> Vec3 {
        let h = self.side / 2.0;
        [self.center[0] - h, self.center[1] - h, self.center[2] - h]
    }

    /// Edge length of a cell at octree level `level`.
    pub fn cell_size(&self, level: u32) -> f64 {
        self.side / (1u64 << level) as f64
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let c = self.corner();
        (0..3).all(|i| p[i] >= c[i] && p[i] <= c[i] + self.side)
    }

    /// Center of `cell` at `level`, in meters.
    pub fn cell_center(&self, level: u32, cell: [u32; 3]) -> Vec3 {
        let c = self.corner();
        let s = self.cell_size(level);
        [
            c[0] + (cell[0] as f64 + 0.5) * s,
            c[1] + (cell[1] as f64 + 0.5) * s,
            c[2] + (cell[2] as f64 + 0.5) * s,
        ]
    }

    /// Per-axis half-cell bound on quantization error at depth `depth`.
    pub fn quantization_bound(&self, depth: u32) -> f64 {
        self.side / (1u64 << (depth + 1)) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub points: Vec<Point>,
    pub timestamp: u64,
    /// Sensor-to-world transform, when known.
    pub pose: Option<RigidTransform>,
}

impl Sweep {
    pub fn new(points: Vec<Point>, timestamp: u64) -> Self {
        Sweep {
            points,
            timestamp,
            pose: None,
        }
    }

    pub fn with_pose(mut self, pose: RigidTransform) -> Self {
        self.pose = Some(pose);
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.points.iter().map(|p| p.position).collect()
    }
}

/// Applies `t` to every position; intensities and metadata are kept.
pub fn transform_sweep(s: &Sweep, t: &RigidTransform) -> Sweep {
    Sweep {
        points: s
            .points
            .iter()
            .map(|p| Point::new(t.apply(&p.position), p.intensity))
            .collect(),
        timestamp: s.timestamp,
        pose: s.pose,
    }
}

/// Transform taking the previous sweep's sensor frame into the current one.
/// Identity unless both poses are known.
pub fn alignment(prev: &Sweep, cur: &Sweep) -> RigidTransform {
    match (&prev.pose, &cur.pose) {
        (Some(p), Some(c)) => c.inverse().compose(p),
        _ => RigidTransform::identity(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepStream {
    pub roi: RegionOfInterest,
    pub sweeps: Vec<Sweep>,
}

impl SweepStream {
    pub fn new(roi: RegionOfInterest, sweeps: Vec<Sweep>) -> Result<Self> {
        let s = SweepStream { roi, sweeps };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.roi.side > 0.0) {
            return Err(Error::InvalidArgument("ROI side must be positive".into()));
        }
        for w in self.sweeps.windows(2) {
            if w[1].timestamp <= w[0].timestamp {
                return Err(Error::InvalidArgument(format!(
                    "timestamps must increase: {} then {}",
                    w[0].timestamp, w[1].timestamp
                )));
            }
        }
        for s in &self.sweeps {
            if let Some(p) = &s.pose {
                if !p.is_valid() {
                    return Err(Error::InvalidArgument(format!(
                        "sweep {} has a non-rigid pose",
                        s.timestamp
                    )));
                }
            }
            if let Some(i) = s
                .points
                .iter()
                .position(|p| p.position.iter().any(|c| !c.is_finite()))
            {
                return Err(Error::InvalidArgument(format!(
                    "sweep {} point {i} is not finite",
                    s.timestamp
                )));
            }
        }
        Ok(())
    }

    pub fn point_count(&self) -> usize {
        self.sweeps.iter().map(Sweep::len).sum()
    }
}

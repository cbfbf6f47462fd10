//! Reconstruction quality and bitrate.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::coder::{Container, SectionKind};
use crate::error::{Error, Result};
use crate::neighbors::SpatialIndex;
use crate::pointcloud::{dist_sq, Sweep, SweepStream, Vec3};

/// Bits per point of a raw 16-byte record (4 x f32 as stored on disk).
pub const RAW_BITS_STORED: f64 = 128.0;
/// Bits per point of three f32 coordinates plus an 8-bit intensity.
pub const RAW_BITS_PACKED: f64 = 104.0;
/// Reported instead of infinity when the squared error is zero.
pub const PSNR_CAP_DB: f64 = 999.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    /// Geometric match radius, meters.
    pub tau_geo: f64,
    /// Allowed intensity difference.
    pub tau_int: u8,
    /// PSNR peak constant, meters.
    pub peak: f64,
    pub normal_k: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            tau_geo: 0.10,
            tau_int: 0,
            peak: 59.70,
            normal_k: 12,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_geo >= 0.0) || !(self.peak > 0.0) || self.normal_k == 0 {
            return Err(Error::InvalidArgument(format!(
                "invalid metric config {self:?}"
            )));
        }
        Ok(())
    }
}

/// F1 under existence matching: a reconstructed point is a true positive when some original
/// point lies within `tau_geo` and within `tau_int` in intensity.
pub fn f1(orig: &Sweep, recon: &Sweep, cfg: &MetricConfig) -> f64 {
    match (orig.is_empty(), recon.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let r = cfg.tau_geo;
    let tol = i16::from(cfg.tau_int);
    let close = |a: u8, b: u8| (i16::from(a) - i16::from(b)).abs() <= tol;
    let oi = SpatialIndex::new(orig.positions());
    let ri = SpatialIndex::new(recon.positions());
    let tp = recon
        .points
        .iter()
        .filter(|p| {
            oi.any_within(&p.position, r, |j| {
                close(p.intensity, orig.points[j].intensity)
            })
        })
        .count();
    let fn_ = orig
        .points
        .iter()
        .filter(|p| {
            !ri.any_within(&p.position, r, |j| {
                close(p.intensity, recon.points[j].intensity)
            })
        })
        .count();
    let fp = recon.len() - tp;
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

fn mean_nn_distance(from: &[Vec3], to: &SpatialIndex) -> f64 {
    let s: f64 = from
        .iter()
        .map(|p| to.nearest(p).expect("nonempty").dist_sq.sqrt())
        .sum();
    s / from.len() as f64
}

/// Symmetric point-to-point Chamfer distance: the larger of the two mean nearest-neighbor
/// distances.
pub fn chamfer_sym(orig: &Sweep, recon: &Sweep) -> Result<f64> {
    if orig.is_empty() || recon.is_empty() {
        return Err(Error::Undefined(
            "Chamfer distance of an empty cloud".into(),
        ));
    }
    let (a, b) = (orig.positions(), recon.positions());
    let (ia, ib) = (SpatialIndex::new(a.clone()), SpatialIndex::new(b.clone()));
    Ok(mean_nn_distance(&a, &ib).max(mean_nn_distance(&b, &ia)))
}

/// Eigen-decomposition of a symmetric 3x3 matrix by cyclic Jacobi rotations.
/// Returns eigenvalues ascending with matching unit eigenvectors (ties keep axis order).
pub fn symmetric_eigen3(m: [[f64; 3]; 3]) -> ([f64; 3], [Vec3; 3]) {
    let mut a = m;
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _ in 0..64 {
        let off = a[0][1].abs() + a[0][2].abs() + a[1][2].abs();
        if off == 0.0 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q] == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            // A <- J^T A J
            for k in 0..3 {
                let (akp, akq) = (a[k][p], a[k][q]);
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let (apk, aqk) = (a[p][k], a[q][k]);
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in &mut v {
                let (vp, vq) = (row[p], row[q]);
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[i][i].total_cmp(&a[j][j]).then(i.cmp(&j)));
    let vals = order.map(|i| a[i][i]);
    let vecs = order.map(|i| [v[0][i], v[1][i], v[2][i]]);
    (vals, vecs)
}

/// Normals by PCA over the `k` nearest neighbors (the point included). The normal is the
/// eigenvector of the smallest covariance eigenvalue, signed so its largest-magnitude
/// component is positive. The flag marks neighborhoods whose two smallest eigenvalues
/// coincide (the normal is then one arbitrary choice).
pub fn estimate_normals(points: &[Vec3], k: usize) -> Vec<(Vec3, bool)> {
    let index = SpatialIndex::new(points.to_vec());
    points
        .iter()
        .map(|p| {
            let nb = index.knn(p, k);
            let n = nb.len() as f64;
            let mut mean = [0.0; 3];
            for q in &nb {
                for a in 0..3 {
                    mean[a] += q.position[a];
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            let mut cov = [[0.0; 3]; 3];
            for q in &nb {
                let d = [
                    q.position[0] - mean[0],
                    q.position[1] - mean[1],
                    q.position[2] - mean[2],
                ];
                for i in 0..3 {
                    for j in 0..3 {
                        cov[i][j] += d[i] * d[j];
                    }
                }
            }
            let (vals, vecs) = symmetric_eigen3(cov);
            let mut nrm = vecs[0];
            let big = (0..3)
                .max_by(|&i, &j| nrm[i].abs().total_cmp(&nrm[j].abs()).then(j.cmp(&i)))
                .unwrap();
            if nrm[big] < 0.0 {
                nrm.iter_mut().for_each(|x| *x = -*x);
            }
            let scale = vals[2].abs().max(f64::MIN_POSITIVE);
            let degenerate = nb.len() < 3 || (vals[1] - vals[0]).abs() <= 1e-12 * scale;
            (nrm, degenerate)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsnrReport {
    pub db: f64,
    pub mse: f64,
    /// Original points whose normal came from a degenerate neighborhood.
    pub degenerate_normals: usize,
}

/// Point-to-plane PSNR. Normals are estimated on the original cloud. Each direction pairs a
/// point with its nearest neighbor in the other cloud and projects the difference on the
/// original-side normal; the larger mean square is used.
pub fn psnr_d2(orig: &Sweep, recon: &Sweep, cfg: &MetricConfig) -> Result<PsnrReport> {
    if orig.is_empty() || recon.is_empty() {
        return Err(Error::Undefined("PSNR of an empty cloud".into()));
    }
    let (a, b) = (orig.positions(), recon.positions());
    let normals = estimate_normals(&a, cfg.normal_k);
    let (ia, ib) = (SpatialIndex::new(a.clone()), SpatialIndex::new(b.clone()));
    let proj = |p: &Vec3, q: &Vec3, n: &Vec3| {
        let e = (p[0] - q[0]) * n[0] + (p[1] - q[1]) * n[1] + (p[2] - q[2]) * n[2];
        e * e
    };
    let mut mse_ab = 0.0;
    for (i, p) in a.iter().enumerate() {
        let j = ib.nearest(p).expect("nonempty").id;
        mse_ab += proj(p, &b[j], &normals[i].0);
    }
    mse_ab /= a.len() as f64;
    let mut mse_ba = 0.0;
    for q in &b {
        let i = ia.nearest(q).expect("nonempty").id;
        mse_ba += proj(q, &a[i], &normals[i].0);
    }
    mse_ba /= b.len() as f64;
    let mse = mse_ab.max(mse_ba);
    let db = if mse == 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (3.0 * cfg.peak * cfg.peak / mse).log10()).min(PSNR_CAP_DB)
    };
    Ok(PsnrReport {
        db,
        mse,
        degenerate_normals: normals.iter().filter(|n| n.1).count(),
    })
}

/// Largest nearest-neighbor distance over every sweep; sweeps with fewer than two points are
/// skipped and counted.
pub fn peak_constant(stream: &SweepStream) -> Result<(f64, usize)> {
    let mut r: Option<f64> = None;
    let mut skipped = 0;
    for s in &stream.sweeps {
        if s.len() < 2 {
            skipped += 1;
            continue;
        }
        let pts = s.positions();
        let idx = SpatialIndex::new(pts.clone());
        for (i, p) in pts.iter().enumerate() {
            let d = idx
                .knn(p, 2)
                .iter()
                .find(|n| n.id != i)
                .map_or(0.0, |n| n.dist_sq.sqrt());
            r = Some(r.map_or(d, |x: f64| x.max(d)));
        }
    }
    r.map(|v| (v, skipped))
        .ok_or_else(|| Error::Undefined("no sweep has two points".into()))
}

/// Brute-force nearest-neighbor distance, for callers checking the indexed versions.
pub fn brute_nn_distance(p: &Vec3, cloud: &[Vec3]) -> f64 {
    cloud
        .iter()
        .map(|q| dist_sq(p, q))
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Bitrate {
    pub total_bits: u64,
    pub intensity_bits: u64,
    pub occupancy_bits: u64,
    pub leaf_offset_bits: u64,
    pub points: u64,
}

impl Bitrate {
    pub fn bpp_total(&self) -> Result<f64> {
        self.per_point(self.total_bits)
    }

    /// Everything except the intensity section.
    pub fn bpp_spatial(&self) -> Result<f64> {
        self.per_point(self.total_bits - self.intensity_bits)
    }

    pub fn bpp_occupancy(&self) -> Result<f64> {
        self.per_point(self.occupancy_bits)
    }

    pub fn bpp_intensity(&self) -> Result<f64> {
        self.per_point(self.intensity_bits)
    }

    fn per_point(&self, bits: u64) -> Result<f64> {
        if self.points == 0 {
            return Err(Error::Undefined("bitrate of zero points".into()));
        }
        Ok(bits as f64 / self.points as f64)
    }

    pub fn add(&mut self, o: &Bitrate) {
        self.total_bits += o.total_bits;
        self.intensity_bits += o.intensity_bits;
        self.occupancy_bits += o.occupancy_bits;
        self.leaf_offset_bits += o.leaf_offset_bits;
        self.points += o.points;
    }
}

/// Per-frame accounting; frame payload includes framing and the meta section. Model weights
/// are not counted.
pub fn frame_bitrates(c: &Container) -> Result<Vec<Bitrate>> {
    c.frames
        .iter()
        .map(|f| {
            Ok(Bitrate {
                total_bits: 8 * f.encoded_len() as u64,
                intensity_bits: 8 * f.section(SectionKind::Intensity).len() as u64,
                occupancy_bits: 8 * f.section(SectionKind::Occupancy).len() as u64,
                leaf_offset_bits: 8 * f.section(SectionKind::LeafOffsets).len() as u64,
                points: f.meta()?.point_count,
            })
        })
        .collect()
}

pub fn bitrate(c: &Container) -> Result<Bitrate> {
    let mut b = Bitrate::default();
    for f in frame_bitrates(c)? {
        b.add(&f);
    }
    Ok(b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityRow {
    pub sweep: usize,
    pub depth: u32,
    pub bpp_total: f64,
    pub bpp_spatial: f64,
    pub f1: f64,
    pub chamfer: f64,
    pub psnr: f64,
}

pub const CSV_HEADER: &str = "sweep,depth,bpp_total,bpp_spatial,f1,chamfer,psnr";

pub fn quality_csv(rows: &[QualityRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.4}",
            r.sweep, r.depth, r.bpp_total, r.bpp_spatial, r.f1, r.chamfer, r.psnr
        );
    }
    s
}

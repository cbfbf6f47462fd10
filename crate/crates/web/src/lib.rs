//! Browser demo: quantize a synthetic sweep, trace a rate-distortion curve and probe the
//! leaf-offset bits. Every export returns a JSON string so the page needs no glue types.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use mslc::coder::CodecModels;
use mslc::compress::Deflate;
use mslc::entropy::{IntensityModel, IntensityVariant, ModelDims, OccupancyVariant, Schedule};
use mslc::harness::{rd_point, train_occupancy_model, RdRow};
use mslc::metrics::MetricConfig;
use mslc::octree::{build_octree, leaf_offset_compressibility_probe, quantize_point, quantized_sweep};
use mslc::pointcloud::{generate_synthetic_stream, SceneParams, SweepStream};

const SWEEPS: usize = 3;

fn stream(seed: u64) -> SweepStream {
    generate_synthetic_stream(seed, SWEEPS, &SceneParams::tiny())
}

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn json(v: &impl Serialize) -> Result<String, JsValue> {
    serde_json::to_string(v).map_err(js_err)
}

#[derive(Debug, Serialize)]
pub struct Quantized {
    pub depth: u32,
    pub points: usize,
    pub cells: usize,
    pub cell_size: f64,
    pub bound: f64,
    pub max_error: f64,
    /// Interleaved x, y in meters.
    pub original_xy: Vec<f32>,
    pub quantized_xy: Vec<f32>,
}

pub fn quantize_sweep(seed: u64, depth: u32) -> mslc::Result<Quantized> {
    let st = stream(seed);
    let s = &st.sweeps[0];
    let q = quantized_sweep(s, &st.roi, depth)?;
    let max_error = s
        .points
        .iter()
        .filter_map(|p| {
            quantize_point(&p.position, &st.roi, depth)
                .map(|c| max_axis_error(&p.position, &st.roi.cell_center(depth, c)))
        })
        .fold(0.0, f64::max);
    let xy = |pts: &[mslc::pointcloud::Point]| {
        pts.iter()
            .flat_map(|p| [p.position[0] as f32, p.position[1] as f32])
            .collect()
    };
    Ok(Quantized {
        depth,
        points: s.len(),
        cells: q.len(),
        cell_size: st.roi.cell_size(depth),
        bound: st.roi.quantization_bound(depth),
        max_error,
        original_xy: xy(&s.points),
        quantized_xy: xy(&q.points),
    })
}

fn max_axis_error(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Serialize)]
pub struct RdPoint {
    pub depth: u32,
    pub bpp_total: f64,
    pub bpp_spatial: f64,
    pub f1: f64,
    pub chamfer: f64,
    pub psnr: f64,
}

impl From<RdRow> for RdPoint {
    fn from(r: RdRow) -> Self {
        RdPoint {
            depth: r.depth,
            bpp_total: r.bpp_total,
            bpp_spatial: r.bpp_spatial,
            f1: r.f1,
            chamfer: r.chamfer,
            psnr: r.psnr,
        }
    }
}

/// Encodes stream `seed` at each depth with per-level histograms counted on two other streams
/// and raw intensities.
pub fn rd_points(seed: u64, depth_min: u32, depth_max: u32) -> mslc::Result<Vec<RdPoint>> {
    if depth_min > depth_max {
        return Err(mslc::Error::InvalidArgument(format!("depth range {depth_min}..={depth_max}")));
    }
    let test = [stream(seed)];
    let train = [stream(seed.wrapping_add(1)), stream(seed.wrapping_add(2))];
    let dims = ModelDims::compact();
    let intensity = IntensityModel::new(IntensityVariant::Passthrough, dims.clone(), 0);
    (depth_min..=depth_max)
        .map(|d| {
            let (occ, _) = train_occupancy_model(
                &train,
                d,
                OccupancyVariant::Histogram,
                &dims,
                &Schedule::default(),
                None,
            )?;
            let models = CodecModels::new(occ, intensity.clone());
            Ok(rd_point(&test, &models, &MetricConfig::default())?.0.into())
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct Probe {
    pub compressor: String,
    pub raw_bytes: usize,
    pub compressed_bytes: usize,
    pub ratio: f64,
}

pub fn probe(seed: u64, depth: u32) -> mslc::Result<Probe> {
    let st = stream(seed);
    let leaf = st
        .sweeps
        .iter()
        .map(|s| Ok(build_octree(s, &st.roi, depth)?.packed_offsets()))
        .collect::<mslc::Result<Vec<_>>>()?;
    let r = leaf_offset_compressibility_probe(&leaf, &Deflate);
    Ok(Probe {
        raw_bytes: r.total_raw(),
        compressed_bytes: r.total_compressed(),
        ratio: r.ratio(),
        compressor: r.compressor,
    })
}

#[wasm_bindgen]
pub fn quantize(seed: u32, depth: u32) -> Result<String, JsValue> {
    json(&quantize_sweep(u64::from(seed), depth).map_err(js_err)?)
}

#[wasm_bindgen]
pub fn rd_curve(seed: u32, depth_min: u32, depth_max: u32) -> Result<String, JsValue> {
    json(&rd_points(u64::from(seed), depth_min, depth_max).map_err(js_err)?)
}

#[wasm_bindgen]
pub fn probe_leaf_offsets(seed: u32, depth: u32) -> Result<String, JsValue> {
    json(&probe(u64::from(seed), depth).map_err(js_err)?)
}

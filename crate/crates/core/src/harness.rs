//! Training, rate-distortion and ablation runs shared by the CLI and the acceptance suite.

use std::fmt::Write as _;

use crate::coder::{decode_stream, encode_stream, CodecModels, Container};
use crate::compress::ByteCompressor;
use crate::entropy::{
    intensity_loss, intensity_samples, occupancy_loss, occupancy_samples, train_intensity,
    train_occupancy, IntensityModel, IntensityVariant, ModelDims, OccupancyModel, OccupancyVariant,
    Schedule, TrainReport,
};
use crate::error::{Error, Result};
use crate::metrics::{chamfer_sym, f1, psnr_d2, MetricConfig, QualityRow};
use crate::octree::{build_octree, quantized_sweep};
use crate::pointcloud::SweepStream;

fn original_points(streams: &[SweepStream]) -> usize {
    streams.iter().map(SweepStream::point_count).sum()
}

pub fn train_occupancy_model(
    streams: &[SweepStream],
    depth: u32,
    variant: OccupancyVariant,
    dims: &ModelDims,
    sched: &Schedule,
    warm_start: Option<&OccupancyModel>,
) -> Result<(OccupancyModel, TrainReport)> {
    let mut m = OccupancyModel::new(variant, depth, dims.clone(), sched.seed)?;
    if let Some(w) = warm_start {
        m.warm_start_from(w);
    }
    let samples = occupancy_samples(streams, depth)?;
    let r = train_occupancy(&mut m, &samples, sched)?;
    Ok((m, r))
}

pub fn train_intensity_model(
    streams: &[SweepStream],
    depth: u32,
    variant: IntensityVariant,
    dims: &ModelDims,
    sched: &Schedule,
) -> Result<(IntensityModel, TrainReport)> {
    let mut m = IntensityModel::new(variant, dims.clone(), sched.seed);
    let samples = intensity_samples(streams, depth)?;
    let r = train_intensity(&mut m, &samples, sched)?;
    Ok((m, r))
}

fn per_point(bits: f64, streams: &[SweepStream]) -> Result<f64> {
    match original_points(streams) {
        0 => Err(Error::Undefined("bitrate of zero points".into())),
        n => Ok(bits / n as f64),
    }
}

/// Occupancy cross-entropy on `streams`, in bits per original point.
pub fn heldout_occupancy_bpp(model: &OccupancyModel, streams: &[SweepStream]) -> Result<f64> {
    let nats: f64 = occupancy_samples(streams, model.depth)?
        .iter()
        .map(|s| occupancy_loss(model, s, 1.0, None))
        .sum();
    per_point(nats / std::f64::consts::LN_2, streams)
}

/// Intensity cross-entropy on `streams` quantized at `depth`, in bits per original point.
pub fn heldout_intensity_bpp(
    model: &IntensityModel,
    streams: &[SweepStream],
    depth: u32,
) -> Result<f64> {
    let nats: f64 = intensity_samples(streams, depth)?
        .iter()
        .map(|s| intensity_loss(model, s, 1.0, None))
        .sum();
    per_point(nats / std::f64::consts::LN_2, streams)
}

/// Each sweep's leaf intensities compressed independently with `c`.
pub fn baseline_intensity_bpp(
    c: &dyn ByteCompressor,
    streams: &[SweepStream],
    depth: u32,
) -> Result<f64> {
    let mut bits = 0usize;
    for st in streams {
        for s in &st.sweeps {
            let o = build_octree(s, &st.roi, depth)?;
            bits += 8 * c.compress(&o.intensities()).len();
        }
    }
    per_point(bits as f64, streams)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdRow {
    pub depth: u32,
    pub bpp_total: f64,
    pub bpp_spatial: f64,
    pub f1: f64,
    pub chamfer: f64,
    pub psnr: f64,
}

/// Encodes and decodes every stream, checks the round trip, and averages per-sweep quality.
pub fn rd_point(
    streams: &[SweepStream],
    models: &CodecModels,
    cfg: &MetricConfig,
) -> Result<(RdRow, Vec<QualityRow>, Vec<Container>)> {
    let depth = models.depth();
    let mut rows = Vec::new();
    let mut containers = Vec::new();
    let mut total = crate::metrics::Bitrate::default();
    let mut sweep_no = 0;
    for st in streams {
        let (c, _) = encode_stream(st, models)?;
        let back = decode_stream(&Container::from_bytes(&c.to_bytes())?, models)?;
        let per_frame = crate::metrics::frame_bitrates(&c)?;
        for ((orig, dec), br) in st.sweeps.iter().zip(&back.sweeps).zip(&per_frame) {
            if *dec != quantized_sweep(orig, &st.roi, depth)? {
                return Err(Error::Model(format!("sweep {sweep_no} did not round trip")));
            }
            total.add(br);
            if orig.is_empty() || dec.is_empty() {
                sweep_no += 1;
                continue;
            }
            rows.push(QualityRow {
                sweep: sweep_no,
                depth,
                bpp_total: br.bpp_total()?,
                bpp_spatial: br.bpp_spatial()?,
                f1: f1(orig, dec, cfg),
                chamfer: chamfer_sym(orig, dec)?,
                psnr: psnr_d2(orig, dec, cfg)?.db,
            });
            sweep_no += 1;
        }
        containers.push(c);
    }
    if rows.is_empty() {
        return Err(Error::Undefined("no nonempty sweeps to evaluate".into()));
    }
    let n = rows.len() as f64;
    let mean = |f: fn(&QualityRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let row = RdRow {
        depth,
        bpp_total: total.bpp_total()?,
        bpp_spatial: total.bpp_spatial()?,
        f1: mean(|r| r.f1),
        chamfer: mean(|r| r.chamfer),
        psnr: mean(|r| r.psnr),
    };
    Ok((row, rows, containers))
}

pub const RD_CSV_HEADER: &str = "depth,bpp_total,bpp_spatial,f1,chamfer,psnr";

pub fn rd_csv(rows: &[RdRow]) -> String {
    let mut s = format!("{RD_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{:.6},{:.6},{:.4}",
            r.depth, r.bpp_total, r.bpp_spatial, r.f1, r.chamfer, r.psnr
        );
    }
    s
}

/// Checks F1 and PSNR non-decreasing and Chamfer non-increasing over increasing depth.
pub fn rd_monotonicity_violations(rows: &[RdRow]) -> Vec<String> {
    let mut v = Vec::new();
    for w in rows.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if b.f1 < a.f1 {
            v.push(format!(
                "F1 drops from {} at D={} to {} at D={}",
                a.f1, a.depth, b.f1, b.depth
            ));
        }
        if b.psnr < a.psnr {
            v.push(format!(
                "PSNR drops from {} at D={} to {} at D={}",
                a.psnr, a.depth, b.psnr, b.depth
            ));
        }
        if b.chamfer > a.chamfer {
            v.push(format!(
                "Chamfer grows from {} at D={} to {} at D={}",
                a.chamfer, a.depth, b.chamfer, b.depth
            ));
        }
    }
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub depth: u32,
    pub model: String,
    pub bpp: f64,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("depth,model,bpp\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:.6}", r.depth, r.model, r.bpp);
    }
    s
}

/// Adjacent pairs of `ordered` (expected best first) that violate `a <= b * (1 + tol)`.
pub fn ordering_violations(ordered: &[(&str, f64)], tol: f64) -> Vec<String> {
    ordered
        .windows(2)
        .filter(|w| w[0].1 > w[1].1 * (1.0 + tol))
        .map(|w| {
            format!(
                "{} = {:.4} exceeds {} = {:.4}",
                w[0].0, w[0].1, w[1].0, w[1].1
            )
        })
        .collect()
}

/// One line chart per entry of `panels`, stacked vertically.
pub fn svg_plot(title: &str, panels: &[(&str, &str, Vec<(String, Vec<(f64, f64)>)>)]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 260.0;
    const M: f64 = 50.0;
    const COLORS: [&str; 6] = [
        "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
    ];
    let total_h = 30.0 + H * panels.len() as f64;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{total_h}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        W / 2.0,
        escape(title)
    );
    for (p, (xl, yl, series)) in panels.iter().enumerate() {
        let top = 30.0 + H * p as f64;
        let pts: Vec<(f64, f64)> = series.iter().flat_map(|(_, v)| v.iter().copied()).collect();
        if pts.is_empty() {
            continue;
        }
        let range = |f: fn(&(f64, f64)) -> f64| {
            let lo = pts.iter().map(f).fold(f64::INFINITY, f64::min);
            let hi = pts.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                (lo, hi)
            } else {
                (lo - 0.5, hi + 0.5)
            }
        };
        let ((x0, x1), (y0, y1)) = (range(|p| p.0), range(|p| p.1));
        let sx = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
        let sy = |y: f64| top + H - M + 10.0 - (y - y0) / (y1 - y0) * (H - 2.0 * M);
        let (bx, by) = (M, top + H - M + 10.0);
        let _ = writeln!(
            s,
            "<line x1=\"{bx}\" y1=\"{by}\" x2=\"{}\" y2=\"{by}\" stroke=\"black\"/>\
             <line x1=\"{bx}\" y1=\"{by}\" x2=\"{bx}\" y2=\"{}\" stroke=\"black\"/>",
            W - M,
            top + 20.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\
             <text x=\"12\" y=\"{}\" transform=\"rotate(-90 12 {})\" text-anchor=\"middle\">{}</text>",
            W / 2.0,
            by + 30.0,
            escape(xl),
            top + H / 2.0,
            top + H / 2.0,
            escape(yl)
        );
        for (x, anchor) in [(x0, "start"), (x1, "end")] {
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"{anchor}\">{}</text>",
                sx(x),
                by + 14.0,
                fmt_tick(x)
            );
        }
        for y in [y0, y1] {
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
                M - 4.0,
                sy(y) + 4.0,
                fmt_tick(y)
            );
        }
        for (k, (name, v)) in series.iter().enumerate() {
            let c = COLORS[k % COLORS.len()];
            let path: Vec<String> = v
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            let _ = writeln!(
                s,
                "<polyline fill=\"none\" stroke=\"{c}\" stroke-width=\"2\" points=\"{}\"/>",
                path.join(" ")
            );
            for &(x, y) in v {
                let _ = writeln!(
                    s,
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{c}\"/>",
                    sx(x),
                    sy(y)
                );
            }
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{}\" fill=\"{c}\" text-anchor=\"end\">{}</text>",
                W - M,
                top + 20.0 + 14.0 * k as f64,
                escape(name)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.trunc() {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Bitrate against F1, Chamfer and PSNR.
pub fn rd_svg(rows: &[RdRow], label: &str) -> String {
    let series = |f: fn(&RdRow) -> f64| {
        vec![(
            label.to_string(),
            rows.iter().map(|r| (r.bpp_total, f(r))).collect(),
        )]
    };
    svg_plot(
        "Rate-distortion",
        &[
            ("bits per point", "F1", series(|r| r.f1)),
            ("bits per point", "Chamfer (m)", series(|r| r.chamfer)),
            ("bits per point", "PSNR (dB)", series(|r| r.psnr.min(150.0))),
        ],
    )
}

//! Sweep and stream encoding.
//!
//! The encoder always conditions on the decoder's reconstruction of the previous sweep, so
//! both sides build identical contexts.

use sha2::{Digest, Sha256};

use super::container::{Container, Frame, FrameMeta, SectionKind};
use super::{quantize_probs, QuantizedCdf, RangeDecoder, RangeEncoder};
use crate::entropy::{IntensityModel, OccupancyModel, SweepContext};
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::octree::{build_octree, pack_offsets, unpack_offsets, ParsedOctree};
use crate::pointcloud::{Point, RegionOfInterest, Sweep, SweepStream};

#[derive(Debug, Clone, PartialEq)]
pub struct CodecModels {
    pub occupancy: OccupancyModel,
    pub intensity: IntensityModel,
}

impl CodecModels {
    pub fn new(occupancy: OccupancyModel, intensity: IntensityModel) -> Self {
        CodecModels {
            occupancy,
            intensity,
        }
    }

    pub fn depth(&self) -> u32 {
        self.occupancy.depth
    }

    /// First 8 bytes (little endian) of SHA-256 over both serialized checkpoints.
    pub fn hash(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(self.occupancy.to_checkpoint().to_bytes());
        h.update(self.intensity.to_checkpoint().to_bytes());
        u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSweep {
    pub frame: Frame,
    /// What the decoder will reconstruct.
    pub decoded: Sweep,
    /// Ideal code length under the quantized distributions, in bits.
    pub occupancy_model_bits: f64,
    pub intensity_model_bits: f64,
}

fn quantize_rows(p: &Matrix) -> Result<Vec<QuantizedCdf>> {
    (0..p.rows()).map(|r| quantize_probs(p.row(r))).collect()
}

pub fn encode_sweep(
    sweep: &Sweep,
    prev_decoded: Option<&Sweep>,
    models: &CodecModels,
    roi: &RegionOfInterest,
) -> Result<EncodedSweep> {
    let depth = models.depth();
    let ctx = SweepContext::new(prev_decoded, sweep, roi, depth)?;
    let octree = build_octree(sweep, roi, depth)?;
    let tree = crate::octree::parse_occupancy_stream(&octree.occupancy, depth)?;

    let mut session = models.occupancy.session(&ctx.prev_tree, roi);
    let mut enc = RangeEncoder::new();
    let mut occupancy_model_bits = 0.0;
    for l in 0..tree.levels() {
        let cdfs = quantize_rows(&session.level_probs(&tree, l))?;
        for (cdf, node) in cdfs.iter().zip(&tree.nodes[tree.level_range(l)]) {
            enc.encode(cdf, node.occupancy as usize);
            occupancy_model_bits += cdf.cost_bits(node.occupancy as usize);
        }
    }
    let occupancy = enc.finish();

    let cells = tree.leaf_cells(&octree.leaves.iter().map(|l| l.offset).collect::<Vec<_>>())?;
    let decoded_points: Vec<Point> = cells
        .iter()
        .zip(&octree.leaves)
        .map(|(c, l)| Point::new(roi.cell_center(depth, *c), l.intensity))
        .collect();
    let intensities = octree.intensities();
    let (intensity, intensity_model_bits) = if models.intensity.k() == 0 {
        (intensities.clone(), 8.0 * intensities.len() as f64)
    } else {
        let queries: Vec<_> = decoded_points.iter().map(|p| p.position).collect();
        let cdfs = quantize_rows(&models.intensity.probs(&ctx.intensity, &queries))?;
        let mut enc = RangeEncoder::new();
        let mut bits = 0.0;
        for (cdf, &b) in cdfs.iter().zip(&intensities) {
            enc.encode(cdf, b as usize);
            bits += cdf.cost_bits(b as usize);
        }
        (enc.finish(), bits)
    };

    let meta = FrameMeta {
        timestamp: sweep.timestamp,
        pose: sweep.pose,
        point_count: sweep.len() as u64,
    };
    let mut decoded = Sweep::new(decoded_points, sweep.timestamp);
    decoded.pose = sweep.pose;
    Ok(EncodedSweep {
        frame: Frame {
            sections: vec![
                occupancy,
                pack_offsets(&octree.leaves, depth),
                intensity,
                meta.to_bytes(),
            ],
        },
        decoded,
        occupancy_model_bits,
        intensity_model_bits,
    })
}

pub fn decode_sweep(
    frame: &Frame,
    prev_decoded: Option<&Sweep>,
    models: &CodecModels,
    roi: &RegionOfInterest,
) -> Result<Sweep> {
    let depth = models.depth();
    let meta = frame.meta()?;
    // Only the pose and timestamp of the current sweep are needed to align the previous one.
    let mut header = Sweep::new(Vec::new(), meta.timestamp);
    header.pose = meta.pose;
    let ctx = SweepContext::new(prev_decoded, &header, roi, depth)?;

    let occ = frame.section(SectionKind::Occupancy);
    let mut tree = if occ.is_empty() {
        ParsedOctree::empty(depth)
    } else {
        ParsedOctree::with_root(depth)
    };
    let mut session = models.occupancy.session(&ctx.prev_tree, roi);
    let mut dec = RangeDecoder::new(occ);
    let mut level = 0;
    while !tree.is_complete() {
        let cdfs = quantize_rows(&session.level_probs(&tree, level))?;
        let bytes = cdfs
            .iter()
            .map(|c| dec.decode(c).map(|s| s as u8))
            .collect::<Result<Vec<u8>>>()?;
        tree.set_level_bytes(&bytes)?;
        level += 1;
    }
    dec.finish()?;

    let levels: Vec<u8> = tree.leaves.iter().map(|l| l.level).collect();
    let offsets = unpack_offsets(frame.section(SectionKind::LeafOffsets), &levels, depth)?;
    let cells = tree.leaf_cells(&offsets)?;
    let positions: Vec<_> = cells.iter().map(|c| roi.cell_center(depth, *c)).collect();

    let section = frame.section(SectionKind::Intensity);
    let intensities = if models.intensity.k() == 0 {
        if section.len() != positions.len() {
            return Err(Error::corruption(
                section.len().min(positions.len()),
                format!(
                    "{} raw intensities for {} points",
                    section.len(),
                    positions.len()
                ),
            ));
        }
        section.to_vec()
    } else {
        let cdfs = quantize_rows(&models.intensity.probs(&ctx.intensity, &positions))?;
        let mut dec = RangeDecoder::new(section);
        let v = cdfs
            .iter()
            .map(|c| dec.decode(c).map(|s| s as u8))
            .collect::<Result<Vec<u8>>>()?;
        dec.finish()?;
        v
    };

    let mut out = Sweep::new(
        positions
            .into_iter()
            .zip(intensities)
            .map(|(p, i)| Point::new(p, i))
            .collect(),
        meta.timestamp,
    );
    out.pose = meta.pose;
    Ok(out)
}

/// Encodes every sweep; returns the container and per-sweep encoder results.
pub fn encode_stream(
    stream: &SweepStream,
    models: &CodecModels,
) -> Result<(Container, Vec<EncodedSweep>)> {
    let mut frames = Vec::with_capacity(stream.sweeps.len());
    let mut encoded: Vec<EncodedSweep> = Vec::with_capacity(stream.sweeps.len());
    for s in &stream.sweeps {
        let prev = encoded.last().map(|e| &e.decoded);
        let e = encode_sweep(s, prev, models, &stream.roi)?;
        frames.push(e.frame.clone());
        encoded.push(e);
    }
    Ok((
        Container {
            depth: models.depth(),
            roi: stream.roi,
            model_hash: models.hash(),
            frames,
        },
        encoded,
    ))
}

pub fn decode_stream(c: &Container, models: &CodecModels) -> Result<SweepStream> {
    if c.depth != models.depth() {
        return Err(Error::Model(format!(
            "container depth {} but model depth {}",
            c.depth,
            models.depth()
        )));
    }
    let hash = models.hash();
    if c.model_hash != hash {
        return Err(Error::Model(format!(
            "container model hash {:016x} does not match {hash:016x}",
            c.model_hash
        )));
    }
    let mut sweeps: Vec<Sweep> = Vec::with_capacity(c.frames.len());
    for f in &c.frames {
        let s = decode_sweep(f, sweeps.last(), models, &c.roi)?;
        sweeps.push(s);
    }
    Ok(SweepStream { roi: c.roi, sweeps })
}

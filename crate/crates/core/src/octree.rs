//! Octree quantization and breadth-first serialization.
//!
//! Every node above the leaves carries one occupancy byte; bit `o` is set when child octant `o`
//! is occupied, with octant index `4*x + 2*y + z` (x is the high bit, "high half" sets the bit).
//! A node at level `1..=D-2` that holds exactly one depth-`D` cell is terminated early: it is
//! written as the byte `0x00` and becomes a leaf storing `3*(D-level)` offset bits, one bit per
//! axis per remaining level. Nodes at level `D` are always leaves with no offset bits. With this
//! rule the occupancy stream alone determines the tree shape, so it is self-delimiting given `D`.
//!
//! Leaves are listed in breadth-first encounter order: by level, and within a level in octant
//! (Morton) order.

use std::collections::HashMap;

use crate::compress::ByteCompressor;
use crate::error::{Error, Result};
use crate::neighbors::SpatialIndex;
use crate::pointcloud::{Point, RegionOfInterest, Sweep};

pub const MAX_DEPTH: u32 = 16;

/// Early termination is allowed at this level.
#[inline]
pub fn marker_allowed(level: u32, depth: u32) -> bool {
    level >= 1 && level + 2 <= depth
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LeafRecord {
    pub level: u8,
    /// Residual path from the leaf's cell to its depth-`D` cell, `3*(D-level)` bits,
    /// coarse level first, x then y then z within a level.
    pub offset: u64,
    pub intensity: u8,
}

impl LeafRecord {
    pub fn offset_bits(&self, depth: u32) -> u32 {
        3 * (depth - u32::from(self.level))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SerializedOctree {
    pub depth: u32,
    pub occupancy: Vec<u8>,
    pub leaves: Vec<LeafRecord>,
}

impl SerializedOctree {
    pub fn leaf_offset_bits(&self) -> u64 {
        self.leaves
            .iter()
            .map(|l| u64::from(l.offset_bits(self.depth)))
            .sum()
    }

    /// Offset bits packed MSB-first into a shared buffer, zero-padded to a byte.
    pub fn packed_offsets(&self) -> Vec<u8> {
        pack_offsets(&self.leaves, self.depth)
    }

    pub fn intensities(&self) -> Vec<u8> {
        self.leaves.iter().map(|l| l.intensity).collect()
    }

    /// Raw leaf stream: packed offsets followed by one intensity byte per leaf.
    pub fn leaf_stream(&self) -> Vec<u8> {
        let mut out = self.packed_offsets();
        out.extend(self.intensities());
        out
    }
}

pub fn check_depth(depth: u32) -> Result<()> {
    if !(1..=MAX_DEPTH).contains(&depth) {
        return Err(Error::InvalidArgument(format!(
            "octree depth {depth} outside 1..={MAX_DEPTH}"
        )));
    }
    Ok(())
}

/// Depth-`depth` cell of `p`, or `None` outside the ROI. Points on the max face land in the
/// last cell.
pub fn quantize_point(p: &[f64; 3], roi: &RegionOfInterest, depth: u32) -> Option<[u32; 3]> {
    if !roi.contains(p) {
        return None;
    }
    let corner = roi.corner();
    let n = 1u64 << depth;
    let mut cell = [0u32; 3];
    for i in 0..3 {
        let f = ((p[i] - corner[i]) / roi.side * n as f64).floor();
        cell[i] = (f.max(0.0) as u64).min(n - 1) as u32;
    }
    Some(cell)
}

/// Interleaves cell bits, coarse level first, `x y z` within a level.
pub fn morton(cell: [u32; 3], depth: u32) -> u64 {
    let mut code = 0u64;
    for b in (0..depth).rev() {
        for c in cell {
            code = (code << 1) | u64::from((c >> b) & 1);
        }
    }
    code
}

pub fn demorton(code: u64, depth: u32) -> [u32; 3] {
    let mut cell = [0u32; 3];
    for b in (0..depth).rev() {
        let triple = (code >> (3 * b)) & 7;
        cell[0] = (cell[0] << 1) | ((triple >> 2) & 1) as u32;
        cell[1] = (cell[1] << 1) | ((triple >> 1) & 1) as u32;
        cell[2] = (cell[2] << 1) | (triple & 1) as u32;
    }
    cell
}

pub fn build_octree(s: &Sweep, roi: &RegionOfInterest, depth: u32) -> Result<SerializedOctree> {
    check_depth(depth)?;
    let mut codes: Vec<u64> = s
        .points
        .iter()
        .filter_map(|p| quantize_point(&p.position, roi, depth))
        .map(|c| morton(c, depth))
        .collect();
    codes.sort_unstable();
    codes.dedup();
    if codes.is_empty() {
        return Ok(SerializedOctree {
            depth,
            occupancy: Vec::new(),
            leaves: Vec::new(),
        });
    }

    let index = SpatialIndex::new(s.positions());
    let intensity_of = |code: u64| {
        let center = roi.cell_center(depth, demorton(code, depth));
        let nn = index.nearest(&center).expect("non-empty sweep");
        s.points[nn.id].intensity
    };

    let mut occupancy = Vec::new();
    let mut leaves = Vec::new();
    let mut frontier = vec![(0usize, codes.len())];
    for level in 0..depth {
        let shift = 3 * (depth - level - 1);
        let mut next = Vec::new();
        for &(a, b) in &frontier {
            if b - a == 1 && marker_allowed(level, depth) {
                occupancy.push(0);
                let bits = 3 * (depth - level);
                leaves.push(LeafRecord {
                    level: level as u8,
                    offset: codes[a] & ((1u64 << bits) - 1),
                    intensity: intensity_of(codes[a]),
                });
                continue;
            }
            let mut byte = 0u8;
            let mut start = a;
            while start < b {
                let oct = (codes[start] >> shift) & 7;
                let mut end = start + 1;
                while end < b && (codes[end] >> shift) & 7 == oct {
                    end += 1;
                }
                byte |= 1 << oct;
                if level + 1 == depth {
                    debug_assert_eq!(end - start, 1);
                    leaves.push(LeafRecord {
                        level: depth as u8,
                        offset: 0,
                        intensity: intensity_of(codes[start]),
                    });
                } else {
                    next.push((start, end));
                }
                start = end;
            }
            occupancy.push(byte);
        }
        frontier = next;
    }
    Ok(SerializedOctree {
        depth,
        occupancy,
        leaves,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OctreeNode {
    pub level: u8,
    pub cell: [u32; 3],
    pub parent: Option<u32>,
    /// Octant index relative to the parent (0 at the root).
    pub octant: u8,
    /// Occupancy byte; `0` marks an early-terminated leaf.
    pub occupancy: u8,
    /// Child nodes (those that carry bytes) are `first_child..first_child + child_count`.
    pub first_child: u32,
    pub child_count: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LeafSlot {
    pub level: u8,
    pub cell: [u32; 3],
}

/// Tree structure recovered from an occupancy stream, grown one level at a time.
///
/// The encoder and decoder both build it through [`ParsedOctree::set_level_bytes`], so node
/// order and indices are identical on both sides.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedOctree {
    pub depth: u32,
    pub nodes: Vec<OctreeNode>,
    /// Nodes at level `l` are `level_starts[l]..level_starts[l + 1]`.
    pub level_starts: Vec<usize>,
    pub leaves: Vec<LeafSlot>,
    bytes_consumed: usize,
}

impl ParsedOctree {
    pub fn empty(depth: u32) -> Self {
        ParsedOctree {
            depth,
            nodes: Vec::new(),
            level_starts: Vec::new(),
            leaves: Vec::new(),
            bytes_consumed: 0,
        }
    }

    /// A tree whose root byte is still unknown.
    pub fn with_root(depth: u32) -> Self {
        ParsedOctree {
            depth,
            nodes: vec![OctreeNode {
                level: 0,
                cell: [0; 3],
                parent: None,
                octant: 0,
                occupancy: 0,
                first_child: 0,
                child_count: 0,
            }],
            level_starts: vec![0, 1],
            leaves: Vec::new(),
            bytes_consumed: 0,
        }
    }

    /// Number of levels that have nodes.
    pub fn levels(&self) -> usize {
        self.level_starts.len().saturating_sub(1)
    }

    pub fn level_range(&self, level: usize) -> std::ops::Range<usize> {
        self.level_starts[level]..self.level_starts[level + 1]
    }

    /// Nodes still waiting for their bytes.
    pub fn frontier(&self) -> std::ops::Range<usize> {
        if self.nodes.is_empty() || self.bytes_consumed == self.nodes.len() {
            return self.nodes.len()..self.nodes.len();
        }
        self.level_range(self.levels() - 1)
    }

    pub fn is_complete(&self) -> bool {
        self.frontier().is_empty()
    }

    /// Occupancy bytes of all nodes, in breadth-first order.
    pub fn occupancy(&self) -> Vec<u8> {
        self.nodes[..self.bytes_consumed]
            .iter()
            .map(|n| n.occupancy)
            .collect()
    }

    /// Assigns bytes to the frontier and opens the next level.
    pub fn set_level_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        let frontier = self.frontier();
        if bytes.len() != frontier.len() {
            return Err(Error::corruption(
                self.bytes_consumed + bytes.len().min(frontier.len()),
                format!("level needs {} bytes, got {}", frontier.len(), bytes.len()),
            ));
        }
        let depth = self.depth;
        let mut next_level = Vec::new();
        let mut new_leaves = Vec::new();
        let next_base = self.nodes.len();
        for (k, (i, &byte)) in frontier.clone().zip(bytes).enumerate() {
            let node = self.nodes[i];
            let level = u32::from(node.level);
            if byte == 0 {
                if !marker_allowed(level, depth) {
                    return Err(Error::corruption(
                        self.bytes_consumed + k,
                        format!("empty occupancy at level {level} with depth {depth}"),
                    ));
                }
                self.nodes[i].occupancy = 0;
                new_leaves.push(LeafSlot {
                    level: node.level,
                    cell: node.cell,
                });
                continue;
            }
            let first = next_base + next_level.len();
            let mut count = 0u8;
            for oct in 0..8u8 {
                if byte & (1 << oct) == 0 {
                    continue;
                }
                let cell = [
                    node.cell[0] * 2 + u32::from((oct >> 2) & 1),
                    node.cell[1] * 2 + u32::from((oct >> 1) & 1),
                    node.cell[2] * 2 + u32::from(oct & 1),
                ];
                if level + 1 == depth {
                    new_leaves.push(LeafSlot {
                        level: depth as u8,
                        cell,
                    });
                } else {
                    next_level.push(OctreeNode {
                        level: node.level + 1,
                        cell,
                        parent: Some(i as u32),
                        octant: oct,
                        occupancy: 0,
                        first_child: 0,
                        child_count: 0,
                    });
                    count += 1;
                }
            }
            let n = &mut self.nodes[i];
            n.occupancy = byte;
            n.first_child = first as u32;
            n.child_count = count;
        }
        self.bytes_consumed += bytes.len();
        self.leaves.extend(new_leaves);
        if !next_level.is_empty() {
            self.nodes.extend(next_level);
            self.level_starts.push(self.nodes.len());
        }
        Ok(())
    }

    /// Maps `(level, cell)` to node index.
    pub fn cell_lookup(&self) -> HashMap<(u8, [u32; 3]), u32> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| ((n.level, n.cell), i as u32))
            .collect()
    }

    /// Depth-`D` cells of all leaves given their offsets, in leaf order.
    pub fn leaf_cells(&self, offsets: &[u64]) -> Result<Vec<[u32; 3]>> {
        if offsets.len() != self.leaves.len() {
            return Err(Error::corruption(
                0,
                format!("{} leaves but {} offsets", self.leaves.len(), offsets.len()),
            ));
        }
        Ok(self
            .leaves
            .iter()
            .zip(offsets)
            .map(|(l, &off)| {
                let rem = self.depth - u32::from(l.level);
                let low = demorton(off, rem);
                [
                    (l.cell[0] << rem) | low[0],
                    (l.cell[1] << rem) | low[1],
                    (l.cell[2] << rem) | low[2],
                ]
            })
            .collect())
    }
}

pub fn parse_occupancy_stream(bytes: &[u8], depth: u32) -> Result<ParsedOctree> {
    check_depth(depth)?;
    if bytes.is_empty() {
        return Ok(ParsedOctree::empty(depth));
    }
    let mut tree = ParsedOctree::with_root(depth);
    let mut pos = 0;
    while !tree.is_complete() {
        let n = tree.frontier().len();
        if pos + n > bytes.len() {
            return Err(Error::corruption(
                bytes.len(),
                format!(
                    "stream exhausted in level {}: needs {n} bytes, {} left",
                    tree.levels() - 1,
                    bytes.len() - pos
                ),
            ));
        }
        tree.set_level_bytes(&bytes[pos..pos + n])?;
        pos += n;
    }
    if pos != bytes.len() {
        return Err(Error::corruption(
            pos,
            "trailing bytes after complete octree",
        ));
    }
    Ok(tree)
}

pub fn reconstruct(o: &SerializedOctree, roi: &RegionOfInterest) -> Result<Sweep> {
    let tree = parse_occupancy_stream(&o.occupancy, o.depth)?;
    if tree.leaves.len() != o.leaves.len() {
        return Err(Error::corruption(
            o.occupancy.len(),
            format!(
                "occupancy implies {} leaves, leaf stream has {}",
                tree.leaves.len(),
                o.leaves.len()
            ),
        ));
    }
    for (i, (slot, rec)) in tree.leaves.iter().zip(&o.leaves).enumerate() {
        if slot.level != rec.level {
            return Err(Error::corruption(
                i,
                format!("leaf {i} at level {} recorded as {}", slot.level, rec.level),
            ));
        }
    }
    let offsets: Vec<u64> = o.leaves.iter().map(|l| l.offset).collect();
    let cells = tree.leaf_cells(&offsets)?;
    Ok(Sweep::new(
        cells
            .iter()
            .zip(&o.leaves)
            .map(|(c, l)| Point::new(roi.cell_center(o.depth, *c), l.intensity))
            .collect(),
        0,
    ))
}

/// What a decoder reproduces for `s` at `depth`: leaf centers with merged intensities, plus
/// the sweep's timestamp and pose.
pub fn quantized_sweep(s: &Sweep, roi: &RegionOfInterest, depth: u32) -> Result<Sweep> {
    let mut q = reconstruct(&build_octree(s, roi, depth)?, roi)?;
    q.timestamp = s.timestamp;
    q.pose = s.pose;
    Ok(q)
}

pub fn pack_offsets(leaves: &[LeafRecord], depth: u32) -> Vec<u8> {
    let mut w = BitWriter::default();
    for l in leaves {
        w.put(l.offset, l.offset_bits(depth));
    }
    w.finish()
}

/// Reads one offset per leaf level from an MSB-first bit buffer.
pub fn unpack_offsets(bytes: &[u8], leaf_levels: &[u8], depth: u32) -> Result<Vec<u64>> {
    let total: u64 = leaf_levels
        .iter()
        .map(|&l| u64::from(3 * (depth - u32::from(l))))
        .sum();
    let need = total.div_ceil(8) as usize;
    if bytes.len() != need {
        return Err(Error::corruption(
            bytes.len().min(need),
            format!(
                "leaf offsets need {need} bytes, section has {}",
                bytes.len()
            ),
        ));
    }
    let mut r = BitReader { bytes, pos: 0 };
    Ok(leaf_levels
        .iter()
        .map(|&l| r.get(3 * (depth - u32::from(l))))
        .collect())
}

#[derive(Default)]
struct BitWriter {
    out: Vec<u8>,
    acc: u64,
    nbits: u32,
}

impl BitWriter {
    fn put(&mut self, value: u64, bits: u32) {
        for b in (0..bits).rev() {
            self.acc = (self.acc << 1) | ((value >> b) & 1);
            self.nbits += 1;
            if self.nbits == 8 {
                self.out.push(self.acc as u8);
                self.acc = 0;
                self.nbits = 0;
            }
        }
    }

    fn finish(mut self) -> Vec<u8> {
        if self.nbits > 0 {
            self.out.push((self.acc << (8 - self.nbits)) as u8);
        }
        self.out
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u64,
}

impl BitReader<'_> {
    fn get(&mut self, bits: u32) -> u64 {
        let mut v = 0u64;
        for _ in 0..bits {
            let byte = self.bytes[(self.pos / 8) as usize];
            let bit = (byte >> (7 - (self.pos % 8))) & 1;
            v = (v << 1) | u64::from(bit);
            self.pos += 1;
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbeRow {
    pub raw_bytes: usize,
    pub compressed_bytes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub compressor: String,
    pub rows: Vec<ProbeRow>,
}

impl ProbeReport {
    pub fn total_raw(&self) -> usize {
        self.rows.iter().map(|r| r.raw_bytes).sum()
    }

    pub fn total_compressed(&self) -> usize {
        self.rows.iter().map(|r| r.compressed_bytes).sum()
    }

    /// Compressed over raw size, aggregated over sweeps.
    pub fn ratio(&self) -> f64 {
        self.total_compressed() as f64 / self.total_raw().max(1) as f64
    }
}

/// Raw versus compressed size of each sweep's packed leaf-offset stream.
pub fn leaf_offset_compressibility_probe(
    streams: &[Vec<u8>],
    compressor: &dyn ByteCompressor,
) -> ProbeReport {
    ProbeReport {
        compressor: compressor.name().to_string(),
        rows: streams
            .iter()
            .map(|s| ProbeRow {
                raw_bytes: s.len(),
                compressed_bytes: compressor.compress(s).len(),
            })
            .collect(),
    }
}

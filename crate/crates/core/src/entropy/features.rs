//! Per-node context features.
//!
//! Layout (25 values): level/16, (D-level)/16, cell center (normalized by the ROI side, 3),
//! octant/7, parent byte (scalar/255 then 8 bits), then a presence flag and a second byte
//! (scalar and 8 bits). For current-sweep nodes the second byte is the previous sweep's
//! corresponding byte; for previous-sweep nodes it is the node's own byte.

use crate::octree::ParsedOctree;
use crate::pointcloud::RegionOfInterest;

pub const CONTEXT_DIM: usize = 25;

fn put_byte(out: &mut [f64], b: u8) {
    out[0] = f64::from(b) / 255.0;
    for k in 0..8 {
        out[1 + k] = f64::from((b >> k) & 1);
    }
}

pub fn node_context(
    tree: &ParsedOctree,
    node: usize,
    roi: &RegionOfInterest,
    extra: Option<u8>,
    out: &mut [f64],
) {
    let n = &tree.nodes[node];
    let level = u32::from(n.level);
    out[0] = f64::from(level) / 16.0;
    out[1] = f64::from(tree.depth - level) / 16.0;
    let c = roi.cell_center(level, n.cell);
    for i in 0..3 {
        out[2 + i] = (c[i] - roi.center[i]) / roi.side;
    }
    out[5] = f64::from(n.octant) / 7.0;
    let parent = n.parent.map_or(0, |p| tree.nodes[p as usize].occupancy);
    put_byte(&mut out[6..15], parent);
    match extra {
        Some(b) => {
            out[15] = 1.0;
            put_byte(&mut out[16..25], b);
        }
        None => out[15..25].iter_mut().for_each(|v| *v = 0.0),
    }
}

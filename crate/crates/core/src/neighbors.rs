//! Exact, deterministic k-nearest-neighbor search.
//!
//! Results are ordered by `(squared distance, insertion index)`. Encoder and decoder build
//! identical indices from identical inputs, so both sides see the same neighborhoods.

use std::collections::HashMap;

use crate::error::Result;
use crate::octree::{build_octree, parse_occupancy_stream, ParsedOctree};
use crate::pointcloud::{dist_sq, transform_sweep, RegionOfInterest, RigidTransform, Sweep, Vec3};

const BUCKET: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Insertion index of the point.
    pub id: usize,
    pub position: Vec3,
    pub dist_sq: f64,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Static k-d tree over 3-D points.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<Vec3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl SpatialIndex {
    pub fn new(points: Vec<Vec3>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        if !points.is_empty() {
            build(&points, &mut order, 0, points.len(), &mut nodes);
        }
        SpatialIndex {
            points,
            order,
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn position(&self, id: usize) -> Vec3 {
        self.points[id]
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// The `min(k, len)` nearest points to `q`, nearest first, ties by lower id.
    pub fn knn(&self, q: &Vec3, k: usize) -> Vec<Neighbor> {
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        if k > 0 && !self.nodes.is_empty() {
            self.search(0, q, k, &mut best);
        }
        best.into_iter()
            .map(|(d, id)| Neighbor {
                id,
                position: self.points[id],
                dist_sq: d,
            })
            .collect()
    }

    pub fn nearest(&self, q: &Vec3) -> Option<Neighbor> {
        self.knn(q, 1).into_iter().next()
    }

    /// Whether some point within `radius` of `q` (inclusive) satisfies `accept`.
    pub fn any_within(&self, q: &Vec3, radius: f64, accept: impl Fn(usize) -> bool) -> bool {
        if self.nodes.is_empty() || radius < 0.0 {
            return false;
        }
        let r2 = radius * radius;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            match &self.nodes[n] {
                Node::Leaf { start, end } => {
                    for &id in &self.order[*start..*end] {
                        if dist_sq(&self.points[id], q) <= r2 && accept(id) {
                            return true;
                        }
                    }
                }
                Node::Split {
                    dim,
                    value,
                    left,
                    right,
                } => {
                    let diff = q[*dim] - value;
                    if diff < 0.0 {
                        stack.push(*left);
                        if diff * diff <= r2 {
                            stack.push(*right);
                        }
                    } else {
                        stack.push(*right);
                        if diff * diff <= r2 {
                            stack.push(*left);
                        }
                    }
                }
            }
        }
        false
    }

    fn search(&self, n: usize, q: &Vec3, k: usize, best: &mut Vec<(f64, usize)>) {
        match &self.nodes[n] {
            Node::Leaf { start, end } => {
                for &id in &self.order[*start..*end] {
                    let cand = (dist_sq(&self.points[id], q), id);
                    if best.len() == k && !less(cand, best[k - 1]) {
                        continue;
                    }
                    let at = best.partition_point(|b| less(*b, cand));
                    best.insert(at, cand);
                    best.truncate(k);
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[*dim] - value;
                let (near, far) = if diff < 0.0 {
                    (*left, *right)
                } else {
                    (*right, *left)
                };
                self.search(near, q, k, best);
                // `<=` keeps equal-distance candidates with lower ids reachable.
                if best.len() < k || diff * diff <= best[k - 1].0 {
                    self.search(far, q, k, best);
                }
            }
        }
    }
}

#[inline]
fn less(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

fn build(
    points: &[Vec3],
    order: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let me = nodes.len();
    if end - start <= BUCKET {
        nodes.push(Node::Leaf { start, end });
        return me;
    }
    let slice = &mut order[start..end];
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in slice.iter() {
        for d in 0..3 {
            lo[d] = lo[d].min(points[i][d]);
            hi[d] = hi[d].max(points[i][d]);
        }
    }
    let dim = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
        .unwrap();
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| {
        points[a][dim].total_cmp(&points[b][dim]).then(a.cmp(&b))
    });
    let value = points[slice[mid]][dim];
    // Left holds coordinates <= value, right holds coordinates >= value.
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let left = build(points, order, start, start + mid, nodes);
    let right = build(points, order, start + mid, end, nodes);
    nodes[me] = Node::Split {
        dim,
        value,
        left,
        right,
    };
    me
}

/// O(n) reference scan with the same ordering contract as [`SpatialIndex::knn`].
pub fn brute_force_knn(points: &[Vec3], q: &Vec3, k: usize) -> Vec<Neighbor> {
    let mut all: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (dist_sq(p, q), i))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.truncate(k);
    all.into_iter()
        .map(|(d, id)| Neighbor {
            id,
            position: points[id],
            dist_sq: d,
        })
        .collect()
}

/// The previous decoded sweep, aligned into the current sensor frame and re-quantized.
#[derive(Debug, Clone)]
pub struct PreviousOctree {
    pub tree: ParsedOctree,
    lookup: HashMap<(u8, [u32; 3]), u32>,
    /// Per level, an index over the cell centers of that level's nodes (local order).
    levels: Vec<SpatialIndex>,
}

impl PreviousOctree {
    /// No previous sweep (start of stream).
    pub fn empty(depth: u32) -> Self {
        Self::from_tree(ParsedOctree::empty(depth), &RegionOfInterest::default())
    }

    /// Applies `align` to `prev_decoded`, then builds its octree in the current ROI.
    pub fn new(
        prev_decoded: &Sweep,
        align: &RigidTransform,
        roi: &RegionOfInterest,
        depth: u32,
    ) -> Result<Self> {
        let moved = transform_sweep(prev_decoded, align);
        let o = build_octree(&moved, roi, depth)?;
        Ok(Self::from_tree(
            parse_occupancy_stream(&o.occupancy, depth)?,
            roi,
        ))
    }

    pub fn from_tree(tree: ParsedOctree, roi: &RegionOfInterest) -> Self {
        let lookup = tree.cell_lookup();
        let levels = (0..tree.levels())
            .map(|l| {
                let centers = tree.nodes[tree.level_range(l)]
                    .iter()
                    .map(|n| roi.cell_center(l as u32, n.cell))
                    .collect();
                SpatialIndex::new(centers)
            })
            .collect();
        PreviousOctree {
            tree,
            lookup,
            levels,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.tree.nodes.is_empty()
    }

    /// Node index at identical `(level, cell)`.
    pub fn corresponding(&self, level: u8, cell: [u32; 3]) -> Option<u32> {
        self.lookup.get(&(level, cell)).copied()
    }

    /// Index over this level's node centers; empty when the level has no nodes.
    pub fn level_index(&self, level: usize) -> Option<&SpatialIndex> {
        self.levels.get(level)
    }
}

/// Occupancy byte of the previous-sweep node at `(level, cell)`, if one exists.
pub fn corresponding_node(prev: &PreviousOctree, level: u8, cell: [u32; 3]) -> Option<u8> {
    prev.corresponding(level, cell)
        .map(|i| prev.tree.nodes[i as usize].occupancy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::octree::build_octree;
    use crate::pointcloud::{synthetic, Point};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ids(v: &[Neighbor]) -> Vec<usize> {
        v.iter().map(|n| n.id).collect()
    }

    #[test]
    fn hand_example() {
        let idx = SpatialIndex::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        assert_eq!(ids(&idx.knn(&[0.9, 0.0, 0.0], 2)), vec![1, 0]);
        assert!(idx.knn(&[0.9, 0.0, 0.0], 0).is_empty());
        assert_eq!(idx.knn(&[0.0; 3], 10).len(), 3);
    }

    #[test]
    fn ties_break_by_insertion_index() {
        let idx = SpatialIndex::new(vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]);
        assert_eq!(ids(&idx.knn(&[0.0; 3], 2)), vec![0, 1]);
        let idx = SpatialIndex::new(vec![[5.0; 3]; 20]);
        assert_eq!(ids(&idx.knn(&[0.0; 3], 4)), vec![0, 1, 2, 3]);
    }

    #[test]
    fn empty_index() {
        let idx = SpatialIndex::new(vec![]);
        assert!(idx.knn(&[0.0; 3], 3).is_empty());
        assert!(!idx.any_within(&[0.0; 3], 1.0, |_| true));
    }

    #[test]
    fn matches_brute_force_with_duplicates_and_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..60 {
            let n = rng.gen_range(1..2000);
            // Integer grids force many exact distance ties.
            let pts: Vec<Vec3> = (0..n)
                .map(|_| {
                    if trial % 2 == 0 {
                        [
                            rng.gen_range(-5..5) as f64,
                            rng.gen_range(-5..5) as f64,
                            rng.gen_range(-2..2) as f64,
                        ]
                    } else {
                        [
                            rng.gen_range(-50.0..50.0),
                            rng.gen_range(-50.0..50.0),
                            rng.gen_range(-3.0..3.0),
                        ]
                    }
                })
                .collect();
            let idx = SpatialIndex::new(pts.clone());
            for _ in 0..20 {
                let q = [
                    rng.gen_range(-6.0..6.0),
                    rng.gen_range(-6.0..6.0),
                    rng.gen_range(-3.0..3.0),
                ];
                let k = rng.gen_range(0..12);
                assert_eq!(idx.knn(&q, k), brute_force_knn(&pts, &q, k));
                let r = rng.gen_range(0.0..3.0);
                let brute = pts.iter().any(|p| dist_sq(p, &q) <= r * r);
                assert_eq!(idx.any_within(&q, r, |_| true), brute);
            }
        }
    }

    #[test]
    fn rigid_motion_preserves_ranking() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Vec3> = (0..500)
            .map(|_| {
                [
                    rng.gen_range(-20.0..20.0),
                    rng.gen_range(-20.0..20.0),
                    rng.gen_range(-2.0..2.0),
                ]
            })
            .collect();
        let t = RigidTransform::from_yaw_translation(1.1, [4.0, -7.0, 0.5]);
        let moved: Vec<Vec3> = pts.iter().map(|p| t.apply(p)).collect();
        let a = SpatialIndex::new(pts);
        let b = SpatialIndex::new(moved);
        for _ in 0..100 {
            let q = [rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0), 0.0];
            let na = a.knn(&q, 5);
            let nb = b.knn(&t.apply(&q), 5);
            for (x, y) in na.iter().zip(&nb) {
                // Rankings agree except where distances tie to within rounding.
                if x.id != y.id {
                    assert!((x.dist_sq - y.dist_sq).abs() < 1e-9);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn knn_is_prefix_of_knn_plus_one(
            pts in prop::collection::vec(prop::array::uniform3(-10.0f64..10.0), 1..200),
            q in prop::array::uniform3(-10.0f64..10.0),
            k in 0usize..10,
        ) {
            let idx = SpatialIndex::new(pts);
            let a = idx.knn(&q, k);
            let b = idx.knn(&q, k + 1);
            prop_assert_eq!(&b[..a.len()], &a[..]);
        }
    }

    #[test]
    fn correspondence_on_identical_and_empty_trees() {
        let stream = synthetic::generate_synthetic_stream(4, 1, &synthetic::SceneParams::tiny());
        let s = &stream.sweeps[0];
        let roi = stream.roi;
        let prev = PreviousOctree::new(s, &RigidTransform::identity(), &roi, 12).unwrap();
        let cur =
            parse_occupancy_stream(&build_octree(s, &roi, 12).unwrap().occupancy, 12).unwrap();
        for n in &cur.nodes {
            assert_eq!(
                corresponding_node(&prev, n.level, n.cell),
                Some(n.occupancy)
            );
        }
        let none = PreviousOctree::empty(12);
        assert!(cur
            .nodes
            .iter()
            .all(|n| corresponding_node(&none, n.level, n.cell).is_none()));
    }

    #[test]
    fn correspondence_needs_the_true_pose() {
        let roi = RegionOfInterest::new(64.0, [0.0; 3]).unwrap();
        let depth = 6;
        let level = 3u8;
        let cell = roi.side / 8.0;
        let cur = Sweep::new(
            vec![
                Point::new([3.1, -9.7, 1.3], 5),
                Point::new([4.6, -9.7, 1.3], 6),
                Point::new([-20.2, 14.9, -2.2], 9),
                Point::new([-20.2, 16.4, -2.2], 9),
            ],
            1,
        );
        // The previous sweep saw the same scene from a sensor one level-3 cell further along -x.
        let shift = RigidTransform::from_translation([cell, 0.0, 0.0]);
        let prev = transform_sweep(&cur, &shift)
            .with_pose(RigidTransform::from_translation([-cell, 0.0, 0.0]));
        let cur = cur.with_pose(RigidTransform::identity());
        let tree =
            parse_occupancy_stream(&build_octree(&cur, &roi, depth).unwrap().occupancy, depth)
                .unwrap();
        let at_level: Vec<_> = tree.nodes.iter().filter(|n| n.level == level).collect();
        assert!(!at_level.is_empty());

        let unaligned =
            PreviousOctree::new(&prev, &RigidTransform::identity(), &roi, depth).unwrap();
        assert!(at_level
            .iter()
            .all(|n| corresponding_node(&unaligned, level, n.cell).is_none()));

        let align = crate::pointcloud::alignment(&prev, &cur);
        let aligned = PreviousOctree::new(&prev, &align, &roi, depth).unwrap();
        assert!(at_level
            .iter()
            .all(|n| corresponding_node(&aligned, level, n.cell).is_some()));
    }
}

use super::SYMBOLS;
use crate::nn::Matrix;
use crate::octree::ParsedOctree;

/// Per-level byte counts with additive (Laplace) smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    counts: Vec<Vec<u64>>,
    pub alpha: f64,
}

impl Histogram {
    pub fn new(depth: u32) -> Self {
        Histogram {
            counts: vec![vec![0; SYMBOLS]; depth as usize],
            alpha: 1.0,
        }
    }

    pub fn levels(&self) -> usize {
        self.counts.len()
    }

    pub fn observe(&mut self, level: usize, byte: u8) {
        self.counts[level][byte as usize] += 1;
    }

    pub fn observe_tree(&mut self, tree: &ParsedOctree) {
        for n in &tree.nodes {
            self.observe(n.level as usize, n.occupancy);
        }
    }

    pub fn counts(&self, level: usize) -> &[u64] {
        &self.counts[level]
    }

    pub fn probs(&self, level: usize) -> Vec<f64> {
        let c = &self.counts[level];
        let total: u64 = c.iter().sum();
        let denom = total as f64 + SYMBOLS as f64 * self.alpha;
        c.iter().map(|&x| (x as f64 + self.alpha) / denom).collect()
    }

    pub fn to_matrix(&self) -> Matrix {
        let data = self.counts.iter().flatten().map(|&c| c as f64).collect();
        Matrix::from_vec(self.counts.len(), SYMBOLS, data).expect("consistent shape")
    }

    pub fn from_matrix(m: &Matrix, alpha: f64) -> Self {
        Histogram {
            counts: (0..m.rows())
                .map(|r| m.row(r).iter().map(|&v| v as u64).collect())
                .collect(),
            alpha,
        }
    }
}

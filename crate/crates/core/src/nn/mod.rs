//! Small deterministic neural-network engine.
//!
//! Dense row-major `f64` matrices, a tape-based reverse-mode [`Graph`], MLPs, a continuous
//! convolution layer, softmax cross-entropy and Adam. Every reduction runs in a fixed order and
//! each output row of a layer depends only on the matching input row, so results do not change
//! with batch composition.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod graph;
mod layers;

use std::collections::HashMap;

use rand::Rng;

pub use adam::AdamState;
pub use checkpoint::Checkpoint;
pub(crate) use graph::softmax;
pub use graph::{Gradients, Graph, Var};
pub use layers::{continuous_conv, mlp_forward, softmax_xent, ContinuousConv, Mlp};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimMismatch {
                    expected: cols,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    /// `self * w + b` where `w` is `(cols, out)` and `b` is `(1, out)`.
    pub fn affine(&self, w: &Matrix, b: &Matrix) -> Matrix {
        let out = w.cols;
        let mut y = Matrix::zeros(self.rows, out);
        for i in 0..self.rows {
            let yr = &mut y.data[i * out..(i + 1) * out];
            yr.copy_from_slice(&b.data);
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let wr = &w.data[k * out..(k + 1) * out];
                for (yv, wv) in yr.iter_mut().zip(wr) {
                    *yv += a * wv;
                }
            }
        }
        y
    }
}

pub type ParamId = usize;

/// Named trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter {name}"
        );
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|m| m.data.len()).sum()
    }

    pub fn zero_grads(&self) -> Vec<Matrix> {
        self.values
            .iter()
            .map(|m| Matrix::zeros(m.rows, m.cols))
            .collect()
    }

    /// Replaces every tensor with the same-named tensor in `other`.
    pub fn load_from(&mut self, other: &[(String, Matrix)]) -> Result<()> {
        if other.len() != self.values.len() {
            return Err(Error::Model(format!(
                "checkpoint has {} tensors, model expects {}",
                other.len(),
                self.values.len()
            )));
        }
        for (name, m) in other {
            let id = self
                .id(name)
                .ok_or_else(|| Error::Model(format!("unknown tensor {name}")))?;
            if self.values[id].shape() != m.shape() {
                return Err(Error::Model(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    m.shape(),
                    self.values[id].shape()
                )));
            }
            self.values[id] = m.clone();
        }
        Ok(())
    }

    pub fn to_named(&self) -> Vec<(String, Matrix)> {
        self.names
            .iter()
            .cloned()
            .zip(self.values.iter().cloned())
            .collect()
    }
}

/// He-uniform weights for a `(fan_in, fan_out)` layer.
pub fn he_uniform(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Matrix {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Matrix {
        rows: fan_in,
        cols: fan_out,
        data,
    }
}

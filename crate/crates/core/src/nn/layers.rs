use rand::Rng;

use super::graph::{log_softmax_at, softmax};
use super::{he_uniform, Graph, Matrix, ParamId, ParamStore, Var};
use crate::error::{Error, Result};

/// Dense layers with ReLU between them and optionally after the last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    dims: Vec<usize>,
    layers: Vec<(ParamId, ParamId)>,
    relu_last: bool,
}

impl Mlp {
    /// Registers `name.{i}.w` / `name.{i}.b` for each layer; He-uniform weights, zero biases.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        relu_last: bool,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output widths");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| {
                let w = store.add(format!("{name}.{i}.w"), he_uniform(d[0], d[1], rng));
                let b = store.add(format!("{name}.{i}.b"), Matrix::zeros(1, d[1]));
                (w, b)
            })
            .collect();
        Mlp {
            dims: dims.to_vec(),
            layers,
            relu_last,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn layers(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    /// Multiplies the last layer's weights by `gain`.
    pub fn scale_last(&self, store: &mut ParamStore, gain: f64) {
        let (w, _) = *self.layers.last().unwrap();
        store.get_mut(w).scale(gain);
    }

    /// Sets every weight and bias of the network to zero.
    pub fn zero(&self, store: &mut ParamStore) {
        for &(w, b) in &self.layers {
            store.get_mut(w).scale(0.0);
            store.get_mut(b).scale(0.0);
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = g.linear(h, w, b);
            if i + 1 < self.layers.len() || self.relu_last {
                h = g.relu(h);
            }
        }
        h
    }
}

pub fn mlp_forward(m: &Mlp, store: &ParamStore, x: &Matrix) -> Result<Matrix> {
    if x.cols() != m.input_dim() {
        return Err(Error::DimMismatch {
            expected: m.input_dim(),
            actual: x.cols(),
        });
    }
    let mut g = Graph::new(store);
    let xi = g.input(x.clone());
    let y = m.forward(&mut g, xi);
    Ok(g.value(y).clone())
}

/// `h_i = sum_j k(p_j - p_i) * h_j`, with the kernel MLP's output gating features elementwise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContinuousConv {
    pub kernel: Mlp,
}

impl ContinuousConv {
    /// Kernel MLP `3 -> hidden... -> feature_dim`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        hidden: &[usize],
        feature_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut dims = vec![3];
        dims.extend_from_slice(hidden);
        dims.push(feature_dim);
        ContinuousConv {
            kernel: Mlp::new(store, name, &dims, false, rng),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.kernel.output_dim()
    }

    /// Graph form. Pair `e` reads source row `src[e]` (zeros when `None`), uses displacement row
    /// `e` of `disp`, and adds into output row `dst[e]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        feats: Var,
        disp: Var,
        src: Vec<Option<u32>>,
        dst: Vec<u32>,
        n_out: usize,
    ) -> Var {
        let k = self.kernel.forward(g, disp);
        let h = g.gather(feats, src);
        let prod = g.mul(k, h);
        g.scatter_sum(prod, dst, n_out)
    }
}

/// Single-center evaluation. Contributions are summed in a canonical order, so the result is
/// bit-identical under any permutation of `neighbors`.
pub fn continuous_conv(
    cc: &ContinuousConv,
    store: &ParamStore,
    center: [f64; 3],
    neighbors: &[([f64; 3], Vec<f64>)],
) -> Result<Vec<f64>> {
    let f = cc.feature_dim();
    if let Some((_, bad)) = neighbors.iter().find(|(_, h)| h.len() != f) {
        return Err(Error::DimMismatch {
            expected: f,
            actual: bad.len(),
        });
    }
    let mut out = vec![0.0; f];
    if neighbors.is_empty() {
        return Ok(out);
    }
    let mut order: Vec<usize> = (0..neighbors.len()).collect();
    order.sort_by(|&a, &b| {
        let key = |i: usize| {
            let (p, h) = &neighbors[i];
            p.iter().chain(h).map(|v| v.to_bits()).collect::<Vec<u64>>()
        };
        key(a).cmp(&key(b))
    });
    let disp = Matrix::from_rows(
        &order
            .iter()
            .map(|&i| {
                let p = neighbors[i].0;
                vec![p[0] - center[0], p[1] - center[1], p[2] - center[2]]
            })
            .collect::<Vec<_>>(),
    )?;
    let k = mlp_forward(&cc.kernel, store, &disp)?;
    for (r, &i) in order.iter().enumerate() {
        for ((o, kv), hv) in out.iter_mut().zip(k.row(r)).zip(&neighbors[i].1) {
            *o += kv * hv;
        }
    }
    Ok(out)
}

/// Mean cross-entropy in nats and the row-wise softmax.
pub fn softmax_xent(logits: &Matrix, targets: &[u8]) -> Result<(f64, Matrix)> {
    if targets.len() != logits.rows() {
        return Err(Error::DimMismatch {
            expected: logits.rows(),
            actual: targets.len(),
        });
    }
    if let Some(&t) = targets.iter().find(|&&t| t as usize >= logits.cols()) {
        return Err(Error::InvalidArgument(format!(
            "target {t} outside {} classes",
            logits.cols()
        )));
    }
    let probs = softmax(logits);
    let n = targets.len().max(1) as f64;
    let loss = -targets
        .iter()
        .enumerate()
        .map(|(i, &t)| log_softmax_at(logits.row(i), t as usize))
        .sum::<f64>()
        / n;
    Ok((loss, probs))
}

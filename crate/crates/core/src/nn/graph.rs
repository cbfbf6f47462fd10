//! Tape-based reverse-mode differentiation.

use super::{Matrix, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Linear {
        x: usize,
        w: ParamId,
        b: ParamId,
    },
    Relu(usize),
    Add(usize, usize),
    Mul(usize, usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    /// Row `i` of the output is row `idx[i]` of `x`, or zeros for `None`.
    Gather {
        x: usize,
        idx: Vec<Option<u32>>,
    },
    /// Output row `r` is the sum of the input rows `i` with `idx[i] == r`, in input order.
    ScatterSum {
        x: usize,
        idx: Vec<u32>,
    },
    /// `scale * sum_i -ln softmax(x_i)[target_i]`; `probs` caches the softmax.
    SoftmaxXent {
        x: usize,
        targets: Vec<u8>,
        probs: Matrix,
        scale: f64,
    },
    /// `sum(x * c)` for a constant `c`.
    DotConst {
        x: usize,
        c: Matrix,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Records operations over parameters in `store` for one forward pass.
pub struct Graph<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to parameters and graph inputs.
pub struct Gradients {
    params: Vec<Option<Matrix>>,
    nodes: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&Matrix> {
        self.params[id].as_ref()
    }

    /// Gradient of an input node; `None` when the loss does not depend on it.
    pub fn node(&self, v: Var) -> Option<&Matrix> {
        self.nodes[v.0].as_ref()
    }

    /// Adds parameter gradients into `acc` (shaped like the store).
    pub fn accumulate_into(&self, acc: &mut [Matrix]) {
        for (a, g) in acc.iter_mut().zip(&self.params) {
            if let Some(g) = g {
                a.add_assign(g);
            }
        }
    }
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Input)
    }

    pub fn linear(&mut self, x: Var, w: ParamId, b: ParamId) -> Var {
        let (wm, bm) = (self.store.get(w), self.store.get(b));
        let xv = &self.nodes[x.0].value;
        assert_eq!(
            xv.cols(),
            wm.rows(),
            "linear {}: input width",
            self.store.name(w)
        );
        let y = xv.affine(wm, bm);
        self.push(y, Op::Linear { x: x.0, w, b })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut y = self.nodes[x.0].value.clone();
        for v in y.data_mut() {
            if *v <= 0.0 {
                *v = 0.0;
            }
        }
        self.push(y, Op::Relu(x.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut y = self.nodes[a.0].value.clone();
        assert_eq!(y.shape(), self.nodes[b.0].value.shape(), "add shapes");
        y.add_assign(&self.nodes[b.0].value);
        self.push(y, Op::Add(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let mut y = self.nodes[a.0].value.clone();
        let bv = &self.nodes[b.0].value;
        assert_eq!(y.shape(), bv.shape(), "mul shapes");
        for (p, q) in y.data_mut().iter_mut().zip(bv.data()) {
            *p *= q;
        }
        self.push(y, Op::Mul(a.0, b.0))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.nodes[parts[0].0].value.rows();
        let cols: usize = parts.iter().map(|p| self.nodes[p.0].value.cols()).sum();
        let mut y = Matrix::zeros(rows, cols);
        for p in parts {
            assert_eq!(self.nodes[p.0].value.rows(), rows, "concat_cols rows");
        }
        for i in 0..rows {
            let mut c = 0;
            for p in parts {
                let m = &self.nodes[p.0].value;
                y.row_mut(i)[c..c + m.cols()].copy_from_slice(m.row(i));
                c += m.cols();
            }
        }
        self.push(y, Op::ConcatCols(parts.iter().map(|p| p.0).collect()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.nodes[parts[0].0].value.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let m = &self.nodes[p.0].value;
            assert_eq!(m.cols(), cols, "concat_rows cols");
            data.extend_from_slice(m.data());
            rows += m.rows();
        }
        let y = Matrix::from_vec(rows, cols, data).expect("consistent shape");
        self.push(y, Op::ConcatRows(parts.iter().map(|p| p.0).collect()))
    }

    pub fn gather(&mut self, x: Var, idx: Vec<Option<u32>>) -> Var {
        let xv = &self.nodes[x.0].value;
        let mut y = Matrix::zeros(idx.len(), xv.cols());
        for (i, s) in idx.iter().enumerate() {
            if let Some(s) = s {
                y.row_mut(i).copy_from_slice(xv.row(*s as usize));
            }
        }
        self.push(y, Op::Gather { x: x.0, idx })
    }

    pub fn scatter_sum(&mut self, x: Var, idx: Vec<u32>, rows: usize) -> Var {
        let xv = &self.nodes[x.0].value;
        assert_eq!(idx.len(), xv.rows(), "scatter index length");
        let mut y = Matrix::zeros(rows, xv.cols());
        for (i, &r) in idx.iter().enumerate() {
            for (a, b) in y.row_mut(r as usize).iter_mut().zip(xv.row(i)) {
                *a += b;
            }
        }
        self.push(y, Op::ScatterSum { x: x.0, idx })
    }

    /// Summed cross-entropy in nats, times `scale`. Returns the 1x1 loss node.
    pub fn softmax_xent(&mut self, logits: Var, targets: Vec<u8>, scale: f64) -> Var {
        let x = &self.nodes[logits.0].value;
        assert_eq!(targets.len(), x.rows(), "one target per row");
        let probs = softmax(x);
        let mut loss = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            loss -= log_softmax_at(x.row(i), t as usize);
        }
        self.push(
            Matrix::filled(1, 1, loss * scale),
            Op::SoftmaxXent {
                x: logits.0,
                targets,
                probs,
                scale,
            },
        )
    }

    pub fn dot_const(&mut self, x: Var, c: Matrix) -> Var {
        let xv = &self.nodes[x.0].value;
        assert_eq!(xv.shape(), c.shape(), "dot_const shape");
        let s: f64 = xv.data().iter().zip(c.data()).map(|(a, b)| a * b).sum();
        self.push(Matrix::filled(1, 1, s), Op::DotConst { x: x.0, c })
    }

    /// Cached softmax of a [`Graph::softmax_xent`] node.
    pub fn probs(&self, loss: Var) -> Option<&Matrix> {
        match &self.nodes[loss.0].op {
            Op::SoftmaxXent { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Hash of the sign pattern of every ReLU input; changes when a perturbation crosses a kink.
    pub fn relu_signature(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for n in &self.nodes {
            if let Op::Relu(x) = n.op {
                for &v in self.nodes[x].value.data() {
                    h ^= u64::from(v > 0.0);
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(
            self.nodes[loss.0].value.shape(),
            (1, 1),
            "loss must be scalar"
        );
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut pgrads: Vec<Option<Matrix>> = (0..self.store.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for n in (0..=loss.0).rev() {
            let Some(gy) = grads[n].take() else { continue };
            let node = &self.nodes[n];
            match &node.op {
                Op::Input => {
                    // Kept so callers can read input gradients.
                    grads[n] = Some(gy);
                }
                Op::Linear { x, w, b } => {
                    let xv = &self.nodes[*x].value;
                    let wm = self.store.get(*w);
                    let out = wm.cols();
                    let gw = pgrads[*w].get_or_insert_with(|| Matrix::zeros(wm.rows(), out));
                    for i in 0..xv.rows() {
                        let gr = gy.row(i);
                        for (k, &a) in xv.row(i).iter().enumerate() {
                            if a == 0.0 {
                                continue;
                            }
                            for (g, d) in gw.row_mut(k).iter_mut().zip(gr) {
                                *g += a * d;
                            }
                        }
                    }
                    let gb = pgrads[*b].get_or_insert_with(|| Matrix::zeros(1, out));
                    for i in 0..gy.rows() {
                        for (g, d) in gb.data_mut().iter_mut().zip(gy.row(i)) {
                            *g += d;
                        }
                    }
                    let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                    for i in 0..xv.rows() {
                        let gr = gy.row(i);
                        for k in 0..xv.cols() {
                            let mut s = 0.0;
                            for (a, b) in wm.row(k).iter().zip(gr) {
                                s += a * b;
                            }
                            gx.set(i, k, s);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Relu(x) => {
                    let mut gx = gy;
                    for (g, v) in gx.data_mut().iter_mut().zip(node.value.data()) {
                        if *v <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, gy.clone());
                    accumulate(&mut grads, *a, gy);
                }
                Op::Mul(a, b) => {
                    let mut ga = gy.clone();
                    for (g, v) in ga.data_mut().iter_mut().zip(self.nodes[*b].value.data()) {
                        *g *= v;
                    }
                    let mut gb = gy;
                    for (g, v) in gb.data_mut().iter_mut().zip(self.nodes[*a].value.data()) {
                        *g *= v;
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::ConcatCols(parts) => {
                    let mut c = 0;
                    for &p in parts {
                        let pc = self.nodes[p].value.cols();
                        let mut gp = Matrix::zeros(gy.rows(), pc);
                        for i in 0..gy.rows() {
                            gp.row_mut(i).copy_from_slice(&gy.row(i)[c..c + pc]);
                        }
                        c += pc;
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut r = 0;
                    for &p in parts {
                        let (pr, pc) = self.nodes[p].value.shape();
                        let gp =
                            Matrix::from_vec(pr, pc, gy.data()[r * pc..(r + pr) * pc].to_vec())
                                .expect("consistent shape");
                        r += pr;
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::Gather { x, idx } => {
                    let xv = &self.nodes[*x].value;
                    let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                    for (i, s) in idx.iter().enumerate() {
                        if let Some(s) = s {
                            for (a, b) in gx.row_mut(*s as usize).iter_mut().zip(gy.row(i)) {
                                *a += b;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ScatterSum { x, idx } => {
                    let xv = &self.nodes[*x].value;
                    let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                    for (i, &r) in idx.iter().enumerate() {
                        gx.row_mut(i).copy_from_slice(gy.row(r as usize));
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SoftmaxXent {
                    x,
                    targets,
                    probs,
                    scale,
                } => {
                    let s = gy.get(0, 0) * scale;
                    let mut gx = probs.clone();
                    for (i, &t) in targets.iter().enumerate() {
                        let r = gx.row_mut(i);
                        r[t as usize] -= 1.0;
                        for v in r.iter_mut() {
                            *v *= s;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::DotConst { x, c } => {
                    let mut gx = c.clone();
                    gx.scale(gy.get(0, 0));
                    accumulate(&mut grads, *x, gx);
                }
            }
        }
        Gradients {
            params: pgrads,
            nodes: grads,
        }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], i: usize, g: Matrix) {
    match &mut grads[i] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

pub(crate) fn softmax(x: &Matrix) -> Matrix {
    let mut p = x.clone();
    for i in 0..p.rows() {
        let r = p.row_mut(i);
        let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in r.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in r.iter_mut() {
            *v /= s;
        }
    }
    p
}

pub(crate) fn log_softmax_at(row: &[f64], t: usize) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
    row[t] - m - s.ln()
}

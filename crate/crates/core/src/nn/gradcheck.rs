//! Central finite-difference gradient checking.

use super::{Graph, Matrix, ParamStore, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates where a perturbation flipped a ReLU, so the loss is not smooth there.
    pub skipped: usize,
}

/// `|a - n| / max(|a| + |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(floor)
}

/// Compares backprop gradients of `loss` against central differences with step `h`, for every
/// parameter scalar and every scalar of `inputs`.
pub fn check_gradients<F>(
    store: &mut ParamStore,
    inputs: &mut [Matrix],
    h: f64,
    loss: F,
) -> GradCheckReport
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let eval = |store: &ParamStore, inputs: &[Matrix]| {
        let mut g = Graph::new(store);
        let vars: Vec<Var> = inputs.iter().map(|m| g.input(m.clone())).collect();
        let l = loss(&mut g, &vars);
        (g.value(l).get(0, 0), g.relu_signature())
    };

    let (param_grads, input_grads, base_sig) = {
        let mut g = Graph::new(store);
        let vars: Vec<Var> = inputs.iter().map(|m| g.input(m.clone())).collect();
        let l = loss(&mut g, &vars);
        let grads = g.backward(l);
        let pg: Vec<Matrix> = (0..store.len())
            .map(|i| {
                grads
                    .param(i)
                    .cloned()
                    .unwrap_or_else(|| Matrix::zeros(store.get(i).rows(), store.get(i).cols()))
            })
            .collect();
        let ig: Vec<Matrix> = vars
            .iter()
            .zip(inputs.iter())
            .map(|(v, m)| {
                grads
                    .node(*v)
                    .cloned()
                    .unwrap_or_else(|| Matrix::zeros(m.rows(), m.cols()))
            })
            .collect();
        (pg, ig, g.relu_signature())
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut record = |analytic: f64, plus: (f64, u64), minus: (f64, u64)| {
        if plus.1 != base_sig || minus.1 != base_sig {
            report.skipped += 1;
            return;
        }
        let numeric = (plus.0 - minus.0) / (2.0 * h);
        report.checked += 1;
        report.max_rel_err = report
            .max_rel_err
            .max(relative_error(analytic, numeric, 1e-6));
    };

    for p in 0..store.len() {
        for j in 0..store.get(p).data().len() {
            let orig = store.get(p).data()[j];
            store.get_mut(p).data_mut()[j] = orig + h;
            let plus = eval(store, inputs);
            store.get_mut(p).data_mut()[j] = orig - h;
            let minus = eval(store, inputs);
            store.get_mut(p).data_mut()[j] = orig;
            record(param_grads[p].data()[j], plus, minus);
        }
    }
    for i in 0..inputs.len() {
        for j in 0..inputs[i].data().len() {
            let orig = inputs[i].data()[j];
            inputs[i].data_mut()[j] = orig + h;
            let plus = eval(store, inputs);
            inputs[i].data_mut()[j] = orig - h;
            let minus = eval(store, inputs);
            inputs[i].data_mut()[j] = orig;
            record(input_grads[i].data()[j], plus, minus);
        }
    }
    report
}

/// Random small networks exercising every graph operation: dense layers with ReLU, softmax
/// cross-entropy, continuous convolution (kernel parameters and neighbor features), deep-set
/// aggregation, and the gather/scatter/concat/elementwise primitives.
pub fn layer_suite(seed: u64) -> Vec<(&'static str, GradCheckReport)> {
    use super::{ContinuousConv, Mlp};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const H: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rand_matrix = |rng: &mut ChaCha8Rng, r: usize, c: usize| {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    };
    let mut out = Vec::new();

    // Dense stack.
    let mut store = ParamStore::new();
    let n = rng.gen_range(1..5);
    let dims = [
        rng.gen_range(2..6),
        rng.gen_range(2..8),
        rng.gen_range(2..8),
        rng.gen_range(1..4),
    ];
    let mlp = Mlp::new(&mut store, "mlp", &dims, rng.gen(), &mut rng);
    let c = rand_matrix(&mut rng, n, dims[3]);
    let mut inputs = vec![rand_matrix(&mut rng, n, dims[0])];
    out.push((
        "mlp",
        check_gradients(&mut store, &mut inputs, H, |g, v| {
            let y = mlp.forward(g, v[0]);
            g.dot_const(y, c.clone())
        }),
    ));

    // Softmax cross-entropy head.
    let mut store = ParamStore::new();
    let classes = rng.gen_range(2..9);
    let mlp = Mlp::new(&mut store, "head", &[4, 6, classes], false, &mut rng);
    let targets: Vec<u8> = (0..n).map(|_| rng.gen_range(0..classes) as u8).collect();
    let mut inputs = vec![rand_matrix(&mut rng, n, 4)];
    out.push((
        "softmax_xent",
        check_gradients(&mut store, &mut inputs, H, |g, v| {
            let y = mlp.forward(g, v[0]);
            g.softmax_xent(y, targets.clone(), 1.0 / n as f64)
        }),
    ));

    // Continuous convolution.
    let mut store = ParamStore::new();
    let f = rng.gen_range(2..6);
    let cc = ContinuousConv::new(&mut store, "cc", &[5, 6], f, &mut rng);
    let (n_src, n_dst, pairs) = (
        rng.gen_range(1..6),
        rng.gen_range(1..4),
        rng.gen_range(1..10),
    );
    let src: Vec<Option<u32>> = (0..pairs)
        .map(|_| (rng.gen::<f64>() < 0.85).then(|| rng.gen_range(0..n_src) as u32))
        .collect();
    let dst: Vec<u32> = (0..pairs).map(|_| rng.gen_range(0..n_dst) as u32).collect();
    let c = rand_matrix(&mut rng, n_dst, f);
    let mut inputs = vec![
        rand_matrix(&mut rng, n_src, f),
        rand_matrix(&mut rng, pairs, 3),
    ];
    out.push((
        "continuous_conv",
        check_gradients(&mut store, &mut inputs, H, |g, v| {
            let y = cc.forward(g, v[0], v[1], src.clone(), dst.clone(), n_dst);
            g.dot_const(y, c.clone())
        }),
    ));

    // Deep-set aggregation g = h + f1([h, sum_c f2(g_c)]).
    let mut store = ParamStore::new();
    let d = rng.gen_range(2..5);
    let f2 = Mlp::new(&mut store, "f2", &[d, 5, 3], false, &mut rng);
    let f1 = Mlp::new(&mut store, "f1", &[d + 3, 6, d], false, &mut rng);
    let (parents, children) = (rng.gen_range(1..4), rng.gen_range(1..8));
    let parent_of: Vec<u32> = (0..children)
        .map(|_| rng.gen_range(0..parents) as u32)
        .collect();
    let c = rand_matrix(&mut rng, parents, d);
    let mut inputs = vec![
        rand_matrix(&mut rng, parents, d),
        rand_matrix(&mut rng, children, d),
    ];
    out.push((
        "deep_set",
        check_gradients(&mut store, &mut inputs, H, |g, v| {
            let msg = f2.forward(g, v[1]);
            let s = g.scatter_sum(msg, parent_of.clone(), parents);
            let cat = g.concat_cols(&[v[0], s]);
            let upd = f1.forward(g, cat);
            let y = g.add(v[0], upd);
            g.dot_const(y, c.clone())
        }),
    ));

    // Primitives.
    let mut store = ParamStore::new();
    let (r, k) = (rng.gen_range(1..5), rng.gen_range(1..5));
    let idx: Vec<Option<u32>> = (0..r + 2)
        .map(|_| (rng.gen::<f64>() < 0.8).then(|| rng.gen_range(0..2 * r) as u32))
        .collect();
    let c = rand_matrix(&mut rng, r + 2, 2 * k);
    let mut inputs = vec![rand_matrix(&mut rng, r, k), rand_matrix(&mut rng, r, k)];
    out.push((
        "primitives",
        check_gradients(&mut store, &mut inputs, H, |g, v| {
            let prod = g.mul(v[0], v[1]);
            let sum = g.add(prod, v[0]);
            let act = g.relu(sum);
            let stacked = g.concat_rows(&[act, v[1]]);
            let picked = g.gather(stacked, idx.clone());
            let picked2 = g.gather(stacked, idx.iter().rev().cloned().collect());
            let wide = g.concat_cols(&[picked, picked2]);
            g.dot_const(wide, c.clone())
        }),
    ));
    out
}

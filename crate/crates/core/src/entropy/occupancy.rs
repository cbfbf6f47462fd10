//! Occupancy models.
//!
//! For a node `i` at level `l` of the current tree:
//!
//! * ancestral: `h_0 = s_0(c_i)`, `h_k = s_k([h_{k-1}, h_{parent, k-1}])` for `k = 1..=K`;
//! * previous tree, top-down: the same recursion over previous-sweep nodes with their own
//!   bytes as input, giving `t_j`;
//! * previous tree, bottom-up: `b_j = t_j + f1([t_j, sum_c f2(b_c)])` from the deepest level up;
//! * exact match: the temporal feature of the previous node at the same `(level, cell)`;
//! * spatio-temporal: a per-level continuous convolution over the `k` nearest previous nodes
//!   of the same level, displacements measured in cells, followed by a per-level MLP;
//! * header: an MLP over the concatenated features, producing 256 logits.
//!
//! Every level is evaluated in one batched pass using only bytes of shallower levels, which is
//! exactly what the decoder has when it reaches that level.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::features::{node_context, CONTEXT_DIM};
use super::{Histogram, ModelDims, OccupancyVariant, OUTPUT_INIT_GAIN, SYMBOLS};
use crate::error::{Error, Result};
use crate::neighbors::PreviousOctree;
use crate::nn::{Checkpoint, ContinuousConv, Graph, Matrix, Mlp, ParamStore, Var};
use crate::octree::{check_depth, ParsedOctree};
use crate::pointcloud::RegionOfInterest;

#[derive(Debug, Clone, PartialEq)]
struct Nets {
    anc0: Mlp,
    anc: Vec<Mlp>,
    top0: Option<Mlp>,
    top: Vec<Mlp>,
    f2: Option<Mlp>,
    f1: Option<Mlp>,
    /// Indexed by level; `None` at level 0.
    conv: Vec<Option<(ContinuousConv, Mlp)>>,
    header: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyModel {
    pub variant: OccupancyVariant,
    pub depth: u32,
    pub dims: ModelDims,
    pub seed: u64,
    /// Optimizer steps taken so far.
    pub steps: u64,
    store: ParamStore,
    nets: Option<Nets>,
    histogram: Histogram,
}

impl OccupancyModel {
    pub fn new(variant: OccupancyVariant, depth: u32, dims: ModelDims, seed: u64) -> Result<Self> {
        check_depth(depth)?;
        let mut store = ParamStore::new();
        let nets = variant
            .is_neural()
            .then(|| build_nets(&mut store, variant, depth, &dims, seed));
        Ok(OccupancyModel {
            variant,
            depth,
            dims,
            seed,
            steps: 0,
            store,
            nets,
            histogram: Histogram::new(depth),
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn histogram(&self) -> &Histogram {
        &self.histogram
    }

    pub fn histogram_mut(&mut self) -> &mut Histogram {
        &mut self.histogram
    }

    /// Zeroes the bottom-up networks, making OTB behave like OT.
    pub fn zero_bottom_up(&mut self) {
        if let Some(n) = &self.nets {
            for m in n.f1.iter().chain(&n.f2) {
                m.zero(&mut self.store);
            }
        }
    }

    pub fn session<'m>(
        &'m self,
        prev: &'m PreviousOctree,
        roi: &RegionOfInterest,
    ) -> OccupancySession<'m> {
        OccupancySession::new(self, prev, *roi)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::default();
        c.meta.insert("kind".into(), "occupancy".into());
        c.meta.insert("variant".into(), self.variant.name().into());
        c.meta.insert("depth".into(), self.depth.to_string());
        c.meta.insert("dims".into(), self.dims.to_meta());
        c.meta.insert("seed".into(), self.seed.to_string());
        c.meta.insert("step".into(), self.steps.to_string());
        c.tensors = self.store.to_named();
        c.tensors
            .push(("histogram.counts".into(), self.histogram.to_matrix()));
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.meta_str("kind")? != "occupancy" {
            return Err(Error::Model("not an occupancy checkpoint".into()));
        }
        let variant: OccupancyVariant = c.meta_str("variant")?.parse()?;
        let depth: u32 = c.meta_parse("depth")?;
        let dims = ModelDims::from_meta(c.meta_str("dims")?)?;
        let mut m = OccupancyModel::new(variant, depth, dims, c.meta_parse("seed")?)?;
        m.steps = c.meta_parse("step")?;
        let mut tensors = c.tensors.clone();
        let hist = tensors
            .iter()
            .position(|(n, _)| n == "histogram.counts")
            .ok_or_else(|| Error::Model("checkpoint lacks histogram counts".into()))?;
        let (_, h) = tensors.remove(hist);
        if h.shape() != (depth as usize, SYMBOLS) {
            return Err(Error::Model("histogram shape does not match depth".into()));
        }
        m.histogram = Histogram::from_matrix(&h, 1.0);
        m.store.load_from(&tensors)?;
        Ok(m)
    }

    /// Copies every same-named, same-shaped tensor from `other` (warm start across depths).
    pub fn warm_start_from(&mut self, other: &OccupancyModel) {
        for (name, m) in other.store.iter() {
            if let Some(id) = self.store.id(name) {
                if self.store.get(id).shape() == m.shape() {
                    *self.store.get_mut(id) = m.clone();
                }
            }
        }
    }
}

fn build_nets(
    store: &mut ParamStore,
    variant: OccupancyVariant,
    depth: u32,
    d: &ModelDims,
    seed: u64,
) -> Nets {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, t) = (d.hidden, d.temporal);
    let anc0 = Mlp::new(store, "anc.0", &[CONTEXT_DIM, h, h, h, h], true, &mut rng);
    let anc = (1..=d.rounds)
        .map(|k| Mlp::new(store, &format!("anc.{k}"), &[2 * h, h, h], true, &mut rng))
        .collect();
    let (top0, top) = if variant.top_down() {
        (
            Some(Mlp::new(
                store,
                "top.0",
                &[CONTEXT_DIM, t, t, t, t],
                true,
                &mut rng,
            )),
            (1..=d.rounds)
                .map(|k| Mlp::new(store, &format!("top.{k}"), &[2 * t, t, t], true, &mut rng))
                .collect(),
        )
    } else {
        (None, Vec::new())
    };
    let (f2, f1) = if variant.bottom_up() {
        (
            Some(Mlp::new(
                store,
                "up.f2",
                &[t, d.message, d.message],
                true,
                &mut rng,
            )),
            Some(Mlp::new(
                store,
                "up.f1",
                &[t + d.message, t, t],
                false,
                &mut rng,
            )),
        )
    } else {
        (None, None)
    };
    let conv = (0..depth as usize)
        .map(|l| {
            (variant.conv() && l > 0).then(|| {
                (
                    ContinuousConv::new(
                        store,
                        &format!("st.{l}.kernel"),
                        &d.kernel_hidden,
                        t,
                        &mut rng,
                    ),
                    Mlp::new(store, &format!("st.{l}.mlp"), &[t, t, t], true, &mut rng),
                )
            })
        })
        .collect();
    let hh = d.header_hidden;
    let header = Mlp::new(
        store,
        "header",
        &[h + temporal_width(variant, t), hh, hh, hh, SYMBOLS],
        false,
        &mut rng,
    );
    header.scale_last(store, OUTPUT_INIT_GAIN);
    Nets {
        anc0,
        anc,
        top0,
        top,
        f2,
        f1,
        conv,
        header,
    }
}

fn temporal_width(variant: OccupancyVariant, t: usize) -> usize {
    match variant {
        OccupancyVariant::Histogram | OccupancyVariant::O => 0,
        OccupancyVariant::OT | OccupancyVariant::OTB => t,
        OccupancyVariant::OTBCC => 2 * t,
    }
}

/// Level-by-level evaluation state for one sweep.
pub struct OccupancySession<'m> {
    model: &'m OccupancyModel,
    prev: &'m PreviousOctree,
    roi: RegionOfInterest,
    graph: Graph<'m>,
    /// Per current level: outputs of every ancestral round for that level's nodes.
    rounds: Vec<Vec<Var>>,
    /// Per previous level: temporal feature of each node.
    prev_feat: Vec<Var>,
    losses: Vec<Var>,
}

impl<'m> OccupancySession<'m> {
    fn new(model: &'m OccupancyModel, prev: &'m PreviousOctree, roi: RegionOfInterest) -> Self {
        let mut s = OccupancySession {
            model,
            prev,
            roi,
            graph: Graph::new(&model.store),
            rounds: Vec::new(),
            prev_feat: Vec::new(),
            losses: Vec::new(),
        };
        if model.variant.top_down() && !prev.is_empty() {
            s.prev_feat = s.previous_features();
        }
        s
    }

    pub fn graph(&self) -> &Graph<'m> {
        &self.graph
    }

    fn nets(&self) -> &'m Nets {
        self.model.nets.as_ref().expect("neural variant")
    }

    /// Runs `first` then the aggregation rounds over a level, returning every round's output.
    fn recurse(
        &mut self,
        ctx: Matrix,
        parents: Vec<Option<u32>>,
        parent_rounds: Option<&[Var]>,
        first: &Mlp,
        rest: &[Mlp],
    ) -> Vec<Var> {
        let g = &mut self.graph;
        let n = ctx.rows();
        let x = g.input(ctx);
        let mut out = vec![first.forward(g, x)];
        for (k, m) in rest.iter().enumerate() {
            let parent = match parent_rounds {
                Some(pr) => g.gather(pr[k], parents.clone()),
                None => g.input(Matrix::zeros(n, m.input_dim() / 2)),
            };
            let cat = g.concat_cols(&[out[k], parent]);
            out.push(m.forward(g, cat));
        }
        out
    }

    fn previous_features(&mut self) -> Vec<Var> {
        let nets = self.nets();
        let tree = &self.prev.tree;
        let mut top_rounds: Vec<Vec<Var>> = Vec::new();
        for l in 0..tree.levels() {
            let range = tree.level_range(l);
            let mut ctx = Matrix::zeros(range.len(), CONTEXT_DIM);
            for (r, i) in range.clone().enumerate() {
                let own = tree.nodes[i].occupancy;
                node_context(tree, i, &self.roi, Some(own), ctx.row_mut(r));
            }
            let parents = local_parents(tree, l);
            let pr = if l > 0 {
                Some(top_rounds[l - 1].clone())
            } else {
                None
            };
            let rounds = self.recurse(
                ctx,
                parents,
                pr.as_deref(),
                nets.top0.as_ref().unwrap(),
                &nets.top,
            );
            top_rounds.push(rounds);
        }
        let top: Vec<Var> = top_rounds.iter().map(|r| *r.last().unwrap()).collect();
        let (Some(f1), Some(f2)) = (&nets.f1, &nets.f2) else {
            return top;
        };
        let g = &mut self.graph;
        let mut up = vec![None; top.len()];
        for l in (0..top.len()).rev() {
            let n = tree.level_range(l).len();
            let sum = match up.get(l + 1).copied().flatten() {
                Some(child) => {
                    let msg = f2.forward(g, child);
                    let parents: Vec<u32> = local_parents(tree, l + 1)
                        .into_iter()
                        .map(|p| p.expect("non-root"))
                        .collect();
                    g.scatter_sum(msg, parents, n)
                }
                None => g.input(Matrix::zeros(n, f2.output_dim())),
            };
            let cat = g.concat_cols(&[top[l], sum]);
            let upd = f1.forward(g, cat);
            up[l] = Some(g.add(top[l], upd));
        }
        up.into_iter().map(Option::unwrap).collect()
    }

    /// Logits for the nodes of `level` in `cur`, whose shallower levels must be complete.
    pub fn level_logits(&mut self, cur: &ParsedOctree, level: usize) -> Var {
        let nets = self.nets();
        let model = self.model;
        let t = model.dims.temporal;
        assert_eq!(
            self.rounds.len(),
            level,
            "levels must be evaluated in order"
        );
        let range = cur.level_range(level);
        let n = range.len();
        let mut ctx = Matrix::zeros(n, CONTEXT_DIM);
        let mut matched = Vec::with_capacity(n);
        for (r, i) in range.clone().enumerate() {
            let node = &cur.nodes[i];
            let corr = self.prev.corresponding(node.level, node.cell);
            let byte = corr.map(|j| self.prev.tree.nodes[j as usize].occupancy);
            node_context(cur, i, &self.roi, byte, ctx.row_mut(r));
            matched.push(corr.map(|j| j - self.prev.tree.level_starts[level] as u32));
        }
        let parents = local_parents(cur, level);
        let pr = if level > 0 {
            Some(self.rounds[level - 1].clone())
        } else {
            None
        };
        let rounds = self.recurse(ctx, parents, pr.as_deref(), &nets.anc0, &nets.anc);
        let h = *rounds.last().unwrap();
        self.rounds.push(rounds);

        let mut parts = vec![h];
        if model.variant.top_down() {
            let g = &mut self.graph;
            parts.push(match self.prev_feat.get(level) {
                Some(&pf) => g.gather(pf, matched),
                None => g.input(Matrix::zeros(n, t)),
            });
        }
        if model.variant.conv() {
            parts.push(self.spatio_temporal(cur, level));
        }
        let g = &mut self.graph;
        let x = if parts.len() == 1 {
            parts[0]
        } else {
            g.concat_cols(&parts)
        };
        nets.header.forward(g, x)
    }

    fn spatio_temporal(&mut self, cur: &ParsedOctree, level: usize) -> Var {
        let nets = self.nets();
        let t = self.model.dims.temporal;
        let range = cur.level_range(level);
        let n = range.len();
        let g = &mut self.graph;
        let (Some((cc, mlp)), Some(&pf), Some(index)) = (
            nets.conv.get(level).and_then(Option::as_ref),
            self.prev_feat.get(level),
            self.prev.level_index(level),
        ) else {
            return g.input(Matrix::zeros(n, t));
        };
        let cell = self.roi.cell_size(level as u32);
        let mut disp = Vec::new();
        let mut src = Vec::new();
        let mut dst = Vec::new();
        for (r, i) in range.enumerate() {
            let c = self.roi.cell_center(level as u32, cur.nodes[i].cell);
            for nb in index.knn(&c, self.model.dims.knn) {
                disp.extend((0..3).map(|a| (nb.position[a] - c[a]) / cell));
                src.push(Some(nb.id as u32));
                dst.push(r as u32);
            }
        }
        let pairs = dst.len();
        let d = g.input(Matrix::from_vec(pairs, 3, disp).expect("3 per pair"));
        let agg = cc.forward(g, pf, d, src, dst, n);
        mlp.forward(g, agg)
    }

    /// Distributions for the nodes of `level`, one row per node.
    pub fn level_probs(&mut self, cur: &ParsedOctree, level: usize) -> Matrix {
        let n = cur.level_range(level).len();
        if !self.model.variant.is_neural() {
            let p = self.model.histogram.probs(level);
            let mut m = Matrix::zeros(n, SYMBOLS);
            for r in 0..n {
                m.row_mut(r).copy_from_slice(&p);
            }
            self.rounds.push(Vec::new());
            return m;
        }
        let logits = self.level_logits(cur, level);
        crate::nn::softmax(self.graph.value(logits))
    }

    /// Adds this level's cross-entropy (times `scale`) to the session loss.
    pub fn add_level_loss(&mut self, cur: &ParsedOctree, level: usize, scale: f64) -> f64 {
        let logits = self.level_logits(cur, level);
        let targets = cur.nodes[cur.level_range(level)]
            .iter()
            .map(|n| n.occupancy)
            .collect();
        let l = self.graph.softmax_xent(logits, targets, scale);
        self.losses.push(l);
        self.graph.value(l).get(0, 0)
    }

    pub fn total_loss(&self) -> f64 {
        self.losses
            .iter()
            .map(|&l| self.graph.value(l).get(0, 0))
            .sum()
    }

    /// Which ReLUs are active so far; see [`Graph::relu_signature`].
    pub fn relu_signature(&self) -> u64 {
        self.graph.relu_signature()
    }

    /// Sum of the recorded level losses and its parameter gradients, added into `acc`.
    pub fn backward_into(mut self, acc: &mut [Matrix]) -> f64 {
        let Some(&first) = self.losses.first() else {
            return 0.0;
        };
        let mut total = first;
        for &l in &self.losses[1..] {
            total = self.graph.add(total, l);
        }
        let grads = self.graph.backward(total);
        grads.accumulate_into(acc);
        self.graph.value(total).get(0, 0)
    }
}

/// Parent of each node of `level`, as an index local to `level - 1`.
fn local_parents(tree: &ParsedOctree, level: usize) -> Vec<Option<u32>> {
    let base = if level > 0 {
        tree.level_starts[level - 1] as u32
    } else {
        0
    };
    tree.nodes[tree.level_range(level)]
        .iter()
        .map(|n| n.parent.map(|p| p - base))
        .collect()
}

//! Training data preparation and optimization loops.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{IntensityContext, IntensityModel, OccupancyModel};
use crate::error::{Error, Result};
use crate::neighbors::PreviousOctree;
use crate::nn::{AdamState, Checkpoint, Graph, Matrix};
use crate::octree::{build_octree, parse_occupancy_stream, quantized_sweep, ParsedOctree};
use crate::pointcloud::{
    alignment, transform_sweep, write_stream, RegionOfInterest, Sweep, SweepStream, Vec3,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub steps: u64,
    pub lr: f64,
    /// Sweeps per step.
    pub batch: usize,
    pub seed: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            steps: 5000,
            lr: 1e-4,
            batch: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Mean loss per symbol (nats) of each step's batch.
    pub losses: Vec<f64>,
    pub symbols_seen: u64,
}

impl TrainReport {
    pub fn final_loss(&self, window: usize) -> Option<f64> {
        smoothed(&self.losses, window).last().copied()
    }
}

/// Trailing moving average.
pub fn smoothed(v: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(v.len());
    let mut acc = 0.0;
    for i in 0..v.len() {
        acc += v[i];
        if i >= w {
            acc -= v[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

/// Hex SHA-256 over the serialized streams, in order.
pub fn corpus_hash(streams: &[SweepStream]) -> String {
    let mut h = Sha256::new();
    for s in streams {
        h.update(write_stream(s));
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Plain-text description of a checkpoint.
pub fn model_card(ck: &Checkpoint, corpus: &str) -> String {
    let params: usize = ck
        .tensors
        .iter()
        .filter(|(n, _)| n != "histogram.counts")
        .map(|(_, m)| m.data().len())
        .sum();
    let mut out = String::new();
    for (k, v) in &ck.meta {
        out.push_str(&format!("{k}: {v}\n"));
    }
    out.push_str(&format!("parameters: {params}\ncorpus_sha256: {corpus}\n"));
    out
}

/// The decoder-side context for one sweep: the previous decoded sweep moved into this frame.
#[derive(Debug, Clone)]
pub struct SweepContext {
    pub prev_tree: PreviousOctree,
    pub intensity: IntensityContext,
}

impl SweepContext {
    pub fn new(
        prev_decoded: Option<&Sweep>,
        cur: &Sweep,
        roi: &RegionOfInterest,
        depth: u32,
    ) -> Result<Self> {
        Ok(match prev_decoded {
            None => SweepContext {
                prev_tree: PreviousOctree::empty(depth),
                intensity: IntensityContext::empty(roi),
            },
            Some(p) => {
                let moved = transform_sweep(p, &alignment(p, cur));
                let o = build_octree(&moved, roi, depth)?;
                SweepContext {
                    prev_tree: PreviousOctree::from_tree(
                        parse_occupancy_stream(&o.occupancy, depth)?,
                        roi,
                    ),
                    intensity: IntensityContext::new(&moved, roi),
                }
            }
        })
    }
}

#[derive(Debug, Clone)]
pub struct OccupancySample {
    pub tree: ParsedOctree,
    pub prev: PreviousOctree,
    pub roi: RegionOfInterest,
}

#[derive(Debug, Clone)]
pub struct IntensitySample {
    /// Decoded leaf positions, in leaf order.
    pub queries: Vec<Vec3>,
    pub targets: Vec<u8>,
    pub ctx: IntensityContext,
}

fn for_each_sweep(
    streams: &[SweepStream],
    depth: u32,
    mut f: impl FnMut(&Sweep, &Sweep, SweepContext, &RegionOfInterest) -> Result<()>,
) -> Result<()> {
    for st in streams {
        let mut prev: Option<Sweep> = None;
        for s in &st.sweeps {
            let ctx = SweepContext::new(prev.as_ref(), s, &st.roi, depth)?;
            let decoded = quantized_sweep(s, &st.roi, depth)?;
            f(s, &decoded, ctx, &st.roi)?;
            prev = Some(decoded);
        }
    }
    Ok(())
}

pub fn occupancy_samples(streams: &[SweepStream], depth: u32) -> Result<Vec<OccupancySample>> {
    let mut out = Vec::new();
    for_each_sweep(streams, depth, |s, _, ctx, roi| {
        let o = build_octree(s, roi, depth)?;
        out.push(OccupancySample {
            tree: parse_occupancy_stream(&o.occupancy, depth)?,
            prev: ctx.prev_tree,
            roi: *roi,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn intensity_samples(streams: &[SweepStream], depth: u32) -> Result<Vec<IntensitySample>> {
    let mut out = Vec::new();
    for_each_sweep(streams, depth, |_, decoded, ctx, _| {
        out.push(IntensitySample {
            queries: decoded.positions(),
            targets: decoded.points.iter().map(|p| p.intensity).collect(),
            ctx: ctx.intensity,
        });
        Ok(())
    })?;
    Ok(out)
}

/// Total cross-entropy (nats) of `sample` under `model`, each node weighted by `scale`, with
/// parameter gradients added to `acc` when given.
pub fn occupancy_loss(
    model: &OccupancyModel,
    sample: &OccupancySample,
    scale: f64,
    acc: Option<&mut [Matrix]>,
) -> f64 {
    if !model.variant.is_neural() {
        let mut total = 0.0;
        for l in 0..sample.tree.levels() {
            let p = model.histogram().probs(l);
            for n in &sample.tree.nodes[sample.tree.level_range(l)] {
                total -= p[n.occupancy as usize].ln();
            }
        }
        return total * scale;
    }
    let mut s = model.session(&sample.prev, &sample.roi);
    for l in 0..sample.tree.levels() {
        if !sample.tree.level_range(l).is_empty() {
            s.add_level_loss(&sample.tree, l, scale);
        }
    }
    match acc {
        Some(acc) => s.backward_into(acc),
        None => s.total_loss(),
    }
}

/// ReLU activation pattern of the occupancy loss graph, for finite-difference checks that must
/// not straddle a kink. Zero for the histogram model.
pub fn occupancy_relu_signature(model: &OccupancyModel, sample: &OccupancySample) -> u64 {
    if !model.variant.is_neural() {
        return 0;
    }
    let mut s = model.session(&sample.prev, &sample.roi);
    for l in 0..sample.tree.levels() {
        if !sample.tree.level_range(l).is_empty() {
            s.add_level_loss(&sample.tree, l, 1.0);
        }
    }
    s.relu_signature()
}

/// Intensity counterpart of [`occupancy_relu_signature`].
pub fn intensity_relu_signature(model: &IntensityModel, sample: &IntensitySample) -> u64 {
    if sample.queries.is_empty() || model.k() == 0 {
        return 0;
    }
    let nb = sample.ctx.neighbors(&sample.queries, model.k());
    let mut g = Graph::new(model.params());
    model.logits(&mut g, &nb, sample.queries.len());
    g.relu_signature()
}

pub fn intensity_loss(
    model: &IntensityModel,
    sample: &IntensitySample,
    scale: f64,
    acc: Option<&mut [Matrix]>,
) -> f64 {
    let n = sample.queries.len();
    if n == 0 {
        return 0.0;
    }
    if model.k() == 0 {
        return n as f64 * (super::SYMBOLS as f64).ln() * scale;
    }
    let nb = sample.ctx.neighbors(&sample.queries, model.k());
    let mut g = Graph::new(model.params());
    let logits = model.logits(&mut g, &nb, n);
    let loss = g.softmax_xent(logits, sample.targets.clone(), scale);
    if let Some(acc) = acc {
        g.backward(loss).accumulate_into(acc);
    }
    g.value(loss).get(0, 0)
}

fn draw_batch(rng: &mut ChaCha8Rng, n: usize, batch: usize) -> Vec<usize> {
    (0..batch.max(1)).map(|_| rng.gen_range(0..n)).collect()
}

fn check_loss(step: u64, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            step,
            reason: format!("loss is {loss}"),
        })
    }
}

/// Trains `model` in place. The histogram variant just counts every sample once.
pub fn train_occupancy(
    model: &mut OccupancyModel,
    samples: &[OccupancySample],
    sched: &Schedule,
) -> Result<TrainReport> {
    let mut report = TrainReport::default();
    if !model.variant.is_neural() {
        for s in samples {
            model.histogram_mut().observe_tree(&s.tree);
            report.symbols_seen += s.tree.nodes.len() as u64;
        }
        return Ok(report);
    }
    if samples.is_empty() || sched.steps == 0 {
        return Ok(report);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sched.seed);
    let mut adam = AdamState::new(model.params(), sched.lr);
    for step in 1..=sched.steps {
        let batch = draw_batch(&mut rng, samples.len(), sched.batch);
        let symbols: usize = batch.iter().map(|&i| samples[i].tree.nodes.len()).sum();
        let scale = 1.0 / symbols.max(1) as f64;
        let mut grads = model.params().zero_grads();
        let mut loss = 0.0;
        for &i in &batch {
            loss += occupancy_loss(model, &samples[i], scale, Some(&mut grads));
        }
        check_loss(step, loss)?;
        adam.update(model.params_mut(), &grads)?;
        model.steps += 1;
        report.losses.push(loss);
        report.symbols_seen += symbols as u64;
    }
    Ok(report)
}

pub fn train_intensity(
    model: &mut IntensityModel,
    samples: &[IntensitySample],
    sched: &Schedule,
) -> Result<TrainReport> {
    let mut report = TrainReport::default();
    if model.k() == 0 || samples.is_empty() || sched.steps == 0 {
        return Ok(report);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sched.seed);
    let mut adam = AdamState::new(model.params(), sched.lr);
    for step in 1..=sched.steps {
        let batch = draw_batch(&mut rng, samples.len(), sched.batch);
        let symbols: usize = batch.iter().map(|&i| samples[i].queries.len()).sum();
        let scale = 1.0 / symbols.max(1) as f64;
        let mut grads = model.params().zero_grads();
        let mut loss = 0.0;
        for &i in &batch {
            loss += intensity_loss(model, &samples[i], scale, Some(&mut grads));
        }
        check_loss(step, loss)?;
        adam.update(model.params_mut(), &grads)?;
        model.steps += 1;
        report.losses.push(loss);
        report.symbols_seen += symbols as u64;
    }
    Ok(report)
}

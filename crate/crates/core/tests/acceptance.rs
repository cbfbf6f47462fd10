//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test -p mslc --test acceptance` runs everything; numbers after `--` select criteria,
//! e.g. `cargo test -p mslc --test acceptance -- 2 5`.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use mslc::coder::{
    decode_stream, encode_stream, quantize_probs, rc_decode, rc_encode, CodecModels, Container,
    QuantizedCdf, SectionKind,
};
use mslc::compress::Deflate;
use mslc::config::SyntheticCorpus;
use mslc::entropy::{
    intensity_loss, intensity_relu_signature, intensity_samples, occupancy_loss,
    occupancy_relu_signature, occupancy_samples, IntensityModel, IntensityVariant, ModelDims,
    OccupancyModel, OccupancyVariant, Schedule,
};
use mslc::harness::{
    baseline_intensity_bpp, heldout_intensity_bpp, heldout_occupancy_bpp, ordering_violations,
    rd_monotonicity_violations, rd_point, train_intensity_model, train_occupancy_model, RdRow,
};
use mslc::metrics::{chamfer_sym, f1, psnr_d2, MetricConfig, PSNR_CAP_DB};
use mslc::nn::gradcheck::{layer_suite, relative_error};
use mslc::octree::{build_octree, leaf_offset_compressibility_probe, quantized_sweep};
use mslc::pointcloud::{
    generate_synthetic_stream, Point, RegionOfInterest, SceneParams, Sweep, SweepStream, Vec3,
};
use nalgebra::{Matrix3, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DEPTHS: std::ops::RangeInclusive<u32> = 11..=16;

// Shared training setup for the ablation-style criteria.
const TRAIN_STREAMS: usize = 200;
const HELDOUT_STREAMS: usize = 6;
const ABLATION_DEPTH: u32 = 12;
const ABLATION_STEPS: u64 = 5000;
const INTENSITY_STEPS: u64 = 2000;
const DEPTH_TRANSFER_STEPS: u64 = 500;
const LR: f64 = 1e-3;
const BATCH: usize = 4;
const SEED: u64 = 1;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Models and corpora reused across criteria, built on first use.
#[derive(Default)]
struct Shared {
    corpus: Option<(Vec<SweepStream>, Vec<SweepStream>)>,
    occupancy: BTreeMap<(u32, &'static str), OccupancyModel>,
    intensity: BTreeMap<&'static str, IntensityModel>,
}

impl Shared {
    fn corpus(&mut self) -> &(Vec<SweepStream>, Vec<SweepStream>) {
        self.corpus.get_or_insert_with(|| {
            SyntheticCorpus {
                train_streams: TRAIN_STREAMS,
                heldout_streams: HELDOUT_STREAMS,
                ..SyntheticCorpus::default()
            }
            .generate()
        })
    }

    fn schedule(steps: u64) -> Schedule {
        Schedule {
            steps,
            lr: LR,
            batch: BATCH,
            seed: SEED,
        }
    }

    fn occupancy(&mut self, depth: u32, v: OccupancyVariant) -> OccupancyModel {
        if let Some(m) = self.occupancy.get(&(depth, v.name())) {
            return m.clone();
        }
        // Depths other than the ablation depth start from the neighboring depth's weights.
        let (steps, warm) = if depth == ABLATION_DEPTH || !v.is_neural() {
            (ABLATION_STEPS, None)
        } else {
            let from = if depth > ABLATION_DEPTH {
                depth - 1
            } else {
                depth + 1
            };
            (DEPTH_TRANSFER_STEPS, Some(self.occupancy(from, v)))
        };
        let train = self.corpus().0.clone();
        let t = Instant::now();
        let (m, r) = train_occupancy_model(
            &train,
            depth,
            v,
            &ModelDims::compact(),
            &Self::schedule(steps),
            warm.as_ref(),
        )
        .expect("training");
        eprintln!(
            "  trained {v} at depth {depth}: {steps} steps, final loss {:.4} ({:.0} s)",
            r.final_loss(100).unwrap_or(f64::NAN),
            t.elapsed().as_secs_f64()
        );
        self.occupancy.insert((depth, v.name()), m.clone());
        m
    }

    fn intensity(&mut self, v: IntensityVariant) -> IntensityModel {
        if let Some(m) = self.intensity.get(v.name()) {
            return m.clone();
        }
        let train = self.corpus().0.clone();
        let t = Instant::now();
        let (m, _) = train_intensity_model(
            &train,
            ABLATION_DEPTH,
            v,
            &ModelDims::compact(),
            &Self::schedule(INTENSITY_STEPS),
        )
        .expect("training");
        eprintln!(
            "  trained intensity {v} ({:.0} s)",
            t.elapsed().as_secs_f64()
        );
        self.intensity.insert(v.name(), m.clone());
        m
    }
}

fn tiny_stream(seed: u64, sweeps: usize) -> SweepStream {
    generate_synthetic_stream(seed, sweeps, &SceneParams::tiny())
}

/// Section bytes against the model's ideal code length, for every range-coded section.
fn coder_gap_ok(enc: &[mslc::coder::EncodedSweep]) -> Result<(), String> {
    for (i, e) in enc.iter().enumerate() {
        for (kind, ideal) in [
            (SectionKind::Occupancy, e.occupancy_model_bits),
            (SectionKind::Intensity, e.intensity_model_bits),
        ] {
            let bits = 8.0 * e.frame.section(kind).len() as f64;
            if bits > ideal * 1.01 + 128.0 {
                return Err(format!(
                    "sweep {i} {}: {bits} bits vs ideal {ideal:.1}",
                    kind.name()
                ));
            }
        }
    }
    Ok(())
}

fn c1_round_trip(_: &mut Shared) -> Outcome {
    let variants = [
        (OccupancyVariant::O, IntensityVariant::Passthrough),
        (OccupancyVariant::OT, IntensityVariant::Mlp1),
        (OccupancyVariant::OTB, IntensityVariant::CC),
        (OccupancyVariant::OTBCC, IntensityVariant::CC),
    ];
    let streams: Vec<SweepStream> = (0..50).map(|i| tiny_stream(10_000 + i, 2)).collect();
    let t = Instant::now();
    let mut checked = 0;
    for d in DEPTHS {
        for (k, (ov, iv)) in variants.into_iter().enumerate() {
            let models = CodecModels::new(
                OccupancyModel::new(ov, d, ModelDims::compact(), 100 + k as u64).unwrap(),
                IntensityModel::new(iv, ModelDims::compact(), 200 + k as u64),
            );
            for (si, st) in streams.iter().enumerate() {
                let (c, enc) = encode_stream(st, &models).unwrap();
                if let Err(e) = coder_gap_ok(&enc) {
                    return outcome(false, format!("coder gap, D={d} {ov}: {e}"));
                }
                let back =
                    decode_stream(&Container::from_bytes(&c.to_bytes()).unwrap(), &models).unwrap();
                for (o, b) in st.sweeps.iter().zip(&back.sweeps) {
                    if *b != quantized_sweep(o, &st.roi, d).unwrap() {
                        return outcome(false, format!("stream {si}, D={d}, {ov}/{iv} differs"));
                    }
                    checked += 1;
                }
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        secs <= 600.0,
        format!("{checked} sweeps (50 streams x 6 depths x 4 variants) exact in {secs:.0} s (limit 600 s)"),
    )
}

fn c2_quantization_bound(_: &mut Shared) -> Outcome {
    let roi = RegionOfInterest::new(400.0, [0.0; 3]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = roi.side / 2.0;
    let mut points: Vec<Point> = (0..2000)
        .map(|_| {
            let p = [
                rng.gen_range(-h..h),
                rng.gen_range(-h..h),
                rng.gen_range(-h..h),
            ];
            Point::new(p, rng.gen())
        })
        .collect();
    points.extend(tiny_stream(3, 1).sweeps[0].points.iter().cloned());
    let sweep = Sweep::new(points, 0);
    let mut worst = 0.0f64;
    for d in 1..=16u32 {
        let bound = roi.side / f64::from(1u32 << (d + 1));
        let cell = roi.side / f64::from(1u32 << d);
        let recon = quantized_sweep(&sweep, &roi, d).unwrap();
        let mut centers: Vec<Vec3> = recon.positions();
        centers.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for p in &sweep.points {
            // Independent cell-center formula, clamping the far faces into the last cell.
            let want: Vec3 = std::array::from_fn(|a| {
                let corner = roi.center[a] - h;
                let i = ((p.position[a] - corner) / cell)
                    .floor()
                    .clamp(0.0, f64::from((1u32 << d) - 1));
                corner + (i + 0.5) * cell
            });
            let found = centers
                .iter()
                .any(|c| (0..3).all(|a| (c[a] - want[a]).abs() <= 1e-9 * roi.side));
            if !found {
                return outcome(false, format!("D={d}: no reconstruction at {want:?}"));
            }
            let err = (0..3)
                .map(|a| (p.position[a] - want[a]).abs())
                .fold(0.0, f64::max);
            if err > bound * (1.0 + 1e-12) {
                return outcome(false, format!("D={d}: error {err} > bound {bound}"));
            }
            worst = worst.max(err / bound);
        }
    }
    let b11 = roi.quantization_bound(11);
    let b16 = roi.quantization_bound(16);
    let close = (b11 - 0.0975).abs() <= 3e-4 && (b16 - 0.003).abs() <= 1e-4;
    outcome(
        close && (b11 - 0.09765625).abs() < 1e-15,
        format!(
            "max error / bound = {worst:.6} over D=1..16; bound at D=11 = {:.4} cm vs 9.75 cm (diff {:.3} mm), at D=16 = {:.4} cm vs 0.3 cm",
            b11 * 100.0,
            (b11 - 0.0975).abs() * 1000.0,
            b16 * 100.0
        ),
    )
}

fn random_cdfs(rng: &mut ChaCha8Rng, n: usize) -> Vec<(Vec<f64>, QuantizedCdf)> {
    (0..n)
        .map(|i| {
            let symbols = 256;
            // Mix flat, peaked and sparse shapes.
            let sharp = [0.2, 1.0, 4.0, 12.0][i % 4];
            let mut w: Vec<f64> = (0..symbols)
                .map(|_| {
                    let u: f64 = rng.gen_range(1e-12..1.0);
                    (-u.ln()).powf(sharp)
                })
                .collect();
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= s);
            let q = quantize_probs(&w).unwrap();
            (w, q)
        })
        .collect()
}

fn c3_coder_optimality(_: &mut Shared) -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut details = Vec::new();
    for (name, n_models) in [
        ("single model", 1usize),
        ("64 models", 64),
        ("4096 models", 4096),
    ] {
        let models = random_cdfs(&mut rng, n_models);
        let n = 1_000_000;
        let pick: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n_models)).collect();
        let symbols: Vec<u8> = pick
            .iter()
            .map(|&m| {
                let (p, _) = &models[m];
                let mut u: f64 = rng.gen();
                for (s, &ps) in p.iter().enumerate() {
                    if u < ps {
                        return s as u8;
                    }
                    u -= ps;
                }
                255
            })
            .collect();
        let cdfs: Vec<QuantizedCdf> = pick.iter().map(|&m| models[m].1.clone()).collect();
        let ce: f64 = symbols
            .iter()
            .zip(&cdfs)
            .map(|(&s, c)| c.cost_bits(s as usize))
            .sum();
        let bytes = rc_encode(&symbols, &cdfs).unwrap();
        let back = rc_decode(&bytes, n, |i, _| cdfs[i].clone()).unwrap();
        if back != symbols {
            return outcome(false, format!("{name}: decode mismatch"));
        }
        let bits = 8.0 * bytes.len() as f64;
        if bits > ce * 1.01 + 128.0 {
            return outcome(false, format!("{name}: {bits} bits > {ce:.0} x 1.01 + 128"));
        }
        details.push(format!("{name} {:.5}", bits / ce));
    }

    // All synthetic encodes with trained-size models; more covered in criterion 1.
    let models = CodecModels::new(
        OccupancyModel::new(OccupancyVariant::OTBCC, 12, ModelDims::compact(), 5).unwrap(),
        IntensityModel::new(IntensityVariant::CC, ModelDims::compact(), 5),
    );
    for i in 0..10 {
        let (_, enc) = encode_stream(&tiny_stream(500 + i, 3), &models).unwrap();
        if let Err(e) = coder_gap_ok(&enc) {
            return outcome(false, e);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        secs <= 120.0,
        format!("bits / cross-entropy on 1e6-symbol streams: {}; synthetic encodes within bound; {secs:.0} s (limit 120 s)", details.join(", ")),
    )
}

fn c4_gradients(_: &mut Shared) -> Outcome {
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut checked = 0;
    for seed in 0..100 {
        for (name, r) in layer_suite(seed) {
            if r.checked == 0 {
                return outcome(false, format!("{name} seed {seed}: nothing checked"));
            }
            checked += r.checked;
            let w = worst.entry(name).or_insert(0.0);
            *w = w.max(r.max_rel_err);
        }
    }
    // Whole models: every occupancy parameter tensor and the intensity network.
    let st = tiny_stream(44, 2);
    let occ_samples = occupancy_samples(std::slice::from_ref(&st), 4).unwrap();
    let int_samples = intensity_samples(std::slice::from_ref(&st), 6).unwrap();
    let h = 1e-6;
    let mut model_worst = 0.0f64;
    let mut skipped = 0;
    for seed in 0..3 {
        let mut m =
            OccupancyModel::new(OccupancyVariant::OTBCC, 4, ModelDims::compact(), seed).unwrap();
        jitter(m.params_mut(), seed);
        let s = &occ_samples[1];
        // Mean nats per node: on the summed loss, rounding noise at this step rivals small gradients.
        let scale = 1.0 / s.tree.nodes.len() as f64;
        let mut g = m.params().zero_grads();
        occupancy_loss(&m, s, scale, Some(&mut g));
        let base = occupancy_relu_signature(&m, s);
        for id in 0..m.params().len() {
            let j = (seed as usize * 7) % m.params().get(id).data().len();
            let orig = m.params().get(id).data()[j];
            let mut at = |v: f64| {
                m.params_mut().get_mut(id).data_mut()[j] = v;
                (
                    occupancy_loss(&m, s, scale, None),
                    occupancy_relu_signature(&m, s),
                )
            };
            let (up, down) = (at(orig + h), at(orig - h));
            m.params_mut().get_mut(id).data_mut()[j] = orig;
            if up.1 != base || down.1 != base {
                skipped += 1;
                continue;
            }
            model_worst = model_worst.max(relative_error(
                g[id].data()[j],
                (up.0 - down.0) / (2.0 * h),
                1e-4,
            ));
            checked += 1;
        }
        let mut m = IntensityModel::new(IntensityVariant::CC, ModelDims::compact(), seed);
        jitter(m.params_mut(), seed);
        let s = &int_samples[1];
        let scale = 1.0 / s.queries.len() as f64;
        let mut g = m.params().zero_grads();
        intensity_loss(&m, s, scale, Some(&mut g));
        let base = intensity_relu_signature(&m, s);
        for id in 0..m.params().len() {
            let j = (seed as usize * 5) % m.params().get(id).data().len();
            let orig = m.params().get(id).data()[j];
            let mut at = |v: f64| {
                m.params_mut().get_mut(id).data_mut()[j] = v;
                (
                    intensity_loss(&m, s, scale, None),
                    intensity_relu_signature(&m, s),
                )
            };
            let (up, down) = (at(orig + h), at(orig - h));
            m.params_mut().get_mut(id).data_mut()[j] = orig;
            if up.1 != base || down.1 != base {
                skipped += 1;
                continue;
            }
            model_worst = model_worst.max(relative_error(
                g[id].data()[j],
                (up.0 - down.0) / (2.0 * h),
                1e-4,
            ));
            checked += 1;
        }
    }
    let layer_max = worst.values().copied().fold(0.0, f64::max);
    let per: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    outcome(
        layer_max < 1e-4 && model_worst < 1e-4,
        format!(
            "{checked} coordinates over 100 configurations; max relative error {} ; full models {model_worst:.1e} ({skipped} kink-crossing coordinates skipped)",
            per.join(", ")
        ),
    )
}

/// Moves zero-initialized biases off ReLU kinks (exact-match neighbors have zero offset).
fn jitter(store: &mut mslc::nn::ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for id in 0..store.len() {
        for v in store.get_mut(id).data_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
    }
}

fn brute_knn(p: &Vec3, cloud: &[Vec3], k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = cloud
        .iter()
        .enumerate()
        .map(|(i, q)| (dist_sq(p, q), i))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.into_iter().take(k).map(|x| x.1).collect()
}

fn dist_sq(a: &Vec3, b: &Vec3) -> f64 {
    (0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum()
}

fn oracle_f1(o: &Sweep, r: &Sweep, cfg: &MetricConfig) -> f64 {
    let m = |a: &Point, b: &Point| {
        dist_sq(&a.position, &b.position) <= cfg.tau_geo * cfg.tau_geo
            && (i32::from(a.intensity) - i32::from(b.intensity)).abs() <= i32::from(cfg.tau_int)
    };
    let tp = r
        .points
        .iter()
        .filter(|p| o.points.iter().any(|q| m(p, q)))
        .count();
    let fn_ = o
        .points
        .iter()
        .filter(|q| !r.points.iter().any(|p| m(p, q)))
        .count();
    let fp = r.len() - tp;
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

fn oracle_mean_nn(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter()
        .map(|p| {
            b.iter()
                .map(|q| dist_sq(p, q))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum::<f64>()
        / a.len() as f64
}

fn oracle_psnr(o: &Sweep, r: &Sweep, cfg: &MetricConfig) -> f64 {
    let (a, b) = (o.positions(), r.positions());
    let normals: Vec<Vec3> = a
        .iter()
        .map(|p| {
            let nb = brute_knn(p, &a, cfg.normal_k);
            let n = nb.len() as f64;
            let mean: Vec3 = std::array::from_fn(|k| nb.iter().map(|&i| a[i][k]).sum::<f64>() / n);
            let mut cov = Matrix3::zeros();
            for &i in &nb {
                let d = nalgebra::Vector3::from_fn(|k, _| a[i][k] - mean[k]);
                cov += d * d.transpose();
            }
            let e = SymmetricEigen::new(cov);
            let k = e.eigenvalues.imin();
            let v = e.eigenvectors.column(k);
            [v[0], v[1], v[2]]
        })
        .collect();
    let proj = |p: &Vec3, q: &Vec3, n: &Vec3| {
        let e: f64 = (0..3).map(|i| (p[i] - q[i]) * n[i]).sum();
        e * e
    };
    let ab: f64 = a
        .iter()
        .enumerate()
        .map(|(i, p)| proj(p, &b[brute_knn(p, &b, 1)[0]], &normals[i]))
        .sum::<f64>()
        / a.len() as f64;
    let ba: f64 = b
        .iter()
        .map(|q| {
            let i = brute_knn(q, &a, 1)[0];
            proj(q, &a[i], &normals[i])
        })
        .sum::<f64>()
        / b.len() as f64;
    let mse = ab.max(ba);
    if mse == 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (3.0 * cfg.peak * cfg.peak / mse).log10()).min(PSNR_CAP_DB)
    }
}

fn c5_metric_oracles(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_psnr = 0.0f64;
    for pair in 0..100 {
        let n = rng.gen_range(3..=200);
        let m = rng.gen_range(3..=200);
        let spread = rng.gen_range(0.5..5.0);
        let orig: Vec<Point> = (0..n)
            .map(|_| {
                let p = std::array::from_fn(|_| rng.gen_range(-spread..spread));
                Point::new(p, rng.gen_range(0..8))
            })
            .collect();
        let recon: Vec<Point> = (0..m)
            .map(|_| {
                let base = &orig[rng.gen_range(0..n)];
                let p = std::array::from_fn(|k| base.position[k] + rng.gen_range(-0.15..0.15));
                let i = base.intensity.saturating_add(rng.gen_range(0..3));
                Point::new(p, i)
            })
            .collect();
        let (o, r) = (Sweep::new(orig, 0), Sweep::new(recon, 0));
        for tau_int in [0u8, 1, 3] {
            let cfg = MetricConfig {
                tau_int,
                ..MetricConfig::default()
            };
            let (got, want) = (f1(&o, &r, &cfg), oracle_f1(&o, &r, &cfg));
            if got != want {
                return outcome(false, format!("pair {pair}: F1 {got} vs {want}"));
            }
        }
        let c = chamfer_sym(&o, &r).unwrap();
        let want = oracle_mean_nn(&o.positions(), &r.positions())
            .max(oracle_mean_nn(&r.positions(), &o.positions()));
        if c != want {
            return outcome(false, format!("pair {pair}: Chamfer {c} vs {want}"));
        }
        let cfg = MetricConfig::default();
        let (got, want) = (psnr_d2(&o, &r, &cfg).unwrap().db, oracle_psnr(&o, &r, &cfg));
        let rel = (got - want).abs() / want.abs();
        worst_psnr = worst_psnr.max(rel);
        if rel > 1e-9 {
            return outcome(false, format!("pair {pair}: PSNR {got} vs {want}"));
        }
    }
    outcome(
        true,
        format!("100 pairs: F1 and Chamfer bit-exact, PSNR max relative error {worst_psnr:.1e}"),
    )
}

fn occupancy_ablation(sh: &mut Shared, depth: u32) -> Vec<(&'static str, f64)> {
    let held = sh.corpus().1.clone();
    [
        OccupancyVariant::OTBCC,
        OccupancyVariant::OTB,
        OccupancyVariant::OT,
        OccupancyVariant::O,
    ]
    .into_iter()
    .map(|v| {
        (
            v.name(),
            heldout_occupancy_bpp(&sh.occupancy(depth, v), &held).unwrap(),
        )
    })
    .collect()
}

fn fmt_rows(rows: &[(&str, f64)]) -> String {
    rows.iter()
        .map(|(n, b)| format!("{n} {b:.4}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn c6_occupancy_ablation(sh: &mut Shared) -> Outcome {
    let t = Instant::now();
    let rows = occupancy_ablation(sh, ABLATION_DEPTH);
    let secs = t.elapsed().as_secs_f64();
    let (cc, o) = (rows[0].1, rows[3].1);
    let gain = 1.0 - cc / o;
    let bad = ordering_violations(&rows, 0.005);
    outcome(
        gain >= 0.03 && bad.is_empty() && secs <= 3600.0,
        format!(
            "held-out bpp at D={ABLATION_DEPTH}, {ABLATION_STEPS} steps: {}; OTBCC below O by {:.1}%; {}; {secs:.0} s",
            fmt_rows(&rows),
            100.0 * gain,
            if bad.is_empty() { "ordering holds".into() } else { bad.join("; ") }
        ),
    )
}

fn c7_intensity_ablation(sh: &mut Shared) -> Outcome {
    let held = sh.corpus().1.clone();
    let cc =
        heldout_intensity_bpp(&sh.intensity(IntensityVariant::CC), &held, ABLATION_DEPTH).unwrap();
    let mlp1 = heldout_intensity_bpp(&sh.intensity(IntensityVariant::Mlp1), &held, ABLATION_DEPTH)
        .unwrap();
    let base = baseline_intensity_bpp(&Deflate, &held, ABLATION_DEPTH).unwrap();
    let rows = [("CC", cc), ("MLP1", mlp1), ("zlib", base)];
    let gain = 1.0 - cc / base;
    let bad = ordering_violations(&rows, 0.005);
    outcome(
        gain >= 0.05 && bad.is_empty(),
        format!(
            "held-out intensity bpp: {}; CC below zlib by {:.1}%; {}",
            fmt_rows(&rows),
            100.0 * gain,
            if bad.is_empty() {
                "ordering holds".into()
            } else {
                bad.join("; ")
            }
        ),
    )
}

fn c8_learned_beats_histogram(sh: &mut Shared) -> Outcome {
    let held = sh.corpus().1.clone();
    let mut ok = true;
    let mut parts = Vec::new();
    for d in DEPTHS {
        let cc = heldout_occupancy_bpp(&sh.occupancy(d, OccupancyVariant::OTBCC), &held).unwrap();
        let hist =
            heldout_occupancy_bpp(&sh.occupancy(d, OccupancyVariant::Histogram), &held).unwrap();
        ok &= cc < hist;
        parts.push(format!("D={d} {cc:.3}<{hist:.3}"));
    }
    outcome(ok, format!("OTBCC vs histogram bpp: {}", parts.join(", ")))
}

fn c9_rd_monotone(sh: &mut Shared) -> Outcome {
    let held = sh.corpus().1.clone();
    let intensity = sh.intensity(IntensityVariant::CC);
    let rows: Vec<RdRow> = DEPTHS
        .map(|d| {
            let models =
                CodecModels::new(sh.occupancy(d, OccupancyVariant::OTBCC), intensity.clone());
            rd_point(&held, &models, &MetricConfig::default())
                .unwrap()
                .0
        })
        .collect();
    let bad = rd_monotonicity_violations(&rows);
    let desc: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "D={} {:.2}bpp F1 {:.3} CD {:.4} PSNR {:.1}",
                r.depth, r.bpp_total, r.f1, r.chamfer, r.psnr
            )
        })
        .collect();
    outcome(
        bad.is_empty(),
        format!(
            "{}{}",
            desc.join("; "),
            if bad.is_empty() {
                String::new()
            } else {
                format!(" | {}", bad.join("; "))
            }
        ),
    )
}

fn c10_leaf_offsets(sh: &mut Shared) -> Outcome {
    let (train, held) = sh.corpus().clone();
    let mut other = vec![tiny_stream(77, 4)];
    other.push(generate_synthetic_stream(78, 2, &SceneParams::default()));
    let mut ok = true;
    let mut parts = Vec::new();
    for d in DEPTHS {
        let leaf: Vec<Vec<u8>> = train
            .iter()
            .chain(&held)
            .chain(&other)
            .flat_map(|st| {
                st.sweeps
                    .iter()
                    .map(move |s| build_octree(s, &st.roi, d).unwrap().packed_offsets())
            })
            .collect();
        let r = leaf_offset_compressibility_probe(&leaf, &Deflate);
        ok &= r.ratio() >= 0.99;
        parts.push(format!("D={d} {:.3}", r.ratio()));
    }
    outcome(
        ok,
        format!("zlib size / raw size of leaf offsets: {}", parts.join(", ")),
    )
}

fn c11_determinism(sh: &mut Shared) -> Outcome {
    let train: Vec<SweepStream> = sh.corpus().0[..4].to_vec();
    let sched = Schedule {
        steps: 20,
        lr: LR,
        batch: BATCH,
        seed: 7,
    };
    let dims = ModelDims::compact();
    let occ = || -> Vec<u8> {
        train_occupancy_model(&train, 10, OccupancyVariant::OTBCC, &dims, &sched, None)
            .unwrap()
            .0
            .to_checkpoint()
            .to_bytes()
    };
    let int = || -> Vec<u8> {
        train_intensity_model(&train, 10, IntensityVariant::CC, &dims, &sched)
            .unwrap()
            .0
            .to_checkpoint()
            .to_bytes()
    };
    let (o1, o2, i1, i2) = (occ(), occ(), int(), int());
    if o1 != o2 || i1 != i2 {
        return outcome(false, "repeated training produced different checkpoints");
    }
    let models = CodecModels::new(
        OccupancyModel::from_checkpoint(&mslc::nn::Checkpoint::from_bytes(&o1).unwrap()).unwrap(),
        IntensityModel::from_checkpoint(&mslc::nn::Checkpoint::from_bytes(&i1).unwrap()).unwrap(),
    );
    let st = &sh.corpus().1[0];
    let c1 = encode_stream(st, &models).unwrap().0.to_bytes();
    let c2 = encode_stream(st, &models).unwrap().0.to_bytes();
    let d1 = decode_stream(&Container::from_bytes(&c1).unwrap(), &models).unwrap();
    let d2 = decode_stream(&Container::from_bytes(&c2).unwrap(), &models).unwrap();
    outcome(
        c1 == c2 && d1 == d2,
        format!(
            "checkpoints ({} + {} bytes), containers ({} bytes) and decodes identical across runs",
            o1.len(),
            i1.len(),
            c1.len()
        ),
    )
}

type Criterion = (u32, &'static str, fn(&mut Shared) -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        (1, "lossless round trip", c1_round_trip),
        (2, "quantization bound", c2_quantization_bound),
        (3, "coder optimality", c3_coder_optimality),
        (4, "gradient correctness", c4_gradients),
        (5, "metric oracles", c5_metric_oracles),
        (6, "occupancy ablation direction", c6_occupancy_ablation),
        (7, "intensity ablation direction", c7_intensity_ablation),
        (8, "learned beats histogram", c8_learned_beats_histogram),
        (9, "RD monotonicity", c9_rd_monotone),
        (10, "leaf-offset probe", c10_leaf_offsets),
        (11, "determinism", c11_determinism),
    ];
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut shared = Shared::default();
    let mut failed = 0;
    let start = Instant::now();
    for (n, name, f) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let o = catch_unwind(AssertUnwindSafe(|| f(&mut shared)))
            .unwrap_or_else(|e| outcome(false, format!("panicked: {}", panic_text(&e))));
        let el = t.elapsed();
        println!(
            "{} [{n:>2}] {name}: {} ({})",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            fmt_dur(el)
        );
        failed += usize::from(!o.pass);
    }
    println!(
        "acceptance: {failed} failed, total {}",
        fmt_dur(start.elapsed())
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

fn panic_text(e: &Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default()
}

fn fmt_dur(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}

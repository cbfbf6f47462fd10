use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mslc::coder::{decode_stream, encode_stream, CodecModels, Container, SectionKind};
use mslc::compress::Deflate;
use mslc::config::JobConfig;
use mslc::entropy::{
    corpus_hash, model_card, IntensityModel, IntensityVariant, ModelDims, OccupancyModel,
    OccupancyVariant, TrainReport,
};
use mslc::harness::{
    ablation_csv, baseline_intensity_bpp, heldout_intensity_bpp, heldout_occupancy_bpp, rd_csv,
    rd_monotonicity_violations, rd_point, rd_svg, train_intensity_model, train_occupancy_model,
    AblationRow,
};
use mslc::metrics::{chamfer_sym, f1, frame_bitrates, psnr_d2, quality_csv, QualityRow};
use mslc::nn::Checkpoint;
use mslc::octree::{build_octree, leaf_offset_compressibility_probe, MAX_DEPTH};
use mslc::pointcloud::{
    generate_synthetic_stream, parse_kitti_bytes, read_stream, read_stream_file,
    RegionOfInterest, RigidTransform, SceneParams, SweepStream,
};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::{ConvertArgs, DecodeArgs, EncodeArgs, EvalArgs, JobArgs, ModelArgs, ProbeArgs, RdSweepArgs};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Codec(#[from] mslc::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Codec(mslc::Error::Corruption { .. } | mslc::Error::Format(_)) => 2,
            CliError::Codec(mslc::Error::Divergence { .. }) => 3,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Codec(e.into())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(CliError::Usage(msg.into()))
}

pub fn occupancy_path(dir: &Path, depth: u32) -> PathBuf {
    dir.join(format!("occ_d{depth}.ckpt"))
}

pub fn intensity_path(dir: &Path, depth: u32) -> PathBuf {
    dir.join(format!("int_d{depth}.ckpt"))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_logged(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    eprintln!("wrote {} ({} bytes, sha256 {})", path.display(), bytes.len(), sha256_hex(bytes));
    Ok(())
}

fn load_job(config: Option<&Path>) -> Result<JobConfig> {
    Ok(JobConfig::load(config, std::env::vars())?)
}

pub fn convert(a: &ConvertArgs) -> Result<()> {
    let center: [f64; 3] = a
        .roi_center
        .as_slice()
        .try_into()
        .map_err(|_| CliError::Usage("--roi-center takes three values".into()))?;
    let roi = RegionOfInterest::new(a.roi_side, center)?;
    let stream = if a.synthetic {
        let mut scene = match a.scene.as_str() {
            "tiny" => SceneParams::tiny(),
            "default" => SceneParams::default(),
            s => return usage(format!("unknown scene {s:?}, expected tiny or default")),
        };
        if a.sweeps == 0 {
            return usage("--sweeps must be positive");
        }
        scene.roi_side = a.roi_side;
        let mut s = generate_synthetic_stream(a.seed, a.sweeps, &scene);
        s.roi = roi;
        s
    } else {
        let dir = a.kitti.as_ref().expect("clap requires --kitti without --synthetic");
        let mut files: Vec<PathBuf> = fs::read_dir(dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        files.retain(|p| p.extension().is_some_and(|e| e == "bin"));
        files.sort();
        if files.is_empty() {
            return usage(format!("no .bin files in {}", dir.display()));
        }
        let poses = match &a.poses {
            Some(p) => Some(read_kitti_poses(p)?),
            None => None,
        };
        let mut sweeps = Vec::with_capacity(files.len());
        for (i, f) in files.iter().enumerate() {
            let mut s = parse_kitti_bytes(&fs::read(f)?, i as u64)?;
            if let Some(p) = &poses {
                let pose = p.get(i).ok_or_else(|| {
                    mslc::Error::Format(format!("pose file has {} lines, need {}", p.len(), files.len()))
                })?;
                s = s.with_pose(*pose);
            }
            sweeps.push(s);
        }
        SweepStream::new(roi, sweeps)?
    };
    write_logged(&a.out, &mslc::pointcloud::write_stream(&stream))?;
    eprintln!("{} sweeps, {} points", stream.sweeps.len(), stream.point_count());
    Ok(())
}

fn read_kitti_poses(path: &Path) -> Result<Vec<RigidTransform>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| mslc::Error::Format(format!("{}:{}: {e}", path.display(), n + 1)))?;
        if v.len() != 12 {
            return Err(mslc::Error::Format(format!("{}:{}: expected 12 values", path.display(), n + 1)).into());
        }
        // KITTI rows are [r00 r01 r02 tx | r10 r11 r12 ty | r20 r21 r22 tz].
        let mut a = [0.0; 12];
        for r in 0..3 {
            a[r * 3..r * 3 + 3].copy_from_slice(&v[r * 4..r * 4 + 3]);
            a[9 + r] = v[r * 4 + 3];
        }
        out.push(RigidTransform::from_array(&a));
    }
    Ok(out)
}

fn check_depth_arg(depth: u32) -> Result<()> {
    if !(1..=MAX_DEPTH).contains(&depth) {
        return usage(format!("depth {depth} outside 1..={MAX_DEPTH}"));
    }
    Ok(())
}

fn load_models(m: &ModelArgs, depth: u32) -> Result<CodecModels> {
    let (occ, int) = match (&m.models, &m.occupancy) {
        (Some(dir), _) => (occupancy_path(dir, depth), Some(intensity_path(dir, depth))),
        (None, Some(o)) => (o.clone(), m.intensity.clone()),
        (None, None) => return usage("give --models DIR or --occupancy FILE"),
    };
    let occupancy = OccupancyModel::from_checkpoint(&Checkpoint::load(&occ)?)?;
    if occupancy.depth != depth {
        return usage(format!(
            "{} was trained for depth {}, not {depth}",
            occ.display(),
            occupancy.depth
        ));
    }
    let intensity = match int {
        Some(p) => IntensityModel::from_checkpoint(&Checkpoint::load(p)?)?,
        None => IntensityModel::new(IntensityVariant::Passthrough, ModelDims::compact(), 0),
    };
    Ok(CodecModels::new(occupancy, intensity))
}

pub fn encode(a: &EncodeArgs) -> Result<()> {
    check_depth_arg(a.depth)?;
    let models = load_models(&a.models, a.depth)?;
    let stream = read_stream_file(&a.input)?;
    let t = Instant::now();
    let (c, _) = encode_stream(&stream, &models)?;
    let per_sweep = t.elapsed().as_secs_f64() / stream.sweeps.len().max(1) as f64;
    for (i, f) in c.frames.iter().enumerate() {
        let sizes: Vec<String> = SectionKind::ALL
            .iter()
            .map(|k| format!("{}={}", k.name(), f.section(*k).len()))
            .collect();
        eprintln!("sweep {i}: {} bytes ({})", f.encoded_len(), sizes.join(" "));
    }
    eprintln!("encoded {} sweeps in {:.3} s ({per_sweep:.3} s/sweep)", c.frames.len(), t.elapsed().as_secs_f64());
    write_logged(&a.out, &c.to_bytes())
}

pub fn decode(a: &DecodeArgs) -> Result<()> {
    let c = Container::load(&a.input)?;
    let models = load_models(&a.models, c.depth)?;
    let t = Instant::now();
    let s = decode_stream(&c, &models)?;
    eprintln!("decoded {} sweeps in {:.3} s", s.sweeps.len(), t.elapsed().as_secs_f64());
    write_logged(&a.out, &mslc::pointcloud::write_stream(&s))
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let cfg = load_job(a.config.as_deref())?;
    let orig = read_stream_file(&a.original)?;
    let c = Container::load(&a.container)?;
    let models = load_models(&a.models, c.depth)?;
    let dec = decode_stream(&c, &models)?;
    if dec.sweeps.len() != orig.sweeps.len() {
        return usage(format!(
            "container has {} sweeps, original stream {}",
            dec.sweeps.len(),
            orig.sweeps.len()
        ));
    }
    let mut rows = Vec::new();
    for (i, ((o, d), br)) in orig.sweeps.iter().zip(&dec.sweeps).zip(frame_bitrates(&c)?).enumerate() {
        if o.is_empty() || d.is_empty() {
            eprintln!("sweep {i}: empty, skipped");
            continue;
        }
        rows.push(QualityRow {
            sweep: i,
            depth: c.depth,
            bpp_total: br.bpp_total()?,
            bpp_spatial: br.bpp_spatial()?,
            f1: f1(o, d, &cfg.metrics),
            chamfer: chamfer_sym(o, d)?,
            psnr: psnr_d2(o, d, &cfg.metrics)?.db,
        });
    }
    let csv = quality_csv(&rows);
    match &a.out {
        Some(p) => write_logged(p, csv.as_bytes()),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn parse_depths(s: &str) -> Result<Vec<u32>> {
    let bad = || CliError::Usage(format!("bad depth range {s:?}"));
    let (lo, hi) = match s.split_once('-') {
        Some((a, b)) => (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?),
        None => {
            let d = s.trim().parse().map_err(|_| bad())?;
            (d, d)
        }
    };
    if lo > hi {
        return Err(bad());
    }
    for d in [lo, hi] {
        check_depth_arg(d)?;
    }
    Ok((lo..=hi).collect())
}

fn read_streams(paths: &[PathBuf]) -> Result<Vec<SweepStream>> {
    Ok(paths.iter().map(read_stream_file).collect::<mslc::Result<_>>()?)
}

pub fn rd_sweep(a: &RdSweepArgs) -> Result<()> {
    let cfg = load_job(a.config.as_deref())?;
    let depths = match &a.depths {
        Some(s) => parse_depths(s)?,
        None => cfg.depths().collect(),
    };
    let streams = if a.input.is_empty() {
        cfg.corpus.load()?.1
    } else {
        read_streams(&a.input)?
    };
    for d in &depths {
        for p in [occupancy_path(&a.models, *d), intensity_path(&a.models, *d)] {
            if !p.exists() {
                return usage(format!("missing checkpoint {}", p.display()));
            }
        }
    }
    let mut rows = Vec::new();
    let mut quality = Vec::new();
    for &d in &depths {
        let models = load_models(
            &ModelArgs {
                models: Some(a.models.clone()),
                occupancy: None,
                intensity: None,
            },
            d,
        )?;
        let t = Instant::now();
        let (row, q, _) = rd_point(&streams, &models, &cfg.metrics)?;
        eprintln!(
            "depth {d}: {:.3} bpp, F1 {:.4}, chamfer {:.4} m, PSNR {:.2} dB ({:.1} s)",
            row.bpp_total,
            row.f1,
            row.chamfer,
            row.psnr,
            t.elapsed().as_secs_f64()
        );
        rows.push(row);
        quality.extend(q);
    }
    for v in rd_monotonicity_violations(&rows) {
        eprintln!("warning: {v}");
    }
    write_logged(&a.out.join("rd.csv"), rd_csv(&rows).as_bytes())?;
    write_logged(&a.out.join("quality.csv"), quality_csv(&quality).as_bytes())?;
    write_logged(&a.out.join("rd.svg"), rd_svg(&rows, "mslc").as_bytes())
}

fn job_with_out(a: &JobArgs) -> Result<JobConfig> {
    let mut cfg = load_job(a.config.as_deref())?;
    if let Some(o) = &a.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn push_losses(csv: &mut String, model: &str, depth: u32, r: &TrainReport) {
    for (i, l) in r.losses.iter().enumerate() {
        let _ = writeln!(csv, "{model},{depth},{i},{l:.6}");
    }
}

pub fn train(a: &JobArgs) -> Result<()> {
    let cfg = job_with_out(a)?;
    let dims = cfg.model_dims()?;
    let (train, _) = cfg.corpus.load()?;
    if train.is_empty() {
        return usage("training corpus is empty");
    }
    let corpus = corpus_hash(&train);
    eprintln!("corpus: {} streams, sha256 {corpus}", train.len());
    let out = &cfg.output_dir;
    fs::create_dir_all(out)?;
    write_logged(&out.join("job.toml"), cfg.to_toml().as_bytes())?;
    let mut losses = String::from("model,depth,step,loss\n");
    let mut cards = String::new();
    let mut prev: Option<OccupancyModel> = None;
    for d in cfg.depths() {
        let t = Instant::now();
        let warm = if a.warm_start { prev.as_ref() } else { None };
        let (occ, r) = train_occupancy_model(&train, d, cfg.variant, &dims, &cfg.schedule, warm)?;
        eprintln!(
            "depth {d}: occupancy {} trained in {:.1} s, final loss {:.4} nats",
            cfg.variant,
            t.elapsed().as_secs_f64(),
            r.final_loss(50).unwrap_or(f64::NAN)
        );
        push_losses(&mut losses, cfg.variant.name(), d, &r);
        let ck = occ.to_checkpoint();
        write_logged(&occupancy_path(out, d), &ck.to_bytes())?;
        let _ = writeln!(cards, "[{}]\n{}", occupancy_path(out, d).display(), model_card(&ck, &corpus));

        let t = Instant::now();
        let (int, r) =
            train_intensity_model(&train, d, cfg.intensity_variant, &dims, cfg.intensity_schedule())?;
        eprintln!(
            "depth {d}: intensity {} trained in {:.1} s",
            cfg.intensity_variant,
            t.elapsed().as_secs_f64()
        );
        push_losses(&mut losses, cfg.intensity_variant.name(), d, &r);
        let ck = int.to_checkpoint();
        write_logged(&intensity_path(out, d), &ck.to_bytes())?;
        let _ = writeln!(cards, "[{}]\n{}", intensity_path(out, d).display(), model_card(&ck, &corpus));
        prev = Some(occ);
    }
    write_logged(&out.join("losses.csv"), losses.as_bytes())?;
    write_logged(&out.join("model_card.txt"), cards.as_bytes())
}

pub fn ablate(a: &JobArgs) -> Result<()> {
    let cfg = job_with_out(a)?;
    let dims = cfg.model_dims()?;
    let (train, held) = cfg.corpus.load()?;
    if train.is_empty() || held.is_empty() {
        return usage("ablation needs nonempty training and held-out corpora");
    }
    let mut occ_rows = Vec::new();
    let mut int_rows = Vec::new();
    for d in cfg.depths() {
        let mut ordered = Vec::new();
        for v in OccupancyVariant::ALL {
            let t = Instant::now();
            let (m, _) = train_occupancy_model(&train, d, v, &dims, &cfg.schedule, None)?;
            let bpp = heldout_occupancy_bpp(&m, &held)?;
            eprintln!("depth {d}: {v} {bpp:.4} bpp ({:.1} s)", t.elapsed().as_secs_f64());
            occ_rows.push(AblationRow {
                depth: d,
                model: v.name().into(),
                bpp,
            });
            if v.is_neural() {
                ordered.push((v.name(), bpp));
            }
        }
        ordered.reverse();
        for v in mslc::harness::ordering_violations(&ordered, 0.005) {
            eprintln!("warning: depth {d}: {v}");
        }

        let base = baseline_intensity_bpp(&Deflate, &held, d)?;
        int_rows.push(AblationRow {
            depth: d,
            model: "zlib".into(),
            bpp: base,
        });
        eprintln!("depth {d}: intensity zlib {base:.4} bpp");
        for v in [IntensityVariant::Mlp1, IntensityVariant::CC] {
            let (m, _) = train_intensity_model(&train, d, v, &dims, cfg.intensity_schedule())?;
            let bpp = heldout_intensity_bpp(&m, &held, d)?;
            eprintln!("depth {d}: intensity {v} {bpp:.4} bpp");
            int_rows.push(AblationRow {
                depth: d,
                model: v.name().into(),
                bpp,
            });
        }
    }
    let out = &cfg.output_dir;
    write_logged(&out.join("ablation_occupancy.csv"), ablation_csv(&occ_rows).as_bytes())?;
    write_logged(&out.join("ablation_intensity.csv"), ablation_csv(&int_rows).as_bytes())
}

pub fn probe(a: &ProbeArgs) -> Result<()> {
    check_depth_arg(a.depth)?;
    let streams = if a.input.is_empty() {
        let (mut t, h) = load_job(a.config.as_deref())?.corpus.load()?;
        t.extend(h);
        t
    } else {
        read_streams(&a.input)?
    };
    let mut leaf = Vec::new();
    for st in &streams {
        for s in &st.sweeps {
            leaf.push(build_octree(s, &st.roi, a.depth)?.packed_offsets());
        }
    }
    let r = leaf_offset_compressibility_probe(&leaf, &Deflate);
    println!("sweep,raw_bytes,compressed_bytes");
    for (i, row) in r.rows.iter().enumerate() {
        println!("{i},{},{}", row.raw_bytes, row.compressed_bytes);
    }
    eprintln!(
        "{}: {} -> {} bytes, ratio {:.4}",
        r.compressor,
        r.total_raw(),
        r.total_compressed(),
        r.ratio()
    );
    Ok(())
}

pub fn info(path: &Path) -> Result<()> {
    let bytes = fs::read(path)?;
    match bytes.get(..4) {
        Some(b"MSC1") => {
            let c = Container::from_bytes(&bytes)?;
            println!("container: depth {}, roi side {} m at {:?}", c.depth, c.roi.side, c.roi.center);
            println!("model hash: {:016x}", c.model_hash);
            println!("frames: {}", c.frames.len());
            for k in SectionKind::ALL {
                let n: usize = c.frames.iter().map(|f| f.section(k).len()).sum();
                println!("  {}: {n} bytes", k.name());
            }
            let br = mslc::metrics::bitrate(&c)?;
            if let Ok(bpp) = br.bpp_total() {
                println!("bitrate: {bpp:.4} bits/point over {} points", br.points);
            }
        }
        Some(b"MSCK") => {
            let ck = Checkpoint::from_bytes(&bytes)?;
            print!("{}", model_card(&ck, "unknown"));
            println!("tensors: {}", ck.tensors.len());
        }
        Some(b"MSLC") => {
            let s = read_stream(&bytes)?;
            println!("stream: roi side {} m at {:?}", s.roi.side, s.roi.center);
            println!("sweeps: {}, points: {}", s.sweeps.len(), s.point_count());
            println!("poses: {}", s.sweeps.iter().filter(|w| w.pose.is_some()).count());
        }
        _ => return Err(mslc::Error::Format(format!("{}: unrecognized file type", path.display())).into()),
    }
    println!("sha256: {}", sha256_hex(&bytes));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_ranges() {
        assert_eq!(parse_depths("11-16").unwrap(), (11..=16).collect::<Vec<_>>());
        assert_eq!(parse_depths("12").unwrap(), vec![12]);
        assert!(parse_depths("16-11").is_err());
        assert!(parse_depths("0-3").is_err());
        assert!(parse_depths("x").is_err());
    }

    #[test]
    fn exit_codes() {
        let c = |e: mslc::Error| CliError::from(e).exit_code();
        assert_eq!(c(mslc::Error::Format("x".into())), 2);
        assert_eq!(c(mslc::Error::Divergence { step: 3, reason: "nan".into() }), 3);
        assert_eq!(c(mslc::Error::InvalidArgument("x".into())), 1);
        assert_eq!(CliError::Usage("x".into()).exit_code(), 1);
    }
}

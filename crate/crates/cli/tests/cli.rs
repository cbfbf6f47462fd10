use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mslc::octree::quantized_sweep;
use mslc::pointcloud::read_stream_file;

fn mslc(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mslc"));
    c.args(args);
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let o = mslc(args, &[]);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn job(dir: &Path, variant: &str) -> PathBuf {
    let p = dir.join("job.toml");
    std::fs::write(
        &p,
        format!(
            "depth_min = 5\ndepth_max = 6\npreset = \"compact\"\nvariant = \"{variant}\"\n\
             output_dir = \"{}\"\n[schedule]\nsteps = 2\nbatch = 2\n\
             [corpus.synthetic]\ntrain_streams = 2\nheldout_streams = 1\nsweeps = 2\n",
            s(&dir.join("models"))
        ),
    )
    .unwrap();
    p
}

#[test]
fn train_encode_decode_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let input = d.join("s.mls");
    ok(&["convert", "--synthetic", "--seed", "9", "--sweeps", "3", "-o", s(&input)]);
    let cfg = job(d, "OTBCC");
    ok(&["train", "-c", s(&cfg)]);
    let models = d.join("models");
    for f in ["occ_d5.ckpt", "int_d5.ckpt", "occ_d6.ckpt", "int_d6.ckpt", "losses.csv", "model_card.txt"] {
        assert!(models.join(f).exists(), "{f}");
    }
    let losses = std::fs::read_to_string(models.join("losses.csv")).unwrap();
    assert_eq!(losses.lines().count(), 1 + 2 * 2 * 2);

    let c1 = d.join("a.msc");
    let c2 = d.join("b.msc");
    for c in [&c1, &c2] {
        ok(&["encode", "-i", s(&input), "-d", "6", "--models", s(&models), "-o", s(c)]);
    }
    assert_eq!(std::fs::read(&c1).unwrap(), std::fs::read(&c2).unwrap());

    let out = d.join("d.mls");
    ok(&["--deterministic", "decode", "-i", s(&c1), "--models", s(&models), "-o", s(&out)]);
    let orig = read_stream_file(&input).unwrap();
    let back = read_stream_file(&out).unwrap();
    assert_eq!(back.sweeps.len(), 3);
    for (o, b) in orig.sweeps.iter().zip(&back.sweeps) {
        assert_eq!(*b, quantized_sweep(o, &orig.roi, 6).unwrap());
    }

    let o = ok(&["eval", "--original", s(&input), "--container", s(&c1), "--models", s(&models)]);
    let csv = String::from_utf8(o.stdout).unwrap();
    assert!(csv.starts_with("sweep,depth,bpp_total,bpp_spatial,f1,chamfer,psnr\n"));
    assert_eq!(csv.lines().count(), 4);

    let rd = d.join("rd");
    ok(&["rd-sweep", "-i", s(&input), "--models", s(&models), "--depths", "5-6", "-o", s(&rd)]);
    let rows = std::fs::read_to_string(rd.join("rd.csv")).unwrap();
    assert_eq!(rows.lines().count(), 3);
    assert!(std::fs::read_to_string(rd.join("rd.svg")).unwrap().starts_with("<svg"));

    let o = ok(&["info", s(&c1)]);
    assert!(String::from_utf8(o.stdout).unwrap().contains("depth 6"));
}

#[test]
fn training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = job(dir.path(), "OT");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["train", "-c", s(&cfg), "-o", s(&a)]);
    ok(&["train", "-c", s(&cfg), "-o", s(&b)]);
    for f in ["occ_d5.ckpt", "int_d6.ckpt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
}

#[test]
fn histogram_model_with_raw_intensity() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = job(d, "histogram");
    ok(&["train", "-c", s(&cfg)]);
    let input = d.join("s.mls");
    ok(&["convert", "--synthetic", "--sweeps", "2", "-o", s(&input)]);
    let occ = d.join("models/occ_d5.ckpt");
    let c = d.join("c.msc");
    ok(&["encode", "-i", s(&input), "-d", "5", "--occupancy", s(&occ), "-o", s(&c)]);
    let out = d.join("d.mls");
    ok(&["decode", "-i", s(&c), "--occupancy", s(&occ), "-o", s(&out)]);
    let orig = read_stream_file(&input).unwrap();
    let back = read_stream_file(&out).unwrap();
    assert_eq!(back.sweeps[1], quantized_sweep(&orig.sweeps[1], &orig.roi, 5).unwrap());

    // Depth mismatch between checkpoint and request.
    assert_eq!(mslc(&["encode", "-i", s(&input), "-d", "6", "--occupancy", s(&occ), "-o", s(&c)], &[]).status.code(), Some(1));
}

#[test]
fn ablate_and_probe_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = job(dir.path(), "OTBCC");
    let out = dir.path().join("abl");
    ok(&["ablate", "-c", s(&cfg), "-o", s(&out)]);
    let occ = std::fs::read_to_string(out.join("ablation_occupancy.csv")).unwrap();
    for v in ["histogram", "O", "OT", "OTB", "OTBCC"] {
        assert!(occ.lines().any(|l| l.starts_with(&format!("5,{v},"))), "{v}");
    }
    let int = std::fs::read_to_string(out.join("ablation_intensity.csv")).unwrap();
    assert_eq!(int.lines().count(), 1 + 2 * 3);

    let o = ok(&["probe-leaf-offsets", "-c", s(&cfg), "-d", "8"]);
    assert!(String::from_utf8(o.stdout).unwrap().starts_with("sweep,raw_bytes,compressed_bytes\n"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(mslc(&["encode"], &[]).status.code(), Some(1));
    assert_eq!(mslc(&["no-such-command"], &[]).status.code(), Some(1));
    assert_eq!(mslc(&["--help"], &[]).status.code(), Some(0));

    let bad = d.join("bad.msc");
    std::fs::write(&bad, b"MSC1\x01\x00\x07garbage").unwrap();
    assert_eq!(mslc(&["info", s(&bad)], &[]).status.code(), Some(2));

    let cfg = job(d, "O");
    let o = mslc(&["train", "-c", s(&cfg)], &[("MSLC_SCHEDULE__LR", "1e300")]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

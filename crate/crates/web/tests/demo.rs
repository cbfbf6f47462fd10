use mslc_web::{probe, quantize_sweep, rd_points};

#[test]
fn quantization_error_within_bound() {
    for d in [6, 9, 12] {
        let q = quantize_sweep(5, d).unwrap();
        assert!(q.max_error <= q.bound + 1e-9, "{d}: {} > {}", q.max_error, q.bound);
        assert!(q.cells <= q.points);
        assert_eq!(q.quantized_xy.len(), 2 * q.cells);
        assert_eq!(q.original_xy.len(), 2 * q.points);
    }
}

#[test]
fn rd_curve_gains_quality_with_depth() {
    let rows = rd_points(1, 8, 10).unwrap();
    assert_eq!(rows.iter().map(|r| r.depth).collect::<Vec<_>>(), vec![8, 9, 10]);
    for w in rows.windows(2) {
        assert!(w[1].chamfer <= w[0].chamfer);
        assert!(w[1].psnr >= w[0].psnr);
        assert!(w[1].bpp_spatial >= w[0].bpp_spatial);
    }
    assert!(rd_points(1, 10, 8).is_err());
}

#[test]
fn leaf_offsets_resist_deflate() {
    let p = probe(2, 14).unwrap();
    assert!(p.raw_bytes > 0);
    assert!(p.ratio >= 0.99, "{}", p.ratio);
}

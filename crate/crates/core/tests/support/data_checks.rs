//! Synthetic data, file formats and frame export.

#![allow(dead_code)]

use tempee::data::{
    decode_est, decode_pgm, encode_est, encode_pgm, gen_synthetic, read_est, render_blobs,
    synth_tracks, write_est, Regime, ValueSpace, DBZ_MAX,
};

const EDGE: usize = 96;
const FRAMES: usize = 40;

/// Intensity-weighted centroid `(row, col)` of one frame.
fn centroid(frame: &[f32]) -> Option<(f64, f64)> {
    let (mut m, mut sy, mut sx) = (0.0, 0.0, 0.0);
    for (i, &v) in frame.iter().enumerate() {
        let v = v as f64;
        m += v;
        sy += v * (i / EDGE) as f64;
        sx += v * (i % EDGE) as f64;
    }
    (m > 0.0).then(|| (sy / m, sx / m))
}

pub fn stationary_cells_move_at_constant_velocity() {
    let mut tracked = 0;
    for regime in [Regime::SparseStationary, Regime::DenseStationary] {
        for seed in 0..10 {
            for blob in synth_tracks(regime, FRAMES, EDGE, EDGE, seed).unwrap() {
                let frames = render_blobs(std::slice::from_ref(&blob), FRAMES, EDGE, EDGE);
                let path: Vec<(f64, f64)> = frames
                    .chunks(EDGE * EDGE)
                    .map(|f| centroid(f).expect("cell is visible"))
                    .collect();
                let steps: Vec<(f64, f64)> = path
                    .windows(2)
                    .map(|p| (p[1].0 - p[0].0, p[1].1 - p[0].1))
                    .collect();
                let n = steps.len() as f64;
                let mean = steps
                    .iter()
                    .fold((0.0, 0.0), |a, s| (a.0 + s.0 / n, a.1 + s.1 / n));
                for s in &steps {
                    let dev = ((s.0 - mean.0).powi(2) + (s.1 - mean.1).powi(2)).sqrt();
                    assert!(
                        dev <= 0.5,
                        "{regime} seed {seed}: step {s:?} vs mean {mean:?}"
                    );
                }
                // the measured motion is the specified motion
                assert!(
                    (mean.0 - blob.velocity.0).abs() < 0.05
                        && (mean.1 - blob.velocity.1).abs() < 0.05
                );
                tracked += 1;
            }
        }
    }
    assert!(tracked > 50);
}

pub fn sequences_are_deterministic_and_in_range() {
    for regime in Regime::ALL {
        let a = gen_synthetic(regime, 20, 20, EDGE, EDGE, 9).unwrap();
        let b = gen_synthetic(regime, 20, 20, EDGE, EDGE, 9).unwrap();
        assert_eq!(encode_est(&a).unwrap(), encode_est(&b).unwrap());
        assert_eq!(a.len(), 40);
        assert_eq!(a.value_space, ValueSpace::Dbz);
        assert!(a
            .values()
            .iter()
            .all(|v| (0.0..=DBZ_MAX as f32).contains(v)));
    }
}

pub fn est_files_round_trip_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for regime in Regime::ALL {
        let seq = gen_synthetic(regime, 4, 4, 32, 32, 3).unwrap();
        for s in [seq.clone(), seq.to_pixel().unwrap()] {
            let path = dir.path().join("s.est");
            write_est(&path, &s).unwrap();
            let back = read_est(&path).unwrap();
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(back.values()), bits(s.values()));
            assert_eq!(
                (back.seed, back.dt_minutes, back.value_space),
                (s.seed, s.dt_minutes, s.value_space)
            );
        }
    }
}

pub fn corrupted_est_is_rejected() {
    let seq = gen_synthetic(Regime::SparseStationary, 2, 2, 32, 32, 1).unwrap();
    let bytes = encode_est(&seq).unwrap();
    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(b"ESTX");
    assert!(decode_est(&bad).unwrap_err().to_string().contains("EST1"));
    for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(decode_est(&bytes[..cut]).is_err(), "cut at {cut}");
    }
}

pub fn frames_export_as_pgm() {
    let seq = gen_synthetic(Regime::DenseStationary, 2, 2, 64, 48, 5)
        .unwrap()
        .to_pixel()
        .unwrap();
    for f in seq.frames() {
        let pixels: Vec<u8> = f.iter().map(|&v| v as u8).collect();
        let bytes = encode_pgm(&pixels, 64, 48).unwrap();
        assert!(bytes.starts_with(b"P5"));
        let (h, w, back) = decode_pgm(&bytes).unwrap();
        assert_eq!((h, w), (64, 48));
        assert_eq!(back, pixels);
    }
}

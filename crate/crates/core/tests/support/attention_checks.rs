//! Attention forwards against straight-line loop reimplementations.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempee::attention::{
    mhsa_forward_detailed, msta_forward_detailed, AttentionConfig, MhsaWeights, MstaWeights,
};
use tempee::tensor::Tensor;

type Map = Vec<Vec<Vec<f64>>>; // [row][col][channel]

fn to_map(x: &Tensor<f32>) -> Map {
    let s = x.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    (0..h)
        .map(|i| {
            (0..w)
                .map(|j| (0..c).map(|k| x.at(&[k, i, j]) as f64).collect())
                .collect()
        })
        .collect()
}

fn mat(t: &Tensor<f32>) -> Vec<Vec<f64>> {
    let n = t.shape()[0];
    (0..n)
        .map(|i| (0..n).map(|j| t.at(&[i, j]) as f64).collect())
        .collect()
}

fn project(x: &[f64], m: &[Vec<f64>]) -> Vec<f64> {
    (0..m[0].len())
        .map(|o| x.iter().zip(m).map(|(a, row)| a * row[o]).sum())
        .collect()
}

/// Multi-head attention over `tokens`; returns outputs and per-head
/// probability rows.
fn attend_loop(
    tokens: &[Vec<f64>],
    wq: &[Vec<f64>],
    wk: &[Vec<f64>],
    wv: &[Vec<f64>],
    heads: usize,
) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let c = tokens[0].len();
    let dh = c / heads;
    let q: Vec<_> = tokens.iter().map(|t| project(t, wq)).collect();
    let k: Vec<_> = tokens.iter().map(|t| project(t, wk)).collect();
    let v: Vec<_> = tokens.iter().map(|t| project(t, wv)).collect();
    let n = tokens.len();
    let mut out = vec![vec![0.0; c]; n];
    let mut probs = vec![vec![vec![0.0; n]; n]; heads];
    for hd in 0..heads {
        let cols = hd * dh..(hd + 1) * dh;
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| cols.clone().map(|a| q[i][a] * k[j][a]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for j in 0..n {
                let p = e[j] / z;
                probs[hd][i][j] = p;
                for a in cols.clone() {
                    out[i][a] += p * v[j][a];
                }
            }
        }
    }
    (out, probs)
}

fn mhsa_loop(x: &Map, w: &MhsaWeights<f32>, heads: usize) -> Map {
    let (h, wd) = (x.len(), x[0].len());
    let tokens: Vec<Vec<f64>> = x.iter().flatten().cloned().collect();
    let (a, _) = attend_loop(&tokens, &mat(&w.wq), &mat(&w.wk), &mat(&w.wv), heads);
    let wp = mat(&w.wp);
    let mut out = x.clone();
    for i in 0..h {
        for j in 0..wd {
            let y = project(&a[i * wd + j], &wp);
            for (o, v) in out[i][j].iter_mut().zip(y) {
                *o += v;
            }
        }
    }
    out
}

fn msta_loop(x: &Map, w: &MstaWeights<f32>, cfg: &AttentionConfig) -> Map {
    let (h, wd, c) = (x.len(), x[0].len(), x[0][0].len());
    let (g, gp) = (cfg.g, cfg.g_prime);

    let mut att1 = x.clone();
    for wi in 0..h / g {
        for wj in 0..wd / g {
            let cells: Vec<(usize, usize)> = (0..g)
                .flat_map(|a| (0..g).map(move |b| (wi * g + a, wj * g + b)))
                .collect();
            let tokens: Vec<Vec<f64>> = cells.iter().map(|&(i, j)| x[i][j].clone()).collect();
            let l1 = &w.level1;
            let (a, _) = attend_loop(&tokens, &mat(&l1.wq), &mat(&l1.wk), &mat(&l1.wv), cfg.heads);
            for (t, &(i, j)) in cells.iter().enumerate() {
                for ch in 0..c {
                    att1[i][j][ch] += a[t][ch];
                }
            }
        }
    }

    let (hp, wp) = (h / gp, wd / gp);
    let mut pooled = Vec::new();
    for pi in 0..hp {
        for pj in 0..wp {
            let cell: Vec<f64> = (0..c)
                .map(|ch| {
                    let vals: Vec<f64> = (0..gp)
                        .flat_map(|a| (0..gp).map(move |b| (pi * gp + a, pj * gp + b)))
                        .map(|(i, j)| att1[i][j][ch])
                        .collect();
                    let mx = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let avg = vals.iter().sum::<f64>() / vals.len() as f64;
                    0.5 * (cfg.alpha * mx + cfg.beta * avg)
                })
                .collect();
            pooled.push(cell);
        }
    }
    let l2 = &w.level2;
    let (global, _) = attend_loop(&pooled, &mat(&l2.wq), &mat(&l2.wk), &mat(&l2.wv), cfg.heads);

    let (wm, wn) = (mat(&w.wm), mat(&w.wn));
    let mut out = x.clone();
    for i in 0..h {
        for j in 0..wd {
            let g2 = &global[(i / gp) * wp + j / gp];
            let fused: Vec<f64> = (0..c).map(|ch| att1[i][j][ch] + g2[ch]).collect();
            let y = project(&project(&fused, &wm), &wn);
            for (o, v) in out[i][j].iter_mut().zip(y) {
                if cfg.residual {
                    *o += v;
                } else {
                    *o = v;
                }
            }
        }
    }
    out
}

fn max_diff(got: &Tensor<f32>, want: &Map) -> f64 {
    let mut worst = 0.0f64;
    for (i, row) in want.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            for (k, &v) in cell.iter().enumerate() {
                worst = worst.max((got.at(&[k, i, j]) as f64 - v).abs());
            }
        }
    }
    worst
}

fn random_map(rng: &mut ChaCha8Rng) -> Tensor<f32> {
    Tensor::randn(&[2, 8, 8], 1.0, rng)
}

pub fn mhsa_matches_loop_reference() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_map(&mut rng);
        let w = MhsaWeights::random(2, &mut rng);
        for heads in [1, 2] {
            let cfg = AttentionConfig {
                heads,
                ..AttentionConfig::default()
            };
            let got = mhsa_forward_detailed(&x, &w, &cfg).unwrap();
            let d = max_diff(&got.output, &mhsa_loop(&to_map(&x), &w, heads));
            assert!(d < 1e-5, "seed {seed} heads {heads}: {d}");
        }
    }
}

pub fn msta_matches_loop_reference() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_map(&mut rng);
        let w = MstaWeights::random(2, &mut rng);
        for (heads, g, gp, residual) in [(1, 4, 2, true), (2, 2, 4, false), (1, 8, 8, true)] {
            let cfg = AttentionConfig {
                heads,
                g,
                g_prime: gp,
                alpha: rng.random_range(0.0..2.0),
                beta: rng.random_range(0.0..2.0),
                residual,
                ..AttentionConfig::default()
            };
            let got = msta_forward_detailed(&x, &w, &cfg).unwrap();
            let d = max_diff(&got.output, &msta_loop(&to_map(&x), &w, &cfg));
            assert!(d < 1e-5, "seed {seed} cfg {cfg:?}: {d}");
        }
    }
}

fn assert_rows_stochastic(p: &Tensor<f32>) {
    let n = *p.shape().last().unwrap();
    for row in p.data().chunks(n) {
        let s: f64 = row.iter().map(|&v| v as f64).sum();
        assert!((s - 1.0).abs() < 1e-6, "row sums to {s}");
        assert!(row.iter().all(|&v| v >= 0.0));
    }
}

pub fn attention_rows_sum_to_one() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f32>::randn(&[2, 8, 8], 5.0, &mut rng);
        let cfg = AttentionConfig {
            heads: 2,
            g: 4,
            ..AttentionConfig::default()
        };
        let mh = mhsa_forward_detailed(&x, &MhsaWeights::random(2, &mut rng), &cfg).unwrap();
        assert_eq!(mh.attention.shape(), &[2, 64, 64]);
        assert_rows_stochastic(&mh.attention);
        let ms = msta_forward_detailed(&x, &MstaWeights::random(2, &mut rng), &cfg).unwrap();
        assert_eq!(ms.attention1.shape(), &[4 * 2, 16, 16]);
        assert_eq!(ms.attention2.shape(), &[2, 16, 16]);
        assert_rows_stochastic(&ms.attention1);
        assert_rows_stochastic(&ms.attention2);
    }
}

pub fn single_token_attention_weight_is_exactly_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for heads in [1, 2, 4] {
        let x = Tensor::<f32>::randn(&[4, 1, 1], 10.0, &mut rng);
        let cfg = AttentionConfig {
            heads,
            ..AttentionConfig::default()
        };
        let out = mhsa_forward_detailed(&x, &MhsaWeights::random(4, &mut rng), &cfg).unwrap();
        assert_eq!(out.attention.shape(), &[heads, 1, 1]);
        assert!(out.attention.data().iter().all(|&p| p == 1.0));
    }
}

pub fn window_partition_matches_cell_enumeration() {
    use tempee::attention::{window_merge, window_partition};
    use tempee::tensor::Tape;
    let (h, w, c, g) = (4, 4, 1, 2);
    let values: Vec<f32> = (0..h * w).map(|i| i as f32).collect();
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_vec(&[h, w, c], values.clone()).unwrap());
    let parts = window_partition(&mut tape, x, g).unwrap();
    assert_eq!(tape.shape(parts), &[4, 4, 1]);
    let got = tape.value(parts).data().to_vec();
    let mut want = Vec::new();
    for wi in 0..h / g {
        for wj in 0..w / g {
            for a in 0..g {
                for b in 0..g {
                    want.push(((wi * g + a) * w + wj * g + b) as f32);
                }
            }
        }
    }
    assert_eq!(got, want);
    let back = window_merge(&mut tape, parts, h, w, g).unwrap();
    assert_eq!(tape.value(back).data(), values.as_slice());
}

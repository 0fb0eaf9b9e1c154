//! Model-level properties: one-step decoding, encoder wiring and scale.

#![allow(dead_code)]
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tempee::attention::AttentionConfig;
use tempee::data::{EchoSequence, ValueSpace};
use tempee::model::{rectify, FeatureVolume, ModelConfig, Prompts, TempEE, VolumeSpace};
use tempee::sampling::PromptMask;
use tempee::tensor::{kernels, Tensor};

fn tiny() -> ModelConfig {
    ModelConfig {
        n_in: 4,
        k_out: 4,
        image_edge: 24,
        patch: 6,
        d_model: 8,
        te_blocks: 2,
        se_blocks: 2,
        tsd_blocks: 2,
        attention: AttentionConfig {
            heads: 2,
            g: 2,
            g_prime: 2,
            ..AttentionConfig::default()
        },
        ..ModelConfig::default()
    }
}

fn frames(n: usize, edge: usize, seed: u64) -> EchoSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = (0..n * edge * edge)
        .map(|_| rng.random_range(0.0..255.0f32))
        .collect();
    EchoSequence::new(v, n, edge, edge, ValueSpace::Pixel).unwrap()
}

fn jitter(t: &mut Tensor<f32>, rng: &mut ChaCha8Rng) {
    for v in t.data_mut() {
        *v += rng.random_range(-0.5..0.5f32);
    }
}

pub fn each_frame_ignores_the_other_frames_head_weights() {
    let base = TempEE::<f32>::new(tiny(), 7).unwrap();
    let obs = frames(4, 24, 1);
    let pr = Prompts::hidden(4, 24, 24).unwrap();
    let y0 = base.extrapolate(&obs, &pr).unwrap();
    assert_eq!(base.extrapolate(&obs, &pr).unwrap(), y0);
    let (k, p2) = (4, 36);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..k {
        let mut m = base.clone();
        let d = m.config().d_model;
        let w = m.params_mut().get_mut("head.w").unwrap();
        for r in 0..d {
            for pix in 0..p2 {
                w.data_mut()[r * p2 * k + pix * k + i] += rng.random_range(-1.0..1.0f32);
            }
        }
        let b = m.params_mut().get_mut("head.b").unwrap();
        for pix in 0..p2 {
            b.data_mut()[pix * k + i] += 0.3;
        }
        let y = m.extrapolate(&obs, &pr).unwrap();
        for j in 0..k {
            let same = y
                .frame(j)
                .iter()
                .zip(y0.frame(j))
                .all(|(a, b)| a.to_bits() == b.to_bits());
            assert_eq!(
                same,
                j != i,
                "perturbing frame {i} output, checking frame {j}"
            );
        }
    }
}

pub fn masked_spatial_channels_decouple_the_spatial_encoder() {
    let cfg = tiny();
    let dn = cfg.folded_channels();
    let obs = frames(4, 24, 2);
    let pr = Prompts::from_source(
        &frames(4, 24, 3),
        PromptMask::from_keep(vec![true, false, false, true]),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let base = TempEE::<f32>::new(cfg, 9).unwrap();

    let perturbed = |m: &TempEE<f32>, rng: &mut ChaCha8Rng| {
        let mut m = m.clone();
        for (name, t) in m.params_mut().iter_mut() {
            if name.starts_with("se.") {
                jitter(t, rng);
            }
        }
        m
    };
    let moved = perturbed(&base, &mut rng);
    assert_ne!(
        moved.extrapolate(&obs, &pr).unwrap(),
        base.extrapolate(&obs, &pr).unwrap()
    );

    let mut masked = base.clone();
    let w = masked.params_mut().get_mut("dec_in.w").unwrap();
    let d = w.shape()[1];
    w.data_mut()[dn * d..2 * dn * d].fill(0.0);
    let y = masked.extrapolate(&obs, &pr).unwrap();
    let y2 = perturbed(&masked, &mut rng).extrapolate(&obs, &pr).unwrap();
    assert!(y
        .values()
        .iter()
        .zip(y2.values())
        .all(|(a, b)| a.to_bits() == b.to_bits()));
}

pub fn all_hidden_prompts_give_finite_output_at_default_scale() {
    let cfg = ModelConfig {
        d_model: 8,
        te_blocks: 1,
        se_blocks: 1,
        tsd_blocks: 1,
        attention: AttentionConfig {
            heads: 2,
            ..AttentionConfig::default()
        },
        ..ModelConfig::default()
    };
    let m = TempEE::<f32>::new(cfg, 0).unwrap();
    let y = m
        .extrapolate(&frames(20, 192, 4), &Prompts::hidden(20, 192, 192).unwrap())
        .unwrap();
    assert_eq!((y.len(), y.height(), y.width()), (20, 192, 192));
    assert!(y.values().iter().all(|v| v.is_finite()));
}

fn layer_norm_rows(x: &[f64], c: usize, g: &[f32], b: &[f32], eps: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(c) {
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
        for (i, v) in row.iter().enumerate() {
            out.push((v - mean) / (var + eps).sqrt() * g[i] as f64 + b[i] as f64);
        }
    }
    out
}

/// One spatial block written out with explicit loops on an `h×w×c`
/// channel-last map.
fn reference_spatial_block(
    x: &[f64],
    h: usize,
    w: usize,
    c: usize,
    heads: usize,
    get: &dyn Fn(&str) -> Vec<f32>,
    eps: f64,
) -> Vec<f64> {
    let n = h * w;
    let dh = c / heads;
    let ln1 = layer_norm_rows(x, c, &get("se.0.ln1.g"), &get("se.0.ln1.b"), eps);
    let proj = |src: &[f64], m: &[f32]| -> Vec<f64> {
        let mut out = vec![0.0; n * c];
        for t in 0..n {
            for j in 0..c {
                out[t * c + j] = (0..c).map(|i| src[t * c + i] * m[i * c + j] as f64).sum();
            }
        }
        out
    };
    let q = proj(&ln1, &get("se.0.attn.wq"));
    let k = proj(&ln1, &get("se.0.attn.wk"));
    let v = proj(&ln1, &get("se.0.attn.wv"));
    let mut a = vec![0.0; n * c];
    for hd in 0..heads {
        for t in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|s| {
                    (0..dh)
                        .map(|e| q[t * c + hd * dh + e] * k[s * c + hd * dh + e])
                        .sum::<f64>()
                        / (dh as f64).sqrt()
                })
                .collect();
            let mx = scores.iter().cloned().fold(f64::MIN, f64::max);
            let ex: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
            let z: f64 = ex.iter().sum();
            for e in 0..dh {
                a[t * c + hd * dh + e] = (0..n).map(|s| ex[s] / z * v[s * c + hd * dh + e]).sum();
            }
        }
    }
    let a = proj(&a, &get("se.0.attn.wp"));
    let x1: Vec<f64> = x.iter().zip(&a).map(|(p, q)| p + q).collect();
    let ln2 = layer_norm_rows(&x1, c, &get("se.0.ln2.g"), &get("se.0.ln2.b"), eps);
    let wconv = get("se.0.ffn.w");
    let bconv = get("se.0.ffn.b");
    let mut out = x1.clone();
    for i in 0..h {
        for j in 0..w {
            for co in 0..c {
                let mut acc = bconv[co] as f64;
                for ci in 0..c {
                    for di in 0..3 {
                        for dj in 0..3 {
                            let (ii, jj) =
                                (i as isize + di as isize - 1, j as isize + dj as isize - 1);
                            if ii < 0 || jj < 0 || ii >= h as isize || jj >= w as isize {
                                continue;
                            }
                            let src = ln2[(ii as usize * w + jj as usize) * c + ci].max(0.0);
                            acc += src * wconv[((co * c + ci) * 3 + di) * 3 + dj] as f64;
                        }
                    }
                }
                out[(i * w + j) * c + co] += acc;
            }
        }
    }
    out
}

pub fn spatial_block_matches_loop_reference() {
    let cfg = ModelConfig {
        n_in: 2,
        k_out: 1,
        image_edge: 8,
        patch: 1,
        d_model: 2,
        te_blocks: 0,
        se_blocks: 1,
        tsd_blocks: 0,
        attention: AttentionConfig {
            heads: 2,
            ..AttentionConfig::default()
        },
        ..ModelConfig::default()
    };
    let (h, w, c) = (8, 8, 4);
    let m = TempEE::<f32>::new(cfg.clone(), 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = Tensor::<f32>::randn(&[c, h, w], 1.0, &mut rng);
    let vol = FeatureVolume::new(x.clone(), VolumeSpace::Rectified { time: 2 }).unwrap();
    let got = m.se_forward(&vol).unwrap();

    let xl: Vec<f64> = kernels::permute(&x, &[1, 2, 0])
        .unwrap()
        .data()
        .iter()
        .map(|&v| v as f64)
        .collect();
    let get = |name: &str| m.params().get(name).unwrap().data().to_vec();
    let want = reference_spatial_block(&xl, h, w, c, 2, &get, cfg.ln_eps);
    for i in 0..h {
        for j in 0..w {
            for ch in 0..c {
                let g = got.values.at(&[ch, i, j]) as f64;
                let r = want[(i * w + j) * c + ch];
                assert!((g - r).abs() < 1e-5, "({ch},{i},{j}): {g} vs {r}");
            }
        }
    }
}

pub fn rectified_embedding_feeds_the_spatial_encoder() {
    let m = TempEE::<f32>::new(tiny(), 2).unwrap();
    let emb = m.patch_embed(&frames(4, 24, 5)).unwrap();
    let folded = rectify(&emb).unwrap();
    assert_eq!(folded.channels(), tiny().folded_channels());
    assert_eq!(
        m.se_forward(&folded).unwrap().space,
        VolumeSpace::Rectified { time: 4 }
    );
}

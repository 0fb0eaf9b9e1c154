//! Metrics against naive nested-loop oracles on random frames.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempee::metrics::{
    categorical_scores, contingency, mse, perceptual_distance, psnr, ssim, EtsForm, FarForm,
    RandomConvPyramid, ScoreOptions, SsimConfig, SsimWindow, DEFAULT_TAUS,
};

const E: usize = 16;

fn frame(rng: &mut ChaCha8Rng) -> Vec<f32> {
    // integer intensities exercise threshold ties
    (0..E * E)
        .map(|_| rng.random_range(0..=255u8) as f32)
        .collect()
}

/// A second frame that shares structure with `a`.
fn partner(a: &[f32], rng: &mut ChaCha8Rng) -> Vec<f32> {
    a.iter()
        .map(|&v| {
            (v + rng.random_range(-40.0f32..40.0))
                .round()
                .clamp(0.0, 255.0)
        })
        .collect()
}

fn pairs() -> Vec<(Vec<f32>, Vec<f32>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..100)
        .map(|i| {
            let a = frame(&mut rng);
            let b = if i % 2 == 0 {
                partner(&a, &mut rng)
            } else {
                frame(&mut rng)
            };
            (a, b)
        })
        .collect()
}

fn px(f: &[f32], r: usize, c: usize) -> f64 {
    f[r * E + c] as f64
}

fn naive_mse(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0;
    for r in 0..E {
        for c in 0..E {
            s += (px(a, r, c) - px(b, r, c)).powi(2);
        }
    }
    s / (E * E) as f64
}

/// Two-pass statistics over the window at `(r0, c0)` of edge `win`.
fn naive_window_ssim(
    a: &[f32],
    b: &[f32],
    r0: usize,
    c0: usize,
    win: usize,
    cfg: &SsimConfig,
) -> f64 {
    let n = (win * win) as f64;
    let (mut mx, mut my) = (0.0, 0.0);
    for r in r0..r0 + win {
        for c in c0..c0 + win {
            mx += px(a, r, c);
            my += px(b, r, c);
        }
    }
    mx /= n;
    my /= n;
    let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
    for r in r0..r0 + win {
        for c in c0..c0 + win {
            let (dx, dy) = (px(a, r, c) - mx, px(b, r, c) - my);
            vx += dx * dx;
            vy += dy * dy;
            cov += dx * dy;
        }
    }
    vx /= n;
    vy /= n;
    cov /= n;
    ((2.0 * mx * my + cfg.c1) * (2.0 * cov + cfg.c2))
        / ((mx * mx + my * my + cfg.c1) * (vx + vy + cfg.c2))
}

fn naive_ssim(a: &[f32], b: &[f32], cfg: &SsimConfig) -> f64 {
    match cfg.window {
        SsimWindow::Global => naive_window_ssim(a, b, 0, 0, E, cfg),
        SsimWindow::Sliding(win) => {
            let mut total = 0.0;
            let mut count = 0;
            for r in 0..=E - win {
                for c in 0..=E - win {
                    total += naive_window_ssim(a, b, r, c, win, cfg);
                    count += 1;
                }
            }
            total / count as f64
        }
    }
}

fn close(got: f64, want: f64, what: &str) {
    let tol = 1e-6 * want.abs().max(1.0);
    assert!((got - want).abs() <= tol, "{what}: {got} vs {want}");
}

pub fn image_metrics_match_nested_loops() {
    for (i, (a, b)) in pairs().iter().enumerate() {
        let m = naive_mse(a, b);
        close(mse(a, b).unwrap(), m, &format!("mse {i}"));
        close(
            psnr(a, b, 255.0).unwrap(),
            10.0 * (255.0f64 * 255.0 / m).log10(),
            &format!("psnr {i}"),
        );
        for window in [
            SsimWindow::Sliding(8),
            SsimWindow::Sliding(3),
            SsimWindow::Global,
        ] {
            let cfg = SsimConfig {
                window,
                ..SsimConfig::default()
            };
            close(
                ssim(a, b, E, E, &cfg).unwrap(),
                naive_ssim(a, b, &cfg),
                &format!("ssim {i} {window:?}"),
            );
        }
    }
}

pub fn categorical_scores_match_nested_loops() {
    for (i, (a, b)) in pairs().iter().enumerate() {
        for tau in DEFAULT_TAUS {
            let level = (255.0 * tau / 70.0 + 0.5).floor();
            let (mut tp, mut fn_, mut fp, mut tn) = (0.0, 0.0, 0.0, 0.0);
            for r in 0..E {
                for c in 0..E {
                    match (px(a, r, c) >= level, px(b, r, c) >= level) {
                        (true, true) => tp += 1.0,
                        (false, true) => fn_ += 1.0,
                        (true, false) => fp += 1.0,
                        (false, false) => tn += 1.0,
                    }
                }
            }
            let t = contingency(a, b, tau).unwrap();
            assert_eq!(
                (t.tp as f64, t.fn_ as f64, t.fp as f64, t.tn as f64),
                (tp, fn_, fp, tn),
                "pair {i} tau {tau}"
            );
            let standard = ScoreOptions {
                far: FarForm::Standard,
                ets: EtsForm::Standard,
            };
            let s = categorical_scores(&t, standard);
            let pairs = [
                (s.pod, tp / (tp + fn_)),
                (s.far, fp / (tp + fp)),
                (s.csi, tp / (tp + fn_ + fp)),
            ];
            for (got, want) in pairs {
                match got {
                    Some(g) => close(g, want, &format!("score pair {i} tau {tau}")),
                    None => assert!(want.is_nan()),
                }
            }
            let n = tp + fn_ + fp + tn;
            let chance = (tp + fn_) * (tp + fp) / n;
            let ets = (tp - chance) / (tp + fn_ + fp - chance);
            match s.ets {
                Some(g) => close(g, ets, "ets"),
                None => assert!(!ets.is_finite()),
            }
            let printed = categorical_scores(
                &t,
                ScoreOptions {
                    far: FarForm::Printed,
                    ets: EtsForm::Printed,
                },
            );
            if let Some(g) = printed.far {
                close(g, tp / (tp + fp), "printed far");
            }
            if let Some(g) = printed.ets {
                close(g, tp / (tp + fn_ + fp - tn), "printed ets");
            }
        }
    }
}

pub fn perfect_forecast_scores() {
    for (a, _) in pairs().iter().take(20) {
        for tau in DEFAULT_TAUS {
            let t = contingency(a, a, tau).unwrap();
            let s = categorical_scores(&t, ScoreOptions::default());
            if t.tp > 0 {
                assert_eq!((s.pod, s.csi, s.far), (Some(1.0), Some(1.0), Some(0.0)));
            }
        }
        assert_eq!(mse(a, a).unwrap(), 0.0);
        assert_eq!(psnr(a, a, 255.0).unwrap(), f64::INFINITY);
        close(
            ssim(a, a, E, E, &SsimConfig::default()).unwrap(),
            1.0,
            "ssim self",
        );
    }
}

pub fn perceptual_distance_obeys_triangle_inequality() {
    let pyramid = RandomConvPyramid::new(5);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..50 {
        let x = frame(&mut rng);
        let y = partner(&x, &mut rng);
        let z = frame(&mut rng);
        let d = |a: &[f32], b: &[f32]| perceptual_distance(a, b, E, E, &pyramid).unwrap();
        let (xz, xy, yz) = (d(&x, &z), d(&x, &y), d(&y, &z));
        assert!(xz <= xy + yz + 1e-9, "{xz} > {xy} + {yz}");
        assert!(xy >= 0.0 && (d(&x, &y) - d(&y, &x)).abs() < 1e-9);
        assert_eq!(d(&x, &x), 0.0);
    }
}
